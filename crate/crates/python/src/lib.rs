//! Python bindings for `async_opt`.

// Python-facing functions take their keyword arguments one by one.
#![allow(clippy::too_many_arguments)]

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use async_opt::bounds::{self, Setting};
use async_opt::config::ExperimentConfig;
use async_opt::delays;
use async_opt::engine::{self, HistoryMode};
use async_opt::experiment;
use async_opt::minibatch::{self, MiniBatchConfig, Strictness};
use async_opt::optimizers::{build_inner, Constants, InnerKind, VanillaAsyncSgd};
use async_opt::problems;
use async_opt::sweep::{self, SweepSchedule};
use async_opt::{verify, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for async_opt::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &v)
}

fn parse_enum<T: serde::de::DeserializeOwned>(name: &str, what: &str) -> PyResult<T> {
    serde_json::from_value(Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {name:?}")))
}

/// A feasible delay sequence `d_1..d_T` with `d_t <= t - 1`.
#[pyclass(module = "async_opt", frozen)]
struct DelaySequence {
    inner: delays::DelaySequence,
}

#[pymethods]
impl DelaySequence {
    #[new]
    fn new(delays: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: delays::DelaySequence::new(delays).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: delays::DelaySequence::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let s = self.inner.stats();
        format!(
            "DelaySequence(T={}, tau_avg={:.3}, tau_med={}, tau_max={})",
            s.horizon, s.tau_avg, s.tau_med, s.tau_max
        )
    }

    #[getter]
    fn delays(&self) -> Vec<usize> {
        self.inner.as_slice().to_vec()
    }

    /// Machine count when the sequence came from simulated workers.
    #[getter]
    fn machines(&self) -> Option<usize> {
        match self.inner.origin() {
            delays::DelayOrigin::MachineSimulated { machines } => Some(*machines),
            delays::DelayOrigin::Scripted => None,
        }
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, &self.inner.stats())
    }

    fn quantile(&self, q: f64) -> PyResult<usize> {
        self.inner.stats().quantile(q).py()
    }

    fn quantile_points<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, &self.inner.stats().quantile_points())
    }

    /// `(average, bound, holds)` for machine-simulated sequences, else `None`.
    fn machine_bound(&self) -> Option<(f64, f64, bool)> {
        match bounds::machine_bound_check(&self.inner) {
            bounds::MachineBoundReport::Checked {
                average_delay,
                bound,
                holds,
                ..
            } => Some((average_delay, bound, holds)),
            bounds::MachineBoundReport::NotApplicable => None,
        }
    }
}

#[pyfunction]
fn constant_delay(horizon: usize, tau: usize) -> PyResult<DelaySequence> {
    Ok(DelaySequence {
        inner: delays::constant_delay(horizon, tau).py()?,
    })
}

#[pyfunction]
fn staircase(horizon: usize, tau_max: usize) -> PyResult<DelaySequence> {
    Ok(DelaySequence {
        inner: delays::staircase_adversarial(horizon, tau_max).py()?,
    })
}

#[pyfunction]
fn half_outlier(horizon: usize) -> PyResult<DelaySequence> {
    Ok(DelaySequence {
        inner: delays::half_outlier(horizon).py()?,
    })
}

#[pyfunction]
fn one_fast_machine(n: usize, machines: usize) -> PyResult<DelaySequence> {
    Ok(DelaySequence {
        inner: delays::one_fast_machine(n, machines).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (horizon, machines, base = 4.06, seed = 0))]
fn simulate_workers(horizon: usize, machines: usize, base: f64, seed: u64) -> PyResult<DelaySequence> {
    let schedule = delays::WorkerSchedule::poisson_mixture(machines, base, seed);
    Ok(DelaySequence {
        inner: delays::simulate_workers(horizon, &schedule).py()?,
    })
}

#[pyclass(module = "async_opt", frozen)]
struct Problem {
    inner: problems::Problem,
}

#[pymethods]
impl Problem {
    #[staticmethod]
    #[pyo3(signature = (dimension, beta, w_star = None))]
    fn quadratic(dimension: usize, beta: f64, w_star: Option<Vec<f64>>) -> PyResult<Self> {
        let center = w_star.unwrap_or_else(|| vec![0.0; dimension]);
        Ok(Self {
            inner: problems::make_quadratic(dimension, beta, &center).py()?,
        })
    }

    #[staticmethod]
    fn nonconvex_smooth(dimension: usize, beta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: problems::make_nonconvex_smooth(dimension, beta).py()?,
        })
    }

    #[staticmethod]
    fn convex_lipschitz(dimension: usize, lipschitz: f64, diameter: f64) -> PyResult<Self> {
        Ok(Self {
            inner: problems::make_convex_lipschitz(dimension, lipschitz, diameter).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (samples, dimension, l2, seed = 0))]
    fn logistic(samples: usize, dimension: usize, l2: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: problems::make_logistic(samples, dimension, l2, seed).py()?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Problem({}, dimension={})", self.inner.name(), self.inner.dimension())
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn smoothness(&self) -> Option<f64> {
        self.inner.smoothness()
    }

    #[getter]
    fn lipschitz(&self) -> Option<f64> {
        self.inner.lipschitz()
    }

    #[getter]
    fn optimal_value(&self) -> Option<f64> {
        self.inner.optimal_value()
    }

    fn value(&self, w: Vec<f64>) -> PyResult<f64> {
        self.check(&w)?;
        Ok(self.inner.value(&w))
    }

    fn gradient(&self, w: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&w)?;
        Ok(self.inner.gradient(&w))
    }

    fn suboptimality(&self, w: Vec<f64>) -> PyResult<Option<f64>> {
        self.check(&w)?;
        Ok(self.inner.suboptimality(&w))
    }

    /// `beta`, `F`, `D`, `G` as far as they follow from the problem and `w1`.
    fn constants<'py>(&self, py: Python<'py>, w1: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        self.check(&w1)?;
        serialize(py, &Constants::from_problem(&self.inner, &w1))
    }
}

impl Problem {
    fn check(&self, w: &[f64]) -> PyResult<()> {
        if w.len() == self.inner.dimension() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!(
                "expected {} coordinates, got {}",
                self.inner.dimension(),
                w.len()
            )))
        }
    }

    /// Explicit constants override the ones derived from the problem.
    fn merged(&self, w1: &[f64], f: Option<f64>, d: Option<f64>) -> Constants {
        let derived = Constants::from_problem(&self.inner, w1);
        Constants {
            initial_gap: f.or(derived.initial_gap),
            distance: d.or(derived.distance),
            ..derived
        }
    }
}

#[pyfunction]
#[pyo3(signature = (horizon, q, tau_hat, sigma, batch_size = None))]
fn derive_schedule<'py>(
    py: Python<'py>,
    horizon: usize,
    q: f64,
    tau_hat: usize,
    sigma: f64,
    batch_size: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let schedule = match batch_size {
        Some(b) => minibatch::derive_schedule_with_batch(horizon, q, tau_hat, b, sigma),
        None => minibatch::derive_schedule(horizon, q, tau_hat, sigma),
    }
    .py()?;
    serialize(py, &schedule)
}

/// Fixed-stepsize asynchronous SGD; returns the last iterate and the
/// played iterates when `keep_iterates` is set.
#[pyfunction]
#[pyo3(signature = (problem, delays, eta, w1, sigma = 0.0, seed = 0, keep_iterates = false))]
fn run_vanilla<'py>(
    py: Python<'py>,
    problem: &Problem,
    delays: &DelaySequence,
    eta: f64,
    w1: Vec<f64>,
    sigma: f64,
    seed: u64,
    keep_iterates: bool,
) -> PyResult<Bound<'py, PyAny>> {
    problem.check(&w1)?;
    let p = &problem.inner;
    let mut alg = VanillaAsyncSgd::new(p.domain().clone(), &w1, eta).py()?;
    if keep_iterates {
        alg = alg.keep_iterates();
    }
    let mut oracle = problems::GradientOracle::new(p, sigma, seed).py()?;
    py.detach(|| engine::run(&mut alg, &mut oracle, &delays.inner, HistoryMode::Pruned))
        .py()?;
    let out = PyDict::new(py);
    out.set_item("w_last", alg.last_iterate().to_vec())?;
    if keep_iterates {
        out.set_item("iterates", alg.iterates().to_vec())?;
    }
    Ok(out.into_any())
}

/// Asynchronous mini-batching around a tuned inner method.
#[pyfunction]
#[pyo3(signature = (
    problem, delays, inner, q, tau_hat, w1, sigma,
    batch_size = None, strictness = "exact", initial_gap = None, distance = None, seed = 0
))]
fn run_algorithm1<'py>(
    py: Python<'py>,
    problem: &Problem,
    delays: &DelaySequence,
    inner: &str,
    q: f64,
    tau_hat: usize,
    w1: Vec<f64>,
    sigma: f64,
    batch_size: Option<usize>,
    strictness: &str,
    initial_gap: Option<f64>,
    distance: Option<f64>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    problem.check(&w1)?;
    let kind: InnerKind = parse_enum(inner, "inner method")?;
    let strictness: Strictness = parse_enum(strictness, "strictness")?;
    let c = problem.merged(&w1, initial_gap, distance);
    let p = &problem.inner;
    let mut config = MiniBatchConfig::new(q, tau_hat).with_strictness(strictness);
    if let Some(b) = batch_size {
        config = config.with_batch_size(b);
    }
    let (schedule, run) = py
        .detach(|| {
            let mut oracle = problems::GradientOracle::new(p, sigma, seed)?;
            minibatch::run_algorithm1(
                |s, k| build_inner(kind, p, &w1, k, s, &c, seed ^ 0xA5A5_A5A5_A5A5_A5A5),
                &config,
                sigma,
                &mut oracle,
                &delays.inner,
            )
        })
        .py()?;
    let out = PyDict::new(py);
    out.set_item("w_hat", run.completion.point().to_vec())?;
    out.set_item("complete", run.completion.is_complete())?;
    out.set_item("schedule", serialize(py, &schedule)?)?;
    out.set_item("diagnostics", serialize(py, &run.diagnostics)?)?;
    out.set_item(
        "max_staleness",
        minibatch::max_accepted_staleness(&run.log),
    )?;
    Ok(out.into_any())
}

/// The doubling sweep for one of the four settings.
#[pyfunction]
#[pyo3(signature = (problem, delays, setting, w1, sigma, initial_gap = None, distance = None, seed = 0))]
fn run_algorithm2<'py>(
    py: Python<'py>,
    problem: &Problem,
    delays: &DelaySequence,
    setting: &str,
    w1: Vec<f64>,
    sigma: f64,
    initial_gap: Option<f64>,
    distance: Option<f64>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    problem.check(&w1)?;
    let setting: Setting = parse_enum(setting, "setting")?;
    let c = problem.merged(&w1, initial_gap, distance);
    let p = &problem.inner;
    let schedule = SweepSchedule::new(setting, c, sigma).py()?;
    let result = py
        .detach(|| {
            let mut oracle = problems::GradientOracle::new(p, sigma, seed)?;
            sweep::run_algorithm2(schedule, p, &mut oracle, &delays.inner, &w1, seed)
        })
        .py()?;
    let lemma = sweep::verify_lemma_sweep(result.completed_epochs(), &delays.inner, &schedule);
    let out = PyDict::new(py);
    out.set_item("w_hat", result.w_hat.clone())?;
    out.set_item("completed_epochs", result.completed_epochs())?;
    out.set_item("epochs", serialize(py, &result.epochs)?)?;
    out.set_item("partial", serialize(py, &result.partial)?)?;
    out.set_item("lemma", serialize(py, &lemma)?)?;
    Ok(out.into_any())
}

/// Guarantee of a tuned inner method after `K` queries.
#[pyfunction]
#[pyo3(signature = (inner, queries, sigma, beta = None, initial_gap = None, distance = None, lipschitz = None))]
fn base_rate<'py>(
    py: Python<'py>,
    inner: &str,
    queries: usize,
    sigma: f64,
    beta: Option<f64>,
    initial_gap: Option<f64>,
    distance: Option<f64>,
    lipschitz: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let kind: InnerKind = parse_enum(inner, "inner method")?;
    let c = Constants {
        beta,
        initial_gap,
        distance,
        lipschitz,
    };
    serialize(py, &bounds::base_rate(kind, queries, sigma, &c).py()?)
}

/// Best-quantile envelope of the sweep guarantee for `delays`.
#[pyfunction]
#[pyo3(signature = (setting, delays, sigma, beta = None, initial_gap = None, distance = None, lipschitz = None, variant = "stated"))]
fn sweep_envelope<'py>(
    py: Python<'py>,
    setting: &str,
    delays: &DelaySequence,
    sigma: f64,
    beta: Option<f64>,
    initial_gap: Option<f64>,
    distance: Option<f64>,
    lipschitz: Option<f64>,
    variant: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let setting: Setting = parse_enum(setting, "setting")?;
    let variant: bounds::EnvelopeVariant = parse_enum(variant, "envelope variant")?;
    let c = Constants {
        beta,
        initial_gap,
        distance,
        lipschitz,
    };
    let env = sweep::quantile_bound_envelope(setting, variant, &delays.inner.stats(), sigma, &c).py()?;
    serialize(py, &env)
}

/// Simulates the staircase lower bound, or the small-stepsize one when
/// `eta` is at or below the threshold.
#[pyfunction]
#[pyo3(signature = (horizon, tau_max, beta, eta, w1 = 1.0))]
fn lower_bound<'py>(
    py: Python<'py>,
    horizon: usize,
    tau_max: usize,
    beta: f64,
    eta: f64,
    w1: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let out = PyDict::new(py);
    match bounds::lower_bound_construction(horizon, tau_max, beta, w1, eta) {
        Ok(c) => {
            let o = c.simulate().py()?;
            out.set_item("construction", "staircase")?;
            out.set_item("holds", o.holds(1e-12))?;
            out.set_item("iterates", o.iterates.clone())?;
            out.set_item("outcome", serialize(py, &o)?)?;
        }
        Err(Error::StepsizeTooSmall { .. }) => {
            let c = bounds::lower_bound_small_stepsize(horizon, beta, eta, w1).py()?;
            let o = c
                .simulate(&delays::staircase_adversarial(horizon, tau_max).py()?)
                .py()?;
            out.set_item("construction", "small_stepsize")?;
            out.set_item("holds", o.holds())?;
            out.set_item("iterates", o.iterates.clone())?;
            out.set_item("outcome", serialize(py, &o)?)?;
        }
        Err(e) => return Err(py_err(e)),
    }
    Ok(out.into_any())
}

/// Runs an experiment config given as a JSON string; returns the metric rows.
#[pyfunction]
#[pyo3(signature = (config_json, base_dir = None))]
fn run_experiment<'py>(py: Python<'py>, config_json: &str, base_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let config = ExperimentConfig::from_json(config_json).py()?;
    let dir = base_dir.unwrap_or_else(|| PathBuf::from("."));
    let result = py.detach(|| experiment::run_experiment(&config, &dir)).py()?;
    let rows = PyList::empty(py);
    for cell in &result.cells {
        let row = serialize(py, cell)?;
        row.set_item("complete", cell.complete)?;
        row.set_item("error", cell.error.clone())?;
        rows.append(row)?;
    }
    Ok(rows.into_any())
}

/// Runs the verification battery, or a single named check.
#[pyfunction]
#[pyo3(signature = (only = None))]
fn run_checks(py: Python<'_>, only: Option<String>) -> PyResult<Vec<(String, bool, String)>> {
    let outcomes = py.detach(|| verify::run_checks(only.as_deref())).py()?;
    Ok(outcomes
        .into_iter()
        .map(|o| (o.name.to_string(), o.passed, o.detail))
        .collect())
}

#[pymodule]
#[pyo3(name = "async_opt")]
fn async_opt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<DelaySequence>()?;
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(constant_delay, m)?)?;
    m.add_function(wrap_pyfunction!(staircase, m)?)?;
    m.add_function(wrap_pyfunction!(half_outlier, m)?)?;
    m.add_function(wrap_pyfunction!(one_fast_machine, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_workers, m)?)?;
    m.add_function(wrap_pyfunction!(derive_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(run_vanilla, m)?)?;
    m.add_function(wrap_pyfunction!(run_algorithm1, m)?)?;
    m.add_function(wrap_pyfunction!(run_algorithm2, m)?)?;
    m.add_function(wrap_pyfunction!(base_rate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_checks, m)?)?;
    Ok(())
}
