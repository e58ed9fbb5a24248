//! Closed-form guarantees and the lower-bound constructions for fixed
//! stepsize asynchronous SGD.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::delays::{staircase_adversarial, DelayOrigin, DelaySequence};
use crate::engine::{self, HistoryMode};
use crate::error::{ensure, Error, Result};
use crate::minibatch::derive_schedule;
use crate::optimizers::{Constants, InnerKind, VanillaAsyncSgd};
use crate::problems::{make_quadratic, Domain, GradientOracle, Problem};

/// The four problem classes with a matched inner method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    NonconvexSgd,
    AcsaConvexSmooth,
    SgdConvexSmooth,
    PsgdConvexLipschitz,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::NonconvexSgd,
        Setting::AcsaConvexSmooth,
        Setting::SgdConvexSmooth,
        Setting::PsgdConvexLipschitz,
    ];

    pub fn inner_kind(self) -> InnerKind {
        match self {
            Setting::NonconvexSgd => InnerKind::SgdNonconvex,
            Setting::AcsaConvexSmooth => InnerKind::Acsa,
            Setting::SgdConvexSmooth => InnerKind::SgdConvexSmooth,
            Setting::PsgdConvexLipschitz => InnerKind::PsgdConvexLipschitz,
        }
    }

    pub fn metric(self) -> Metric {
        self.inner_kind().metric()
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::NonconvexSgd => "nonconvex_sgd",
            Setting::AcsaConvexSmooth => "acsa_convex_smooth",
            Setting::SgdConvexSmooth => "sgd_convex_smooth",
            Setting::PsgdConvexLipschitz => "psgd_convex_lipschitz",
        }
    }
}

impl InnerKind {
    /// Squared gradient norm for the nonconvex method, suboptimality otherwise.
    pub fn metric(self) -> Metric {
        match self {
            InnerKind::SgdNonconvex => Metric::GradNormSq,
            _ => Metric::Suboptimality,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    GradNormSq,
    Suboptimality,
}

impl Metric {
    /// Suboptimality needs a known optimal value; without one this is `None`.
    pub fn evaluate(self, problem: &Problem, w: &[f64]) -> Option<f64> {
        match self {
            Metric::GradNormSq => Some(problem.grad_norm_sq(w)),
            Metric::Suboptimality => problem.suboptimality(w),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub formula: String,
    /// The claim the formula comes from, in words.
    pub claim: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<Setting>,
    pub inputs: BTreeMap<String, f64>,
    pub terms: Vec<f64>,
    pub value: f64,
}

impl BoundReport {
    fn new(formula: &str, claim: &str, setting: Option<Setting>, inputs: &[(&str, f64)], terms: Vec<f64>) -> Self {
        let value = terms.iter().sum();
        Self {
            formula: formula.to_string(),
            claim: claim.to_string(),
            setting,
            inputs: inputs.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            terms,
            value,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Columns `formula, setting, value, inputs`, with inputs as `k=v` pairs
/// joined by `;`.
pub fn write_reports_csv<W: Write>(reports: &[BoundReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["formula", "setting", "value", "inputs"])?;
    for r in reports {
        let inputs: Vec<String> = r.inputs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        w.write_record([
            r.formula.as_str(),
            r.setting.map_or("", Setting::name),
            &r.value.to_string(),
            &inputs.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    ensure(sigma >= 0.0 && sigma.is_finite(), || format!("sigma must be nonnegative, got {sigma}"))
}

/// Guarantee of the tuned inner method after `K` queries with noise `sigma`.
pub fn base_rate(kind: InnerKind, budget: usize, sigma: f64, c: &Constants) -> Result<BoundReport> {
    ensure(budget >= 1, || "K must be at least 1".into())?;
    check_sigma(sigma)?;
    let k = budget as f64;
    Ok(match kind {
        InnerKind::SgdNonconvex => {
            let (beta, f) = (c.beta()?, c.initial_gap()?);
            BoundReport::new(
                "rsgd_nonconvex",
                "randomized SGD, smooth nonconvex, exact constants",
                Some(Setting::NonconvexSgd),
                &[("K", k), ("sigma", sigma), ("beta", beta), ("F", f)],
                vec![2.0 * beta * f / k, (8.0 * sigma * sigma * beta * f / k).sqrt()],
            )
        }
        InnerKind::SgdConvexSmooth => {
            let (beta, d) = (c.beta()?, c.distance()?);
            BoundReport::new(
                "sgd_convex_smooth",
                "SGD, smooth convex, exact constants",
                Some(Setting::SgdConvexSmooth),
                &[("K", k), ("sigma", sigma), ("beta", beta), ("D", d)],
                vec![beta * d * d / k, 2.0 * sigma * d / k.sqrt()],
            )
        }
        InnerKind::PsgdConvexLipschitz => {
            let (d, g) = (c.distance()?, c.lipschitz()?);
            BoundReport::new(
                "psgd_convex_lipschitz",
                "projected SGD, Lipschitz convex, exact constants",
                Some(Setting::PsgdConvexLipschitz),
                &[("K", k), ("sigma", sigma), ("D", d), ("G", g)],
                vec![2.0 * d * (g * g + sigma * sigma).sqrt() / k.sqrt()],
            )
        }
        InnerKind::Acsa => {
            let (beta, d) = (c.beta()?, c.distance()?);
            BoundReport::new(
                "acsa_convex_smooth",
                "accelerated SA, smooth convex, exact constants",
                Some(Setting::AcsaConvexSmooth),
                &[("K", k), ("sigma", sigma), ("beta", beta), ("D", d)],
                vec![4.0 * beta * d * d / (k * (k + 1.0)), 4.0 * sigma * d / (3.0 * k).sqrt()],
            )
        }
    })
}

/// Guarantee of asynchronous mini-batching around `kind`: the inner bound at
/// `(sigma / sqrt(B), floor(qT / (1 + 2 tau_hat)))`.
pub fn algorithm1_rate(
    kind: InnerKind,
    horizon: usize,
    q: f64,
    tau_hat: usize,
    sigma: f64,
    c: &Constants,
) -> Result<BoundReport> {
    let schedule = derive_schedule(horizon, q, tau_hat, sigma)?;
    let mut report = base_rate(kind, schedule.queries, schedule.sigma_eff, c)?;
    report.formula = format!("minibatch_{}", report.formula);
    report.claim = "asynchronous mini-batching inherits the inner rate".into();
    report.inputs.insert("T".into(), horizon as f64);
    report.inputs.insert("q".into(), q);
    report.inputs.insert("tau_hat".into(), tau_hat as f64);
    report.inputs.insert("B".into(), schedule.batch_size as f64);
    report.inputs.insert("sigma_in".into(), sigma);
    Ok(report)
}

/// Order-of-magnitude rate of asynchronous mini-batching with unit
/// constants. Only meaningful for trends in `T`, `q` and `tau_hat`.
pub fn corollary_rate(
    setting: Setting,
    horizon: usize,
    q: f64,
    tau_hat: usize,
    sigma: f64,
    c: &Constants,
) -> Result<BoundReport> {
    ensure(q > 0.0 && q <= 1.0, || format!("q must lie in (0, 1], got {q}"))?;
    ensure(horizon >= 1, || "T must be at least 1".into())?;
    check_sigma(sigma)?;
    let qt = q * horizon as f64;
    let tau = tau_hat as f64;
    let base = [("T", horizon as f64), ("q", q), ("tau_hat", tau), ("sigma", sigma)];
    let with = |extra: &[(&'static str, f64)]| -> Vec<(&'static str, f64)> {
        base.iter().chain(extra).copied().collect()
    };
    Ok(match setting {
        Setting::NonconvexSgd => {
            let (beta, f) = (c.beta()?, c.initial_gap()?);
            BoundReport::new(
                "corollary_nonconvex",
                "mini-batching with SGD, smooth nonconvex, unit constants",
                Some(setting),
                &with(&[("beta", beta), ("F", f)]),
                vec![(1.0 + tau) * beta * f / qt, sigma * (beta * f).sqrt() / qt.sqrt()],
            )
        }
        Setting::SgdConvexSmooth => {
            let (beta, d) = (c.beta()?, c.distance()?);
            BoundReport::new(
                "corollary_convex_smooth",
                "mini-batching with SGD, smooth convex, unit constants",
                Some(setting),
                &with(&[("beta", beta), ("D", d)]),
                vec![(1.0 + tau) * beta * d * d / qt, d * sigma / qt.sqrt()],
            )
        }
        Setting::AcsaConvexSmooth => {
            let (beta, d) = (c.beta()?, c.distance()?);
            BoundReport::new(
                "corollary_accelerated",
                "mini-batching with accelerated SA, smooth convex, unit constants",
                Some(setting),
                &with(&[("beta", beta), ("D", d)]),
                vec![(1.0 + tau).powi(2) * beta * d * d / (qt * qt), d * sigma / qt.sqrt()],
            )
        }
        Setting::PsgdConvexLipschitz => {
            let (d, g) = (c.distance()?, c.lipschitz()?);
            BoundReport::new(
                "corollary_lipschitz",
                "mini-batching with projected SGD, Lipschitz convex, unit constants",
                Some(setting),
                &with(&[("D", d), ("G", g)]),
                vec![d * (1.0 + tau).sqrt() * g / qt.sqrt(), d * sigma / qt.sqrt()],
            )
        }
    })
}

/// Which constants to use where a statement and its proof disagree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeVariant {
    /// The constants as the result is stated.
    #[default]
    Stated,
    /// The constants the proof actually derives.
    Proof,
}

/// The sweep guarantee evaluated at a single quantile level `q` with
/// quantile delay `tau`.
pub fn sweep_envelope_at(
    setting: Setting,
    variant: EnvelopeVariant,
    horizon: usize,
    q: f64,
    tau: usize,
    sigma: f64,
    c: &Constants,
) -> Result<BoundReport> {
    ensure(q > 0.0 && q <= 1.0, || format!("q must lie in (0, 1], got {q}"))?;
    ensure(horizon >= 1, || "T must be at least 1".into())?;
    check_sigma(sigma)?;
    let qt = q * horizon as f64;
    let lead = 1.0 + 2.0 * tau as f64;
    let base = [("T", horizon as f64), ("q", q), ("tau_q", tau as f64), ("sigma", sigma)];
    let with = |extra: &[(&'static str, f64)]| -> Vec<(&'static str, f64)> {
        base.iter().chain(extra).copied().collect()
    };
    Ok(match setting {
        Setting::NonconvexSgd => {
            let (beta, f) = (c.beta()?, c.initial_gap()?);
            BoundReport::new(
                "sweep_nonconvex",
                "doubling sweep with SGD, smooth nonconvex",
                Some(setting),
                &with(&[("beta", beta), ("F", f)]),
                vec![24.0 * lead * beta * f / qt, 24.0 * sigma * (beta * f).sqrt() / qt.sqrt()],
            )
        }
        Setting::AcsaConvexSmooth => {
            let (beta, d) = (c.beta()?, c.distance()?);
            let noise = match variant {
                EnvelopeVariant::Stated => 72.0,
                EnvelopeVariant::Proof => 48.0,
            };
            BoundReport::new(
                "sweep_accelerated",
                "doubling sweep with accelerated SA, smooth convex",
                Some(setting),
                &with(&[("beta", beta), ("D", d), ("noise_constant", noise)]),
                vec![192.0 * lead * lead * beta * d * d / (qt * qt), noise * sigma * d / qt.sqrt()],
            )
        }
        Setting::SgdConvexSmooth => {
            let (beta, d) = (c.beta()?, c.distance()?);
            BoundReport::new(
                "sweep_convex_smooth",
                "doubling sweep with SGD, smooth convex",
                Some(setting),
                &with(&[("beta", beta), ("D", d)]),
                vec![12.0 * lead * beta * d * d / qt, sigma * d * 288f64.sqrt() / qt.sqrt()],
            )
        }
        Setting::PsgdConvexLipschitz => {
            let (d, g) = (c.distance()?, c.lipschitz()?);
            let noise = match variant {
                EnvelopeVariant::Stated => 48.0,
                EnvelopeVariant::Proof => 96.0,
            };
            BoundReport::new(
                "sweep_lipschitz",
                "doubling sweep with projected SGD, Lipschitz convex",
                Some(setting),
                &with(&[("D", d), ("G", g), ("noise_constant", noise)]),
                vec![d * g * (32.0 * lead).sqrt() / qt.sqrt(), d * sigma * noise.sqrt() / qt.sqrt()],
            )
        }
    })
}

/// Staircase delays on `f(w) = (beta/2) w^2`, where fixed-stepsize
/// asynchronous SGD pays for the maximal delay.
#[derive(Clone, Debug)]
pub struct LowerBoundConstruction {
    pub delays: DelaySequence,
    pub problem: Problem,
    pub beta: f64,
    pub w1: f64,
    pub eta: f64,
    pub tau_max: usize,
    /// Predicted `w_1..w_{tau_max+2}`.
    pub trajectory: Vec<f64>,
    pub initial_gap: f64,
    pub avg_grad_sq_bound: f64,
    pub avg_subopt_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundOutcome {
    pub avg_grad_sq: f64,
    pub avg_grad_sq_bound: f64,
    pub avg_subopt: f64,
    pub avg_subopt_bound: f64,
    pub max_trajectory_rel_error: f64,
    pub grad_bound_holds: bool,
    pub subopt_bound_holds: bool,
    #[serde(skip)]
    pub iterates: Vec<f64>,
}

impl LowerBoundOutcome {
    pub fn holds(&self, trajectory_tolerance: f64) -> bool {
        self.grad_bound_holds && self.subopt_bound_holds && self.max_trajectory_rel_error <= trajectory_tolerance
    }
}

/// Smallest stepsize for which the staircase construction applies (strictly
/// larger stepsizes are required).
pub fn lower_bound_threshold(beta: f64, tau_max: usize) -> f64 {
    6.0 / (beta * (1.0 + tau_max as f64))
}

pub fn lower_bound_construction(
    horizon: usize,
    tau_max: usize,
    beta: f64,
    w1: f64,
    eta: f64,
) -> Result<LowerBoundConstruction> {
    ensure(beta > 0.0, || format!("beta must be positive, got {beta}"))?;
    ensure(eta > 0.0 && eta.is_finite(), || format!("eta must be positive, got {eta}"))?;
    ensure(w1.is_finite(), || "w1 must be finite".into())?;
    let threshold = lower_bound_threshold(beta, tau_max);
    if eta <= threshold {
        return Err(Error::StepsizeTooSmall { eta, threshold });
    }
    let delays = staircase_adversarial(horizon, tau_max)?;
    let problem = make_quadratic(1, beta, &[0.0])?;
    let trajectory = (1..=tau_max + 2)
        .map(|t| w1 * (1.0 - eta * beta * (t as f64 - 1.0)))
        .collect();
    let initial_gap = 0.5 * beta * w1 * w1;
    let scale = (1.0 + tau_max as f64) / horizon as f64;
    Ok(LowerBoundConstruction {
        delays,
        problem,
        beta,
        w1,
        eta,
        tau_max,
        trajectory,
        initial_gap,
        avg_grad_sq_bound: 4.0 * scale * beta * initial_gap,
        avg_subopt_bound: scale * beta * w1 * w1,
    })
}

impl LowerBoundConstruction {
    /// Runs noiseless fixed-stepsize asynchronous SGD over the staircase.
    pub fn simulate(&self) -> Result<LowerBoundOutcome> {
        let iterates = simulate_vanilla(&self.problem, &self.delays, self.w1, self.eta)?;
        let max_trajectory_rel_error = self
            .trajectory
            .iter()
            .zip(&iterates)
            .map(|(&p, &w)| if p == 0.0 { w.abs() } else { ((w - p) / p).abs() })
            .fold(0.0, f64::max);
        let n = iterates.len() as f64;
        let avg_grad_sq = iterates.iter().map(|&w| self.problem.grad_norm_sq(&[w])).sum::<f64>() / n;
        let avg_subopt = iterates.iter().map(|&w| self.problem.value(&[w])).sum::<f64>() / n;
        Ok(LowerBoundOutcome {
            avg_grad_sq,
            avg_grad_sq_bound: self.avg_grad_sq_bound,
            avg_subopt,
            avg_subopt_bound: self.avg_subopt_bound,
            max_trajectory_rel_error,
            grad_bound_holds: avg_grad_sq >= self.avg_grad_sq_bound,
            subopt_bound_holds: avg_subopt >= self.avg_subopt_bound,
            iterates,
        })
    }
}

/// Played iterates `w_1..w_T` of noiseless fixed-stepsize asynchronous SGD.
fn simulate_vanilla(problem: &Problem, delays: &DelaySequence, w1: f64, eta: f64) -> Result<Vec<f64>> {
    let mut alg = VanillaAsyncSgd::new(Domain::Unconstrained, &[w1], eta)?.keep_iterates();
    let mut oracle = GradientOracle::new(problem, 0.0, 0)?;
    engine::run(&mut alg, &mut oracle, delays, HistoryMode::Pruned)?;
    Ok(alg.iterates().iter().map(|w| w[0]).collect())
}

/// `f(w) = (eps/2)(w - w*)^2` with `eps = min(beta, 1/(2 eta T))`, on which
/// any delay sequence keeps small-stepsize SGD far from `w*`.
#[derive(Clone, Debug)]
pub struct SmallStepsizeConstruction {
    pub problem: Problem,
    pub horizon: usize,
    pub beta: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub w1: f64,
    pub w_star: f64,
    pub initial_gap: f64,
    pub avg_grad_sq_bound: f64,
    pub avg_subopt_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallStepsizeOutcome {
    pub avg_grad_sq: f64,
    pub avg_grad_sq_bound: f64,
    pub avg_subopt: f64,
    pub avg_subopt_bound: f64,
    /// Range of `(w_t - w*) / (w_1 - w*)` over all played iterates.
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub sandwich_holds: bool,
    pub grad_bound_holds: bool,
    pub subopt_bound_holds: bool,
    #[serde(skip)]
    pub iterates: Vec<f64>,
}

impl SmallStepsizeOutcome {
    pub fn holds(&self) -> bool {
        self.sandwich_holds && self.grad_bound_holds && self.subopt_bound_holds
    }
}

pub fn lower_bound_small_stepsize(horizon: usize, beta: f64, eta: f64, w1: f64) -> Result<SmallStepsizeConstruction> {
    ensure(horizon >= 1, || "T must be at least 1".into())?;
    ensure(beta > 0.0, || format!("beta must be positive, got {beta}"))?;
    ensure(eta > 0.0 && eta.is_finite(), || format!("eta must be positive, got {eta}"))?;
    ensure(w1.is_finite(), || "w1 must be finite".into())?;
    let t = horizon as f64;
    let epsilon = beta.min(1.0 / (2.0 * eta * t));
    let w_star = if w1 >= 0.0 { -1.0 } else { 1.0 };
    let problem = make_quadratic(1, epsilon, &[w_star])?;
    let gap = w1 - w_star;
    let initial_gap = 0.5 * epsilon * gap * gap;
    let denom = 1.0f64.max(2.0 * beta * eta * t);
    Ok(SmallStepsizeConstruction {
        problem,
        horizon,
        beta,
        eta,
        epsilon,
        w1,
        w_star,
        initial_gap,
        avg_grad_sq_bound: beta * initial_gap / (2.0 * denom),
        avg_subopt_bound: beta * gap * gap / (8.0 * denom),
    })
}

impl SmallStepsizeConstruction {
    /// Runs noiseless fixed-stepsize asynchronous SGD over `delays`, which
    /// must have length `T`.
    pub fn simulate(&self, delays: &DelaySequence) -> Result<SmallStepsizeOutcome> {
        ensure(delays.len() == self.horizon, || {
            format!("delay sequence has {} rounds, construction expects {}", delays.len(), self.horizon)
        })?;
        let iterates = simulate_vanilla(&self.problem, delays, self.w1, self.eta)?;
        let gap = self.w1 - self.w_star;
        let (mut min_ratio, mut max_ratio) = (f64::INFINITY, f64::NEG_INFINITY);
        for &w in &iterates {
            let r = (w - self.w_star) / gap;
            min_ratio = min_ratio.min(r);
            max_ratio = max_ratio.max(r);
        }
        let n = iterates.len() as f64;
        let avg_grad_sq = iterates.iter().map(|&w| self.problem.grad_norm_sq(&[w])).sum::<f64>() / n;
        let avg_subopt = iterates.iter().map(|&w| self.problem.value(&[w])).sum::<f64>() / n;
        Ok(SmallStepsizeOutcome {
            avg_grad_sq,
            avg_grad_sq_bound: self.avg_grad_sq_bound,
            avg_subopt,
            avg_subopt_bound: self.avg_subopt_bound,
            min_ratio,
            max_ratio,
            sandwich_holds: min_ratio >= 0.5 && max_ratio <= 1.0,
            grad_bound_holds: avg_grad_sq >= self.avg_grad_sq_bound,
            subopt_bound_holds: avg_subopt >= self.avg_subopt_bound,
            iterates,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MachineBoundReport {
    Checked {
        machines: usize,
        average_delay: f64,
        bound: f64,
        holds: bool,
    },
    /// The sequence carries no machine count.
    NotApplicable,
}

impl MachineBoundReport {
    pub fn holds(&self) -> Option<bool> {
        match self {
            MachineBoundReport::Checked { holds, .. } => Some(*holds),
            MachineBoundReport::NotApplicable => None,
        }
    }
}

/// Average delay of a sequence produced by `M` machines is at most `M - 1`.
pub fn machine_bound_check(seq: &DelaySequence) -> MachineBoundReport {
    match seq.origin() {
        DelayOrigin::MachineSimulated { machines } => {
            let bound = *machines as f64 - 1.0;
            let total: usize = seq.as_slice().iter().sum();
            let average_delay = total as f64 / seq.len() as f64;
            MachineBoundReport::Checked {
                machines: *machines,
                average_delay,
                bound,
                // compare sum d_t <= (M - 1) T in integers
                holds: total <= (machines - 1) * seq.len(),
            }
        }
        DelayOrigin::Scripted => MachineBoundReport::NotApplicable,
    }
}
