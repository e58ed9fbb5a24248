//! The doubling sweep: epochs of asynchronous mini-batching with
//! `K_i = 2^(i-1)` queries and setting-specific batch sizes, each epoch
//! restarting the inner method from `w_1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bounds::{sweep_envelope_at, EnvelopeVariant, Setting};
use crate::delays::{DelaySequence, DelayStats};
use crate::engine::{self, AsyncAlgorithm, Delivery, HistoryMode, RoundLog};
use crate::error::{ensure, Error, Result};
use crate::minibatch::{AsyncMiniBatch, Strictness};
use crate::optimizers::{AcSa, Constants, QueryAlgorithm, Sgd};
use crate::problems::{GradientOracle, Problem};

/// `ceil(x)`, treating values within rounding error of an integer as that
/// integer.
fn ceil_snapped(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSchedule {
    pub setting: Setting,
    pub constants: Constants,
    pub sigma: f64,
}

impl SweepSchedule {
    pub fn new(setting: Setting, constants: Constants, sigma: f64) -> Result<Self> {
        ensure(sigma >= 0.0 && sigma.is_finite(), || format!("sigma must be nonnegative, got {sigma}"))?;
        let positive = |v: f64, name: &str| ensure(v > 0.0, || format!("{name} must be positive, got {v}"));
        match setting {
            Setting::NonconvexSgd => {
                positive(constants.beta()?, "beta")?;
                positive(constants.initial_gap()?, "F")?;
            }
            Setting::AcsaConvexSmooth | Setting::SgdConvexSmooth => {
                positive(constants.beta()?, "beta")?;
                positive(constants.distance()?, "D")?;
            }
            Setting::PsgdConvexLipschitz => {
                positive(constants.distance()?, "D")?;
                positive(constants.lipschitz()?, "G")?;
            }
        }
        Ok(Self {
            setting,
            constants,
            sigma,
        })
    }

    /// `K_i = 2^(i-1)`, for `i >= 1`.
    pub fn epoch_length(&self, i: usize) -> usize {
        assert!((1..=48).contains(&i), "epoch index {i} out of range");
        1 << (i - 1)
    }

    pub fn batch_size(&self, i: usize) -> usize {
        let k = self.epoch_length(i) as f64;
        let s2 = self.sigma * self.sigma;
        let c = &self.constants;
        let raw = match self.setting {
            Setting::NonconvexSgd => {
                let (beta, f) = (c.beta.unwrap(), c.initial_gap.unwrap());
                s2 * k / (2.0 * beta * f)
            }
            Setting::AcsaConvexSmooth => {
                let (beta, d) = (c.beta.unwrap(), c.distance.unwrap());
                s2 * k * (k + 1.0) * (k + 1.0) / (12.0 * beta * beta * d * d)
            }
            Setting::SgdConvexSmooth => {
                let (beta, d) = (c.beta.unwrap(), c.distance.unwrap());
                s2 * k / (beta * beta * d * d)
            }
            Setting::PsgdConvexLipschitz => {
                let g = c.lipschitz.unwrap();
                s2 / (g * g)
            }
        };
        ceil_snapped(raw).max(1.0) as usize
    }

    /// Fixed stepsize of the inner method in epoch `i` (`gamma` for AC-SA).
    pub fn stepsize(&self, i: usize) -> f64 {
        let c = &self.constants;
        match self.setting {
            Setting::NonconvexSgd | Setting::SgdConvexSmooth => 1.0 / c.beta.unwrap(),
            Setting::AcsaConvexSmooth => 1.0 / (4.0 * c.beta.unwrap()),
            Setting::PsgdConvexLipschitz => {
                let (d, g) = (c.distance.unwrap(), c.lipschitz.unwrap());
                let b = self.batch_size(i) as f64;
                d / ((g * g + self.sigma * self.sigma / b) * self.epoch_length(i) as f64).sqrt()
            }
        }
    }

    /// Whether the fixed stepsize equals the tuned stepsize of the inner
    /// method for noise `sigma / sqrt(B_i)` and `K_i` queries, i.e. whether
    /// the deterministic branch of the tuned minimum is the binding one.
    pub fn tuning_consistent(&self, i: usize) -> bool {
        let k = self.epoch_length(i) as f64;
        let s2 = self.sigma * self.sigma / self.batch_size(i) as f64;
        if s2 == 0.0 {
            return true;
        }
        let c = &self.constants;
        let tol = 1.0 - 1e-9;
        match self.setting {
            Setting::NonconvexSgd => {
                let (beta, f) = (c.beta.unwrap(), c.initial_gap.unwrap());
                (2.0 * f / (s2 * beta * k)).sqrt() >= tol / beta
            }
            Setting::SgdConvexSmooth => {
                let (beta, d) = (c.beta.unwrap(), c.distance.unwrap());
                (d * d / (s2 * k)).sqrt() >= tol / beta
            }
            Setting::AcsaConvexSmooth => {
                let (beta, d) = (c.beta.unwrap(), c.distance.unwrap());
                (3.0 * d * d / (4.0 * s2 * k * (k + 1.0) * (k + 1.0))).sqrt() >= tol / (4.0 * beta)
            }
            Setting::PsgdConvexLipschitz => true,
        }
    }

    /// Checks that `K_i` doubles and `B_i` never decreases for `i <= epochs`.
    pub fn check_consistency(&self, epochs: usize) -> std::result::Result<(), String> {
        for i in 1..epochs {
            if self.epoch_length(i + 1) != 2 * self.epoch_length(i) {
                return Err(format!("K_{} is not twice K_{i}", i + 1));
            }
            if self.batch_size(i + 1) < self.batch_size(i) {
                return Err(format!("B_{} < B_{i}", i + 1));
            }
        }
        Ok(())
    }

    /// Epoch `i`'s inner method, started at `w1`.
    pub fn build_inner(
        &self,
        i: usize,
        problem: &Problem,
        w1: &[f64],
        seed: u64,
    ) -> Result<Box<dyn QueryAlgorithm + Send>> {
        let k = self.epoch_length(i);
        let step = self.stepsize(i);
        let domain = problem.domain().clone();
        Ok(match self.setting {
            Setting::NonconvexSgd | Setting::SgdConvexSmooth => Box::new(Sgd::with_step(domain, w1, k, step, seed)?),
            Setting::AcsaConvexSmooth => Box::new(AcSa::with_gamma(domain, w1, k, step)?),
            Setting::PsgdConvexLipschitz => Box::new(Sgd::projected_lipschitz(
                problem,
                w1,
                k,
                self.sigma / (self.batch_size(i) as f64).sqrt(),
                self.constants.distance.unwrap(),
                self.constants.lipschitz.unwrap(),
            )?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub i: usize,
    #[serde(rename = "K_i")]
    pub queries: usize,
    #[serde(rename = "B_i")]
    pub batch_size: usize,
    pub rounds_consumed: usize,
    pub used: usize,
    pub discarded: usize,
    /// Metric at the epoch's output; filled in by [`run_algorithm2`].
    pub metric: Option<f64>,
}

/// The sweep as a single streaming algorithm for the engine.
pub struct SweepAlgorithm<'p> {
    schedule: SweepSchedule,
    problem: &'p Problem,
    w1: Vec<f64>,
    seed: u64,
    epoch: usize,
    current: AsyncMiniBatch<Box<dyn QueryAlgorithm + Send>>,
    id_offset: usize,
    epoch_start: usize,
    used: usize,
    discarded: usize,
    records: Vec<EpochRecord>,
    outputs: Vec<Vec<f64>>,
}

fn epoch_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

impl<'p> SweepAlgorithm<'p> {
    pub fn new(schedule: SweepSchedule, problem: &'p Problem, w1: &[f64], seed: u64) -> Result<Self> {
        if !problem.domain().contains(w1) {
            return Err(Error::Domain(format!("initial point {w1:?} is outside the domain")));
        }
        if schedule.setting == Setting::PsgdConvexLipschitz && !problem.domain().is_bounded() {
            return Err(Error::Config("projected SGD needs a bounded domain".into()));
        }
        let current = Self::epoch(&schedule, problem, w1, seed, 1, 0)?;
        Ok(Self {
            schedule,
            problem,
            w1: w1.to_vec(),
            seed,
            epoch: 1,
            current,
            id_offset: 0,
            epoch_start: 1,
            used: 0,
            discarded: 0,
            records: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn epoch(
        schedule: &SweepSchedule,
        problem: &Problem,
        w1: &[f64],
        seed: u64,
        i: usize,
        offset: usize,
    ) -> Result<AsyncMiniBatch<Box<dyn QueryAlgorithm + Send>>> {
        let inner = schedule.build_inner(i, problem, w1, epoch_seed(seed, i))?;
        Ok(AsyncMiniBatch::new(inner, schedule.batch_size(i), Strictness::Exact)?.with_offset(offset))
    }

    pub fn completed_epochs(&self) -> usize {
        self.outputs.len()
    }

    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    /// State of the unfinished epoch.
    pub fn partial(&self) -> PartialEpoch {
        PartialEpoch {
            i: self.epoch,
            queries: self.schedule.epoch_length(self.epoch),
            batch_size: self.schedule.batch_size(self.epoch),
            dispatched: self.current.dispatched(),
            used: self.used,
            discarded: self.discarded,
        }
    }
}

impl AsyncAlgorithm for SweepAlgorithm<'_> {
    fn current_point(&self) -> &[f64] {
        self.current.current_point()
    }

    fn current_point_id(&self) -> usize {
        self.current.current_point_id()
    }

    fn receive(&mut self, delivery: Delivery<'_>) -> bool {
        let accepted = self.current.receive(delivery);
        if accepted {
            self.used += 1;
        } else {
            self.discarded += 1;
        }
        if let Some(output) = self.current.output() {
            let i = self.epoch;
            self.records.push(EpochRecord {
                i,
                queries: self.schedule.epoch_length(i),
                batch_size: self.schedule.batch_size(i),
                rounds_consumed: delivery.round + 1 - self.epoch_start,
                used: self.used,
                discarded: self.discarded,
                metric: None,
            });
            self.outputs.push(output.w_hat.clone());
            self.id_offset += self.current.ids_used();
            self.epoch += 1;
            self.epoch_start = delivery.round + 1;
            self.used = 0;
            self.discarded = 0;
            self.current = Self::epoch(&self.schedule, self.problem, &self.w1, self.seed, self.epoch, self.id_offset)
                .expect("epoch parameters were validated with the schedule");
        }
        accepted
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialEpoch {
    pub i: usize,
    #[serde(rename = "K_i")]
    pub queries: usize,
    #[serde(rename = "B_i")]
    pub batch_size: usize,
    pub dispatched: usize,
    pub used: usize,
    pub discarded: usize,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub schedule: SweepSchedule,
    /// Outputs of the completed epochs.
    pub outputs: Vec<Vec<f64>>,
    /// The last output, or `w_1` when no epoch completed.
    pub w_hat: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// The epoch cut short by the end of the rounds; its work is discarded.
    pub partial: PartialEpoch,
    pub log: RoundLog,
}

impl SweepResult {
    pub fn completed_epochs(&self) -> usize {
        self.outputs.len()
    }

    /// Columns `i, K_i, B_i, rounds_consumed, used, discarded, metric`.
    pub fn write_epochs_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "K_i", "B_i", "rounds_consumed", "used", "discarded", "metric"])?;
        for e in &self.epochs {
            w.write_record([
                e.i.to_string(),
                e.queries.to_string(),
                e.batch_size.to_string(),
                e.rounds_consumed.to_string(),
                e.used.to_string(),
                e.discarded.to_string(),
                e.metric.map_or(String::new(), |m| m.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the sweep over `delays`, starting every epoch at `w1`.
pub fn run_algorithm2(
    schedule: SweepSchedule,
    problem: &Problem,
    oracle: &mut GradientOracle<'_>,
    delays: &DelaySequence,
    w1: &[f64],
    seed: u64,
) -> Result<SweepResult> {
    let mut alg = SweepAlgorithm::new(schedule, problem, w1, seed)?;
    let log = engine::run(&mut alg, oracle, delays, HistoryMode::Pruned)?;
    let metric = schedule.setting.metric();
    let mut epochs = alg.records.clone();
    for (e, w) in epochs.iter_mut().zip(&alg.outputs) {
        e.metric = metric.evaluate(problem, w);
    }
    let w_hat = alg.outputs.last().cloned().unwrap_or_else(|| w1.to_vec());
    Ok(SweepResult {
        schedule,
        partial: alg.partial(),
        outputs: alg.outputs,
        w_hat,
        epochs,
        log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepLemmaReport {
    pub completed_epochs: usize,
    pub levels_checked: usize,
    /// Level with the smallest slack `2(B + tau_q)K - qT`.
    pub tightest_q: f64,
    pub tightest_tau: usize,
    pub tightest_lhs: f64,
    pub tightest_rhs: f64,
    pub holds: bool,
}

/// Checks `qT < 2(B_{I+1} + tau_q) K_{I+1}` at every breakpoint of the
/// quantile function, where `I` is the number of completed epochs.
pub fn verify_lemma_sweep(completed_epochs: usize, delays: &DelaySequence, schedule: &SweepSchedule) -> SweepLemmaReport {
    let next = completed_epochs + 1;
    let b = schedule.batch_size(next);
    let k = schedule.epoch_length(next);
    let horizon = delays.len() as f64;
    let mut report = SweepLemmaReport {
        completed_epochs,
        levels_checked: 0,
        tightest_q: 0.0,
        tightest_tau: 0,
        tightest_lhs: 0.0,
        tightest_rhs: 0.0,
        holds: true,
    };
    let mut best_slack = i128::MAX;
    for p in delays.stats().quantile_points() {
        let rhs = 2 * (b + p.tau) * k;
        let slack = rhs as i128 - p.count as i128;
        report.levels_checked += 1;
        if slack <= 0 {
            report.holds = false;
        }
        if slack < best_slack {
            best_slack = slack;
            report.tightest_q = p.count as f64 / horizon;
            report.tightest_tau = p.tau;
            report.tightest_lhs = p.count as f64;
            report.tightest_rhs = rhs as f64;
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub q: f64,
    pub tau: usize,
    pub value: f64,
    /// The envelope at `q = 1`, i.e. with the maximal delay.
    pub value_at_one: f64,
}

/// Infimum over `q` of the sweep guarantee for the given delays. The
/// expression only decreases in `q` while `tau_q` is constant, so the
/// breakpoints of the quantile function suffice.
pub fn quantile_bound_envelope(
    setting: Setting,
    variant: EnvelopeVariant,
    stats: &DelayStats,
    sigma: f64,
    constants: &Constants,
) -> Result<Envelope> {
    let horizon = stats.horizon;
    let mut best: Option<Envelope> = None;
    let mut at_one = f64::NAN;
    for p in stats.quantile_points() {
        let value = sweep_envelope_at(setting, variant, horizon, p.q, p.tau, sigma, constants)?.value;
        if p.count == horizon {
            at_one = value;
        }
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(Envelope {
                q: p.q,
                tau: p.tau,
                value,
                value_at_one: f64::NAN,
            });
        }
    }
    let mut best = best.expect("at least one quantile point");
    best.value_at_one = at_one;
    Ok(best)
}
