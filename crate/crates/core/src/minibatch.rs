//! Asynchronous mini-batching with stale-gradient filtering.
//!
//! The wrapper holds the inner algorithm's current query point fixed, plays
//! it every round and averages `B` gradients that were evaluated at that
//! point (or, in the relaxed mode, at one of the two previous queries)
//! before handing the mean to the inner algorithm.

use serde::{Deserialize, Serialize};

use crate::delays::{DelaySequence, DelayStats};
use crate::engine::{self, AsyncAlgorithm, Delivery, HistoryMode, RoundLog};
use crate::error::{ensure, Error, Result};
use crate::optimizers::{OptimizerOutput, QueryAlgorithm};
use crate::problems::GradientOracle;
use crate::vector;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// Accept iff `t_k <= t - d_t`.
    #[default]
    Exact,
    /// Accept iff `t_{max(k-2, 1)} <= t - d_t`.
    RelaxedKMinus2,
    /// Deliberately broken filter, `t_k < t - d_t - 1`. Exists so the
    /// verifier can show it catches a wrong acceptance rule.
    #[doc(hidden)]
    #[serde(skip)]
    Corrupted,
}

impl Strictness {
    /// `starts[j]` is the first round of query `j + 1`; the current query is
    /// the last entry.
    fn accepts(self, starts: &[usize], source_round: usize) -> bool {
        let k = starts.len();
        match self {
            Strictness::Exact => starts[k - 1] <= source_round,
            Strictness::RelaxedKMinus2 => starts[k.saturating_sub(3)] <= source_round,
            Strictness::Corrupted => starts[k - 1] + 1 < source_round,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniBatchConfig {
    pub q: f64,
    pub tau_hat: usize,
    /// Overrides the default `max(1, tau_hat)`.
    #[serde(default, rename = "B")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub strictness: Strictness,
}

impl MiniBatchConfig {
    pub fn new(q: f64, tau_hat: usize) -> Self {
        Self {
            q,
            tau_hat,
            batch_size: None,
            strictness: Strictness::Exact,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = Some(batch_size);
        self
    }

    pub fn with_strictness(mut self, strictness: Strictness) -> Self {
        self.strictness = strictness;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniBatchSchedule {
    #[serde(rename = "B")]
    pub batch_size: usize,
    #[serde(rename = "K")]
    pub queries: usize,
    pub sigma_eff: f64,
}

/// `B = max(1, tau_hat)`, `K = floor(qT / (1 + 2 tau_hat))`,
/// `sigma_eff = sigma / sqrt(B)`.
pub fn derive_schedule(horizon: usize, q: f64, tau_hat: usize, sigma: f64) -> Result<MiniBatchSchedule> {
    check_level(horizon, q)?;
    ensure(sigma >= 0.0, || format!("sigma must be nonnegative, got {sigma}"))?;
    let batch_size = tau_hat.max(1);
    let queries = floor_ratio(q, horizon, 1 + 2 * tau_hat);
    finish_schedule(horizon, q, tau_hat, batch_size, queries, sigma)
}

/// Schedule for a batch size chosen independently of `tau_hat`: the query
/// budget becomes `floor(qT / (B + tau_hat))`, the largest budget the
/// counting lemma still guarantees.
pub fn derive_schedule_with_batch(
    horizon: usize,
    q: f64,
    tau_hat: usize,
    batch_size: usize,
    sigma: f64,
) -> Result<MiniBatchSchedule> {
    check_level(horizon, q)?;
    ensure(sigma >= 0.0, || format!("sigma must be nonnegative, got {sigma}"))?;
    ensure(batch_size >= 1, || "batch size must be at least 1".into())?;
    let queries = floor_ratio(q, horizon, batch_size + tau_hat);
    finish_schedule(horizon, q, tau_hat, batch_size, queries, sigma)
}

fn check_level(horizon: usize, q: f64) -> Result<()> {
    ensure(horizon >= 1, || "T must be at least 1".into())?;
    ensure(q > 0.0 && q <= 1.0, || format!("q must lie in (0, 1], got {q}"))
}

/// `floor(q T / den)` with `q T` snapped to an integer when it is one up to
/// rounding.
fn floor_ratio(q: f64, horizon: usize, den: usize) -> usize {
    let qt = q * horizon as f64;
    let snapped = if (qt - qt.round()).abs() <= 1e-9 * qt.max(1.0) {
        qt.round()
    } else {
        qt
    };
    (snapped / den as f64).floor() as usize
}

fn finish_schedule(
    horizon: usize,
    q: f64,
    tau_hat: usize,
    batch_size: usize,
    queries: usize,
    sigma: f64,
) -> Result<MiniBatchSchedule> {
    if queries == 0 {
        return Err(Error::Schedule(format!(
            "horizon too short for this quantile bound: T={horizon}, q={q}, tau_hat={tau_hat}, B={batch_size} give K=0"
        )));
    }
    Ok(MiniBatchSchedule {
        batch_size,
        queries,
        sigma_eff: sigma / (batch_size as f64).sqrt(),
    })
}

impl MiniBatchConfig {
    pub fn schedule(&self, horizon: usize, sigma: f64) -> Result<MiniBatchSchedule> {
        match self.batch_size {
            None => derive_schedule(horizon, self.q, self.tau_hat, sigma),
            Some(b) => derive_schedule_with_batch(horizon, self.q, self.tau_hat, b, sigma),
        }
    }
}

/// Mini-batching wrapper around a query algorithm, playable by the engine.
///
/// Point ids are `offset + k` for the `k`-th query; once the inner algorithm
/// has finished, the wrapper plays its output under id `offset + K + 1` and
/// discards every further gradient.
pub struct AsyncMiniBatch<A> {
    inner: A,
    batch_size: usize,
    strictness: Strictness,
    offset: usize,
    starts: Vec<usize>,
    point: Vec<f64>,
    accumulator: Vec<f64>,
    fill: usize,
    dispatched: usize,
    output: Option<OptimizerOutput>,
    horizon: Option<usize>,
}

impl<A: QueryAlgorithm> AsyncMiniBatch<A> {
    pub fn new(mut inner: A, batch_size: usize, strictness: Strictness) -> Result<Self> {
        ensure(batch_size >= 1, || "batch size must be at least 1".into())?;
        ensure(inner.responses() == 0, || "inner algorithm was already started".into())?;
        let point = inner.next_query();
        let dim = point.len();
        Ok(Self {
            inner,
            batch_size,
            strictness,
            offset: 0,
            starts: Vec::new(),
            point,
            accumulator: vec![0.0; dim],
            fill: 0,
            dispatched: 0,
            output: None,
            horizon: None,
        })
    }

    pub(crate) fn with_offset(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    /// Declares the number of rounds the run is meant to last.
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn target(&self) -> usize {
        self.inner.budget()
    }

    pub fn dispatched(&self) -> usize {
        self.dispatched
    }

    pub fn is_complete(&self) -> bool {
        self.output.is_some()
    }

    pub fn output(&self) -> Option<&OptimizerOutput> {
        self.output.as_ref()
    }

    pub fn inner(&self) -> &A {
        &self.inner
    }

    /// First round of each query issued so far.
    pub fn query_starts(&self) -> &[usize] {
        &self.starts
    }

    /// Number of point ids this wrapper has used (queries plus the output).
    pub(crate) fn ids_used(&self) -> usize {
        self.dispatched + 1
    }

    pub fn into_completion(self) -> Completion {
        match self.output {
            Some(output) => Completion::Complete(output),
            None => Completion::Incomplete {
                dispatched: self.dispatched,
                target: self.inner.budget(),
                current_query: self.point,
                fill: self.fill,
            },
        }
    }

    fn dispatch(&mut self) {
        self.inner.respond(&self.accumulator);
        self.accumulator.iter_mut().for_each(|x| *x = 0.0);
        self.fill = 0;
        self.dispatched += 1;
        if self.inner.is_complete() {
            let output = self.inner.finalize();
            self.point = output.w_hat.clone();
            self.output = Some(output);
        } else {
            self.point = self.inner.next_query();
        }
    }
}

impl<A: QueryAlgorithm> AsyncAlgorithm for AsyncMiniBatch<A> {
    fn current_point(&self) -> &[f64] {
        &self.point
    }

    fn current_point_id(&self) -> usize {
        self.offset + self.dispatched + 1
    }

    fn receive(&mut self, delivery: Delivery<'_>) -> bool {
        if self.output.is_some() {
            return false;
        }
        if self.starts.len() <= self.dispatched {
            self.starts.push(delivery.round);
        }
        if !self.strictness.accepts(&self.starts, delivery.source_round) {
            return false;
        }
        vector::axpy(1.0 / self.batch_size as f64, delivery.gradient, &mut self.accumulator);
        self.fill += 1;
        if self.fill == self.batch_size {
            self.dispatch();
        }
        true
    }

    fn horizon(&self) -> Option<usize> {
        self.horizon
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Completion {
    Complete(OptimizerOutput),
    /// The rounds ran out first; the inner state is frozen at its current
    /// query.
    Incomplete {
        dispatched: usize,
        target: usize,
        current_query: Vec<f64>,
        fill: usize,
    },
}

impl Completion {
    pub fn is_complete(&self) -> bool {
        matches!(self, Completion::Complete(_))
    }

    pub fn output(&self) -> Option<&OptimizerOutput> {
        match self {
            Completion::Complete(o) => Some(o),
            Completion::Incomplete { .. } => None,
        }
    }

    /// The output point, or the frozen query point of an incomplete run.
    pub fn point(&self) -> &[f64] {
        match self {
            Completion::Complete(o) => &o.w_hat,
            Completion::Incomplete { current_query, .. } => current_query,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(rename = "K_target")]
    pub target: usize,
    #[serde(rename = "K_dispatched")]
    pub dispatched: usize,
    pub used: usize,
    pub discarded: usize,
}

impl Diagnostics {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Debug)]
pub struct MiniBatchRun {
    pub completion: Completion,
    pub diagnostics: Diagnostics,
    pub log: RoundLog,
    pub batch_size: usize,
}

/// Runs the wrapper around an already-built inner algorithm.
pub fn run_minibatch<A: QueryAlgorithm>(
    inner: A,
    batch_size: usize,
    strictness: Strictness,
    oracle: &mut GradientOracle<'_>,
    delays: &DelaySequence,
    mode: HistoryMode,
) -> Result<MiniBatchRun> {
    let mut wrapper = AsyncMiniBatch::new(inner, batch_size, strictness)?.with_horizon(delays.len());
    let log = engine::run(&mut wrapper, oracle, delays, mode)?;
    let diagnostics = Diagnostics {
        target: wrapper.target(),
        dispatched: wrapper.dispatched(),
        used: log.used,
        discarded: log.discarded,
    };
    Ok(MiniBatchRun {
        completion: wrapper.into_completion(),
        diagnostics,
        log,
        batch_size,
    })
}

/// Derives the schedule from `config`, builds `A(sigma_eff, K)` through
/// `factory`, and runs it over `delays`.
pub fn run_algorithm1<A, F>(
    factory: F,
    config: &MiniBatchConfig,
    sigma: f64,
    oracle: &mut GradientOracle<'_>,
    delays: &DelaySequence,
) -> Result<(MiniBatchSchedule, MiniBatchRun)>
where
    A: QueryAlgorithm,
    F: FnOnce(f64, usize) -> Result<A>,
{
    let schedule = config.schedule(delays.len(), sigma)?;
    let inner = factory(schedule.sigma_eff, schedule.queries)?;
    ensure(inner.budget() == schedule.queries, || {
        format!("factory built {} queries, schedule needs {}", inner.budget(), schedule.queries)
    })?;
    let run = run_minibatch(
        inner,
        schedule.batch_size,
        config.strictness,
        oracle,
        delays,
        HistoryMode::Pruned,
    )?;
    Ok((schedule, run))
}

/// `sup over q of floor(qT / (B + tau_q))`, attained at a breakpoint of the
/// quantile function. Returns the value and the `(count, tau)` achieving it.
pub fn counting_supremum(stats: &DelayStats, batch_size: usize) -> (usize, usize, usize) {
    stats
        .quantile_points()
        .iter()
        .map(|p| (p.count / (batch_size + p.tau), p.count, p.tau))
        .max_by_key(|&(v, count, _)| (v, std::cmp::Reverse(count)))
        .expect("at least one quantile point")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaUpdatesReport {
    pub dispatched: usize,
    pub supremum: usize,
    pub target: usize,
    /// `min(target, supremum)`: what the dispatch count must reach.
    pub required: usize,
    pub best_q: f64,
    pub best_tau: usize,
    pub holds: bool,
}

/// Checks the counting guarantee on a run's log: the number of dispatched
/// batches is at least `min(K, sup_q floor(qT / (B + tau_q)))`.
pub fn verify_lemma_updates(
    log: &RoundLog,
    delays: &DelaySequence,
    batch_size: usize,
    target: usize,
) -> LemmaUpdatesReport {
    let stats = delays.stats();
    let (supremum, count, tau) = counting_supremum(&stats, batch_size);
    let dispatched = log.used / batch_size;
    let required = supremum.min(target);
    LemmaUpdatesReport {
        dispatched,
        supremum,
        target,
        required,
        best_q: count as f64 / delays.len() as f64,
        best_tau: tau,
        holds: dispatched >= required,
    }
}

/// Largest `played id - source id` over accepted gradients.
pub fn max_accepted_staleness(log: &RoundLog) -> usize {
    log.records
        .iter()
        .filter(|r| r.accepted)
        .map(|r| r.played_point_id - r.source_point_id)
        .max()
        .unwrap_or(0)
}

/// Queries a fixed point `K` times and keeps every response. Used to
/// measure the variance of dispatched batch means.
#[derive(Clone, Debug)]
pub struct FixedPointProbe {
    point: Vec<f64>,
    budget: usize,
    awaiting: bool,
    responses: Vec<Vec<f64>>,
}

impl FixedPointProbe {
    pub fn new(point: Vec<f64>, budget: usize) -> Self {
        Self {
            point,
            budget,
            awaiting: false,
            responses: Vec::with_capacity(budget),
        }
    }

    pub fn responses_seen(&self) -> &[Vec<f64>] {
        &self.responses
    }
}

impl QueryAlgorithm for FixedPointProbe {
    fn budget(&self) -> usize {
        self.budget
    }

    fn responses(&self) -> usize {
        self.responses.len()
    }

    fn next_query(&mut self) -> Vec<f64> {
        assert!(!self.awaiting && self.responses.len() < self.budget);
        self.awaiting = true;
        self.point.clone()
    }

    fn respond(&mut self, gradient: &[f64]) {
        assert!(self.awaiting);
        self.awaiting = false;
        self.responses.push(gradient.to_vec());
    }

    fn finalize(&mut self) -> OptimizerOutput {
        assert_eq!(self.responses.len(), self.budget);
        OptimizerOutput {
            w_hat: self.point.clone(),
            trace: Some(std::mem::take(&mut self.responses)),
        }
    }
}

/// Mean over batches of `||g~ - grad f(w)||^2` for `batches` dispatched
/// batch means of size `batch_size` at `point`, with zero delays.
pub fn batch_mean_variance(
    oracle: &mut GradientOracle<'_>,
    point: &[f64],
    batch_size: usize,
    batches: usize,
    strictness: Strictness,
) -> Result<f64> {
    let exact = oracle.problem().gradient(point);
    let delays = DelaySequence::new(vec![0; batch_size * batches])?;
    let probe = FixedPointProbe::new(point.to_vec(), batches);
    let run = run_minibatch(probe, batch_size, strictness, oracle, &delays, HistoryMode::Pruned)?;
    let out = match run.completion {
        Completion::Complete(out) => out,
        Completion::Incomplete { dispatched, .. } => {
            return Err(Error::Schedule(format!(
                "only {dispatched} of {batches} batches were dispatched"
            )))
        }
    };
    let means = out.trace.expect("probe keeps responses");
    Ok(means.iter().map(|g| vector::dist_sq(g, &exact)).sum::<f64>() / batches as f64)
}
