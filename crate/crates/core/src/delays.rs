//! Delay sequences: validation, generators, quantile statistics, and the
//! two-phase multi-worker compute-time simulation.
//!
//! Rounds are 1-based throughout: `delay(t)` is the staleness of the gradient
//! delivered at round `t`, which was evaluated at the iterate played in round
//! `t - delay(t)`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayOrigin {
    Scripted,
    MachineSimulated { machines: usize },
}

/// A feasible delay sequence `d_1..d_T` with `d_t <= t - 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelaySequence {
    delays: Vec<usize>,
    origin: DelayOrigin,
}

impl DelaySequence {
    pub fn new(delays: Vec<usize>) -> Result<Self> {
        Self::with_origin(delays, DelayOrigin::Scripted)
    }

    pub fn with_origin(delays: Vec<usize>, origin: DelayOrigin) -> Result<Self> {
        ensure(!delays.is_empty(), || "delay sequence is empty".into())?;
        if let Some((i, &d)) = delays.iter().enumerate().find(|(i, &d)| d > *i) {
            return Err(Error::Protocol {
                round: i + 1,
                delay: d,
                limit: i,
            });
        }
        Ok(Self { delays, origin })
    }

    /// Horizon `T`.
    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.delays
    }

    /// Delay of round `t` (1-based).
    pub fn delay(&self, t: usize) -> usize {
        self.delays[t - 1]
    }

    pub fn origin(&self) -> &DelayOrigin {
        &self.origin
    }

    pub fn average(&self) -> f64 {
        self.delays.iter().sum::<usize>() as f64 / self.delays.len() as f64
    }

    pub fn max(&self) -> usize {
        self.delays.iter().copied().max().unwrap_or(0)
    }

    pub fn stats(&self) -> DelayStats {
        DelayStats::from_delays(&self.delays).expect("sequence is nonempty")
    }

    /// `earliest[t-1] = min over s >= t of (s - d_s)`: no gradient delivered
    /// at round `t` or later is evaluated before this round.
    pub fn earliest_sources(&self) -> Vec<usize> {
        let mut out = vec![0; self.delays.len()];
        let mut best = usize::MAX;
        for (i, &d) in self.delays.iter().enumerate().rev() {
            best = best.min(i + 1 - d);
            out[i] = best;
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["d_t"])?;
        for d in &self.delays {
            w.write_record([d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() != 1 || &headers[0] != "d_t" {
            return Err(Error::Config(format!(
                "expected a single `d_t` column, found {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut delays = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let d = rec[0]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("bad delay {:?}: {e}", &rec[0])))?;
            delays.push(d);
        }
        Self::new(delays)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.delays)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    /// Reads `.json` as a JSON array and anything else as a `d_t` CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let mut text = String::new();
            std::io::BufReader::new(file).read_to_string(&mut text)?;
            Self::from_json(&text)
        } else {
            Self::read_csv(file)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e == "json") {
            std::fs::write(path, self.to_json()?)?;
            Ok(())
        } else {
            self.write_csv(std::fs::File::create(path)?)
        }
    }
}

/// One step of the empirical quantile function: for `q` in
/// `((count - run)/T, count/T]` the quantile delay is `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuantilePoint {
    /// Number of rounds with delay `<= tau`; `q = count / T`.
    pub count: usize,
    pub q: f64,
    pub tau: usize,
}

/// Summary statistics of a delay sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DelayStats {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub tau_avg: f64,
    pub tau_med: usize,
    pub tau_max: usize,
    #[serde(skip)]
    sorted: Vec<usize>,
}

impl DelayStats {
    pub fn from_delays(delays: &[usize]) -> Result<Self> {
        ensure(!delays.is_empty(), || "cannot summarise an empty sequence".into())?;
        let mut sorted = delays.to_vec();
        sorted.sort_unstable();
        let horizon = sorted.len();
        let sum: usize = sorted.iter().sum();
        let mut stats = Self {
            horizon,
            tau_avg: sum as f64 / horizon as f64,
            tau_med: 0,
            tau_max: sorted[horizon - 1],
            sorted,
        };
        stats.tau_med = stats.quantile_at_count(horizon.div_ceil(2));
        Ok(stats)
    }

    /// Smallest integer `tau` with `#{d <= tau} >= count`, i.e. the
    /// `count`-th order statistic.
    pub fn quantile_at_count(&self, count: usize) -> usize {
        self.sorted[count.clamp(1, self.horizon) - 1]
    }

    /// Minimal integer `tau_q` with `P(d <= tau_q) >= q` and
    /// `P(d >= tau_q) >= 1 - q`.
    ///
    /// The first condition alone is met first at the `ceil(qT)`-th order
    /// statistic, and that value also satisfies the second condition.
    pub fn quantile(&self, q: f64) -> Result<usize> {
        ensure(q > 0.0 && q <= 1.0, || format!("quantile level {q} is outside (0, 1]"))?;
        Ok(self.quantile_at_count(count_for_level(q, self.horizon)))
    }

    /// Breakpoints of the quantile function, one per distinct delay value,
    /// at the largest `q` that maps to it. Suprema and infima of expressions
    /// that improve with `q` at fixed `tau_q` are attained at these points.
    pub fn quantile_points(&self) -> Vec<QuantilePoint> {
        let t = self.horizon;
        let mut out = Vec::new();
        for (i, &v) in self.sorted.iter().enumerate() {
            if i + 1 == t || self.sorted[i + 1] != v {
                out.push(QuantilePoint {
                    count: i + 1,
                    q: (i + 1) as f64 / t as f64,
                    tau: v,
                });
            }
        }
        out
    }

    pub fn sorted(&self) -> &[usize] {
        &self.sorted
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// `ceil(q T)`, snapping values within floating-point noise of an integer.
pub(crate) fn count_for_level(q: f64, horizon: usize) -> usize {
    let x = q * horizon as f64;
    let r = x.round();
    let c = if (x - r).abs() <= 1e-9 * horizon as f64 { r } else { x.ceil() };
    (c as usize).clamp(1, horizon)
}

pub fn compute_stats(seq: &DelaySequence) -> DelayStats {
    seq.stats()
}

/// `d_t = min(tau, t - 1)`.
pub fn constant_delay(horizon: usize, tau: usize) -> Result<DelaySequence> {
    ensure(horizon >= 1, || "horizon must be at least 1".into())?;
    ensure(tau < horizon, || format!("delay {tau} must be below the horizon {horizon}"))?;
    DelaySequence::new((0..horizon).map(|i| tau.min(i)).collect())
}

/// `d_t = t - 1` for `t <= tau_max + 1`, then `0`.
pub fn staircase_adversarial(horizon: usize, tau_max: usize) -> Result<DelaySequence> {
    ensure(tau_max >= 1 && tau_max + 2 <= horizon, || {
        format!("need 1 <= tau_max <= T - 2, got tau_max={tau_max}, T={horizon}")
    })?;
    DelaySequence::new(
        (0..horizon)
            .map(|i| if i <= tau_max { i } else { 0 })
            .collect(),
    )
}

/// A machine-to-round assignment realising the staircase sequence with
/// `tau_max + 1` machines: rounds `1..=tau_max+1` come from distinct machines
/// and every later round from the last of them.
pub fn staircase_machine_assignment(horizon: usize, tau_max: usize) -> Result<Vec<usize>> {
    staircase_adversarial(horizon, tau_max)?;
    Ok((0..horizon).map(|i| i.min(tau_max)).collect())
}

/// `d_t = 0` for `t <= T/2 + 1`, else `t - 1`.
pub fn half_outlier(horizon: usize) -> Result<DelaySequence> {
    ensure(horizon >= 4 && horizon.is_multiple_of(2), || {
        format!("horizon must be even and at least 4, got {horizon}")
    })?;
    let cut = horizon / 2 + 1;
    DelaySequence::new((0..horizon).map(|i| if i < cut { 0 } else { i }).collect())
}

/// One machine `n` times faster than `machines - 1` others:
/// `T = n + M - 1`, `d_t = 0` for `t <= n`, else `t - 1`.
pub fn one_fast_machine(n: usize, machines: usize) -> Result<DelaySequence> {
    ensure(n >= 1, || "n must be at least 1".into())?;
    ensure(machines >= 2, || "need at least two machines".into())?;
    let horizon = n + machines - 1;
    DelaySequence::new((0..horizon).map(|i| if i < n { 0 } else { i }).collect())
}

/// Delays induced by a machine-per-round assignment, where each machine
/// restarts on the model that is current right after its own delivery:
/// `d_t = t - (previous round of the same machine + 1)`.
pub fn from_machine_assignment(assignment: &[usize]) -> Result<DelaySequence> {
    ensure(!assignment.is_empty(), || "assignment is empty".into())?;
    let machines = assignment.iter().max().map_or(0, |m| m + 1);
    let mut restart = vec![1usize; machines];
    let delays = assignment
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let t = i + 1;
            let d = t - restart[m];
            restart[m] = t + 1;
            d
        })
        .collect();
    DelaySequence::with_origin(delays, DelayOrigin::MachineSimulated { machines })
}

/// Per-worker compute-time distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComputeTimeModel {
    /// `1 + Poisson(base)` with probability `fast_prob`, otherwise
    /// `1 + Poisson(slow_multiplier * base)`.
    PoissonMixture {
        fast_prob: f64,
        base: f64,
        slow_multiplier: f64,
    },
    /// Worker `m` always takes `times[m]` ticks.
    Fixed { times: Vec<u64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerSchedule {
    pub machines: usize,
    pub compute: ComputeTimeModel,
    pub seed: u64,
}

impl WorkerSchedule {
    /// Two-Poisson mixture with weight 0.92 on `Poisson(P)` and 0.08 on
    /// `Poisson(150 P)`, shifted by one.
    pub fn poisson_mixture(machines: usize, base: f64, seed: u64) -> Self {
        Self {
            machines,
            compute: ComputeTimeModel::PoissonMixture {
                fast_prob: 0.92,
                base,
                slow_multiplier: 150.0,
            },
            seed,
        }
    }

    pub fn fixed(times: Vec<u64>) -> Self {
        Self {
            machines: times.len(),
            compute: ComputeTimeModel::Fixed { times },
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure(self.machines >= 1, || "need at least one worker".into())?;
        match &self.compute {
            ComputeTimeModel::PoissonMixture {
                fast_prob,
                base,
                slow_multiplier,
            } => {
                ensure(*base > 0.0, || format!("Poisson parameter must be positive, got {base}"))?;
                ensure((0.0..=1.0).contains(fast_prob), || {
                    format!("mixture weight {fast_prob} outside [0, 1]")
                })?;
                ensure(*slow_multiplier > 0.0, || "slow multiplier must be positive".into())
            }
            ComputeTimeModel::Fixed { times } => {
                ensure(times.len() == self.machines, || {
                    format!("{} fixed times for {} workers", times.len(), self.machines)
                })?;
                ensure(times.iter().all(|&c| c >= 1), || "compute times must be >= 1".into())
            }
        }
    }
}

/// Phase one: the compute-time stream of a single worker. Each worker owns an
/// independent generator, so the streams do not depend on the event order.
struct ComputeStream {
    rng: ChaCha8Rng,
    fast: Option<Poisson<f64>>,
    slow: Option<Poisson<f64>>,
    fast_prob: f64,
    fixed: u64,
}

impl ComputeStream {
    fn new(schedule: &WorkerSchedule, worker: usize) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(
            schedule
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(worker as u64),
        );
        match &schedule.compute {
            ComputeTimeModel::PoissonMixture {
                fast_prob,
                base,
                slow_multiplier,
            } => Self {
                rng,
                fast: Some(Poisson::new(*base).expect("validated")),
                slow: Some(Poisson::new(base * slow_multiplier).expect("validated")),
                fast_prob: *fast_prob,
                fixed: 0,
            },
            ComputeTimeModel::Fixed { times } => Self {
                rng,
                fast: None,
                slow: None,
                fast_prob: 1.0,
                fixed: times[worker],
            },
        }
    }

    fn next(&mut self) -> u64 {
        match (&self.fast, &self.slow) {
            (Some(fast), Some(slow)) => {
                let draw = if self.rng.random::<f64>() < self.fast_prob {
                    fast.sample(&mut self.rng)
                } else {
                    slow.sample(&mut self.rng)
                };
                1 + draw as u64
            }
            _ => self.fixed,
        }
    }
}

/// Simulates `machines` workers delivering gradients to a server.
///
/// Every worker starts at time 0 on the round-1 model. A delivery is one
/// round; the delivering worker immediately restarts on the model of the next
/// round. Workers finishing in the same tick deliver in index order.
pub fn simulate_workers(horizon: usize, schedule: &WorkerSchedule) -> Result<DelaySequence> {
    ensure(horizon >= 1, || "horizon must be at least 1".into())?;
    schedule.validate()?;
    let mut streams: Vec<ComputeStream> = (0..schedule.machines)
        .map(|m| ComputeStream::new(schedule, m))
        .collect();
    let mut source = vec![1usize; schedule.machines];
    let mut events: BinaryHeap<Reverse<(u64, usize)>> = streams
        .iter_mut()
        .enumerate()
        .map(|(m, s)| Reverse((s.next(), m)))
        .collect();

    let mut delays = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let Reverse((time, m)) = events.pop().expect("every worker is always scheduled");
        delays.push(t - source[m]);
        source[m] = t + 1;
        events.push(Reverse((time + streams[m].next(), m)));
    }
    DelaySequence::with_origin(
        delays,
        DelayOrigin::MachineSimulated {
            machines: schedule.machines,
        },
    )
}
