//! The asynchronous round protocol.
//!
//! At every round `t = 1..T` the algorithm plays a point `w_t`; the
//! environment answers with a stochastic gradient evaluated at `w_{t-d_t}`
//! together with the delay `d_t`.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::delays::DelaySequence;
use crate::error::{Error, Result};
use crate::problems::GradientOracle;

/// One gradient delivered at round `round`, computed at the point played at
/// `source_round = round - delay`.
#[derive(Clone, Copy, Debug)]
pub struct Delivery<'a> {
    pub round: usize,
    pub delay: usize,
    pub source_round: usize,
    pub source_point_id: usize,
    pub gradient: &'a [f64],
}

/// An algorithm that plays one point per round and consumes delayed
/// gradients.
///
/// Point ids identify distinct points; an algorithm keeps reporting the same
/// id for as long as its played point is unchanged.
pub trait AsyncAlgorithm {
    fn current_point(&self) -> &[f64];
    fn current_point_id(&self) -> usize;
    /// Returns whether the gradient was used.
    fn receive(&mut self, delivery: Delivery<'_>) -> bool;

    /// Number of rounds the algorithm was configured for, if it has one.
    fn horizon(&self) -> Option<usize> {
        None
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    /// Keep every played point.
    #[default]
    Full,
    /// Drop points no future round can reference. Uses the whole delay
    /// sequence up front.
    Pruned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub played_point_id: usize,
    #[serde(rename = "d_t")]
    pub delay: usize,
    pub source_point_id: usize,
    pub accepted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub records: Vec<RoundRecord>,
    pub used: usize,
    pub discarded: usize,
    /// Largest number of stored points at any time.
    pub peak_history: usize,
}

impl RoundLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks that every source id is the id played at round `t - d_t` and
    /// that the totals add up.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        for (i, r) in self.records.iter().enumerate() {
            if r.t != i + 1 {
                return Err(format!("record {i} has round {}", r.t));
            }
            if r.delay >= r.t {
                return Err(format!("round {} has infeasible delay {}", r.t, r.delay));
            }
            let played = self.records[r.t - r.delay - 1].played_point_id;
            if played != r.source_point_id {
                return Err(format!(
                    "round {}: source id {} but round {} played {}",
                    r.t,
                    r.source_point_id,
                    r.t - r.delay,
                    played
                ));
            }
        }
        let used = self.records.iter().filter(|r| r.accepted).count();
        if used != self.used || self.used + self.discarded != self.records.len() {
            return Err(format!(
                "totals used={} discarded={} do not match {} records with {used} accepted",
                self.used,
                self.discarded,
                self.records.len()
            ));
        }
        Ok(())
    }

    /// Columns `t, d_t, accepted`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "d_t", "accepted"])?;
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                r.delay.to_string(),
                u8::from(r.accepted).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Segment {
    first_round: usize,
    id: usize,
    point: Vec<f64>,
}

/// Played points, stored once per distinct id.
struct History {
    segments: VecDeque<Segment>,
    peak: usize,
}

impl History {
    fn new() -> Self {
        Self {
            segments: VecDeque::new(),
            peak: 0,
        }
    }

    fn play(&mut self, round: usize, id: usize, point: &[f64]) {
        if self.segments.back().is_some_and(|s| s.id == id) {
            return;
        }
        self.segments.push_back(Segment {
            first_round: round,
            id,
            point: point.to_vec(),
        });
        self.peak = self.peak.max(self.segments.len());
    }

    fn lookup(&self, round: usize) -> &Segment {
        let idx = self.segments.partition_point(|s| s.first_round <= round);
        assert!(idx > 0, "round {round} was pruned from history");
        &self.segments[idx - 1]
    }

    /// Drops segments that end before `round`.
    fn prune_before(&mut self, round: usize) {
        while self.segments.len() > 1 && self.segments[1].first_round <= round {
            self.segments.pop_front();
        }
    }
}

/// Runs the round protocol for `delays.len()` rounds.
///
/// The gradient for round `t` is drawn from the oracle at round `t`, at the
/// stored point of round `t - d_t`, so the noise stream does not depend on
/// the delays.
pub fn run<A: AsyncAlgorithm + ?Sized>(
    algorithm: &mut A,
    oracle: &mut GradientOracle<'_>,
    delays: &DelaySequence,
    mode: HistoryMode,
) -> Result<RoundLog> {
    let horizon = delays.len();
    if let Some(requested) = algorithm.horizon() {
        if requested > horizon {
            return Err(Error::Budget {
                requested,
                available: horizon,
            });
        }
    }
    let earliest = match mode {
        HistoryMode::Full => Vec::new(),
        HistoryMode::Pruned => delays.earliest_sources(),
    };
    let mut history = History::new();
    let mut gradient = vec![0.0; oracle.problem().dimension()];
    let mut log = RoundLog {
        records: Vec::with_capacity(horizon),
        ..RoundLog::default()
    };

    for (i, &delay) in delays.as_slice().iter().enumerate() {
        let t = i + 1;
        if delay > t - 1 {
            return Err(Error::Protocol {
                round: t,
                delay,
                limit: t - 1,
            });
        }
        let played_id = algorithm.current_point_id();
        history.play(t, played_id, algorithm.current_point());
        if let Some(&e) = earliest.get(i) {
            history.prune_before(e);
        }
        let source_round = t - delay;
        let segment = history.lookup(source_round);
        let source_id = segment.id;
        oracle.sample_into(&segment.point, &mut gradient)?;
        let accepted = algorithm.receive(Delivery {
            round: t,
            delay,
            source_round,
            source_point_id: source_id,
            gradient: &gradient,
        });
        if accepted {
            log.used += 1;
        } else {
            log.discarded += 1;
        }
        log.records.push(RoundRecord {
            t,
            played_point_id: played_id,
            delay,
            source_point_id: source_id,
            accepted,
        });
    }
    log.peak_history = history.peak;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delays::{constant_delay, staircase_adversarial};
    use crate::optimizers::{run_synchronous, QueryAlgorithm, Sgd, VanillaAsyncSgd};
    use crate::problems::{make_quadratic, Domain};
    use proptest::prelude::*;

    #[test]
    fn zero_delays_match_synchronous_sgd() {
        let p = make_quadratic(3, 2.0, &[1.0, 0.0, -1.0]).unwrap();
        let w1 = [0.5, 0.5, 0.5];
        let eta = 0.1;
        let mut vanilla = VanillaAsyncSgd::new(Domain::Unconstrained, &w1, eta)
            .unwrap()
            .keep_iterates();
        let mut o = GradientOracle::new(&p, 0.7, 3).unwrap();
        let log = run(&mut vanilla, &mut o, &constant_delay(50, 0).unwrap(), HistoryMode::Full).unwrap();
        assert_eq!(log.used, 50);

        let mut sgd = Sgd::with_step(Domain::Unconstrained, &w1, 50, eta, 0).unwrap().record_trace();
        let mut o = GradientOracle::new(&p, 0.7, 3).unwrap();
        let trace = run_synchronous(&mut sgd, &mut o).unwrap().trace.unwrap();
        assert_eq!(vanilla.iterates(), &trace[..]);
        assert_eq!(vanilla.last_iterate(), sgd.iterate());
    }

    #[test]
    fn staircase_reproduces_closed_form() {
        let (beta, w1, eta, tau) = (1.0, 1.0, 2.0, 4);
        let p = make_quadratic(1, beta, &[0.0]).unwrap();
        let mut alg = VanillaAsyncSgd::new(Domain::Unconstrained, &[w1], eta)
            .unwrap()
            .keep_iterates();
        let mut o = GradientOracle::new(&p, 0.0, 0).unwrap();
        let delays = staircase_adversarial(20, tau).unwrap();
        run(&mut alg, &mut o, &delays, HistoryMode::Full).unwrap();
        for t in 1..=tau + 2 {
            let expect = w1 * (1.0 - eta * beta * (t as f64 - 1.0));
            assert_eq!(alg.iterates()[t - 1][0], expect, "t={t}");
        }
    }

    #[test]
    fn log_is_consistent_and_replayable() {
        let p = make_quadratic(2, 1.0, &[0.0, 0.0]).unwrap();
        let delays = DelaySequence::new(vec![0, 1, 0, 3, 2, 5, 0, 1, 7, 2]).unwrap();
        let go = || {
            let mut alg = VanillaAsyncSgd::new(Domain::Unconstrained, &[1.0, 1.0], 0.3).unwrap();
            let mut o = GradientOracle::new(&p, 1.0, 11).unwrap();
            let log = run(&mut alg, &mut o, &delays, HistoryMode::Full).unwrap();
            (log, alg.last_iterate().to_vec())
        };
        let (a, wa) = go();
        let (b, wb) = go();
        assert_eq!(a, b);
        assert_eq!(wa, wb);
        a.check_consistency().unwrap();
        assert_eq!(a.records[3].source_point_id, 1);
        assert_eq!(a.records[8].source_point_id, 2);
    }

    #[test]
    fn csv_columns() {
        let log = RoundLog {
            records: vec![
                RoundRecord { t: 1, played_point_id: 1, delay: 0, source_point_id: 1, accepted: true },
                RoundRecord { t: 2, played_point_id: 2, delay: 1, source_point_id: 1, accepted: false },
            ],
            used: 1,
            discarded: 1,
            peak_history: 2,
        };
        log.check_consistency().unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,d_t,accepted\n1,0,1\n2,1,0\n");
    }

    #[test]
    fn corrupted_log_is_detected() {
        let log = RoundLog {
            records: vec![
                RoundRecord { t: 1, played_point_id: 1, delay: 0, source_point_id: 1, accepted: true },
                RoundRecord { t: 2, played_point_id: 2, delay: 1, source_point_id: 2, accepted: true },
            ],
            used: 2,
            discarded: 0,
            peak_history: 2,
        };
        assert!(log.check_consistency().is_err());
    }

    struct Greedy {
        horizon: usize,
    }

    impl AsyncAlgorithm for Greedy {
        fn current_point(&self) -> &[f64] {
            &[0.0]
        }
        fn current_point_id(&self) -> usize {
            1
        }
        fn receive(&mut self, _: Delivery<'_>) -> bool {
            false
        }
        fn horizon(&self) -> Option<usize> {
            Some(self.horizon)
        }
    }

    #[test]
    fn requesting_too_many_rounds_is_a_budget_error() {
        let p = make_quadratic(1, 1.0, &[0.0]).unwrap();
        let mut o = GradientOracle::new(&p, 0.0, 0).unwrap();
        let d = constant_delay(5, 0).unwrap();
        let err = run(&mut Greedy { horizon: 6 }, &mut o, &d, HistoryMode::Full).unwrap_err();
        assert!(matches!(err, Error::Budget { requested: 6, available: 5 }));
        let log = run(&mut Greedy { horizon: 5 }, &mut o, &d, HistoryMode::Full).unwrap();
        assert_eq!(log.discarded, 5);
    }

    #[test]
    fn pruning_bounds_memory_for_constant_delay() {
        let p = make_quadratic(1, 1.0, &[0.0]).unwrap();
        let mut alg = VanillaAsyncSgd::new(Domain::Unconstrained, &[1.0], 0.01).unwrap();
        let mut o = GradientOracle::new(&p, 1.0, 0).unwrap();
        let log = run(&mut alg, &mut o, &constant_delay(500, 7).unwrap(), HistoryMode::Pruned).unwrap();
        assert!(log.peak_history <= 8 + 1, "peak {}", log.peak_history);
    }

    proptest! {
        #[test]
        fn pruned_history_matches_full(raw in prop::collection::vec(0usize..40, 1..120), seed in 0u64..1000) {
            let delays: Vec<usize> = raw.iter().enumerate().map(|(i, &d)| d.min(i)).collect();
            let delays = DelaySequence::new(delays).unwrap();
            let p = make_quadratic(2, 1.0, &[0.5, -0.5]).unwrap();
            let go = |mode| {
                let mut alg = VanillaAsyncSgd::new(Domain::Unconstrained, &[1.0, 2.0], 0.05).unwrap();
                let mut o = GradientOracle::new(&p, 0.5, seed).unwrap();
                let log = run(&mut alg, &mut o, &delays, mode).unwrap();
                (log.records, alg.last_iterate().to_vec())
            };
            prop_assert_eq!(go(HistoryMode::Full), go(HistoryMode::Pruned));
        }
    }

    #[allow(dead_code)]
    fn assert_object_safe(_: &dyn AsyncAlgorithm, _: &dyn QueryAlgorithm) {}
}
