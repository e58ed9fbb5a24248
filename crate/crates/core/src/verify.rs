//! The built-in verification battery behind `async-opt verify`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bounds::{
    base_rate, lower_bound_construction, lower_bound_small_stepsize, machine_bound_check, EnvelopeVariant, Setting,
};
use crate::delays::{constant_delay, half_outlier, simulate_workers, DelaySequence, WorkerSchedule};
use crate::engine::HistoryMode;
use crate::error::{Error, Result};
use crate::minibatch::{
    batch_mean_variance, max_accepted_staleness, run_algorithm1, run_minibatch, verify_lemma_updates,
    FixedPointProbe, MiniBatchConfig, Strictness,
};
use crate::optimizers::{build_inner, run_synchronous, Constants, InnerKind};
use crate::problems::{make_convex_lipschitz, make_nonconvex_smooth, make_quadratic, GradientOracle, Problem};
use crate::sweep::{quantile_bound_envelope, run_algorithm2, verify_lemma_sweep, SweepSchedule};

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub claim: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn() -> Result<(bool, String)>;

pub struct Check {
    pub name: &'static str,
    pub claim: &'static str,
    run: CheckFn,
}

pub const CHECKS: &[Check] = &[
    Check {
        name: "lemma1",
        claim: "mini-batching dispatches at least sup_q floor(qT/(B+tau_q)) batches",
        run: check_lemma1,
    },
    Check {
        name: "lemma2",
        claim: "the sweep leaves qT < 2(B_{I+1}+tau_q)K_{I+1} at every quantile",
        run: check_lemma2,
    },
    Check {
        name: "lowerbound",
        claim: "staircase delays force the exact large-stepsize lower bound",
        run: check_lowerbound,
    },
    Check {
        name: "smallstep",
        claim: "small stepsizes stay within [1/2, 1] of the initial distance",
        run: check_smallstep,
    },
    Check {
        name: "machines",
        claim: "M machines give average delay at most M - 1",
        run: check_machines,
    },
    Check {
        name: "quantiles",
        claim: "tau_med <= 2 tau_avg and tau_q is monotone in q",
        run: check_quantiles,
    },
    Check {
        name: "base-rates",
        claim: "inner optimizers meet their exact-constant guarantees",
        run: check_base_rates,
    },
    Check {
        name: "theorem",
        claim: "mini-batched AC-SA under constant delay meets the inner rate at (sigma/sqrt(B), K)",
        run: check_theorem,
    },
    Check {
        name: "adaptivity",
        claim: "the sweep meets the best-quantile envelope on half-outlier delays",
        run: check_adaptivity,
    },
    Check {
        name: "relaxed",
        claim: "the relaxed filter only accepts gradients at most two queries old",
        run: check_relaxed,
    },
    Check {
        name: "variance",
        claim: "dispatched batch means have variance sigma^2/B",
        run: check_variance,
    },
    Check {
        name: "mutation",
        claim: "a corrupted filter is caught by the counting check",
        run: check_mutation,
    },
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.name).collect()
}

/// Runs every check, or only the named one.
pub fn run_checks(only: Option<&str>) -> Result<Vec<CheckOutcome>> {
    let selected: Vec<&Check> = match only {
        None => CHECKS.iter().collect(),
        Some(name) => {
            let c = CHECKS.iter().find(|c| c.name == name).ok_or_else(|| {
                Error::Config(format!("unknown check {name:?}; known: {}", check_names().join(", ")))
            })?;
            vec![c]
        }
    };
    Ok(selected
        .into_iter()
        .map(|c| {
            let start = Instant::now();
            let (passed, detail) = match (c.run)() {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckOutcome {
                name: c.name,
                claim: c.claim,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect())
}

pub fn format_table(outcomes: &[CheckOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        out.push_str(&format!(
            "[{}] {:<11} {:>7.2}s  {}\n        {}\n",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.seconds,
            o.claim,
            o.detail
        ));
    }
    out
}

/// A random delay sequence mixing zero delays, bounded uniform delays and
/// occasional maximal ones.
pub fn random_delays(rng: &mut impl Rng, horizon: usize) -> DelaySequence {
    let cap = rng.random_range(0..horizon);
    let p_zero: f64 = rng.random();
    let p_max: f64 = rng.random::<f64>() * 0.2;
    let delays = (0..horizon)
        .map(|i| {
            let u: f64 = rng.random();
            let d = if u < p_zero {
                0
            } else if u < p_zero + p_max {
                i
            } else {
                rng.random_range(0..=cap)
            };
            d.min(i)
        })
        .collect();
    DelaySequence::new(delays).expect("delays are feasible by construction")
}

fn quadratic() -> Problem {
    make_quadratic(1, 1.0, &[0.0]).expect("valid quadratic")
}

fn lemma1_failures(strictness: Strictness, sequences: usize, seed: u64) -> Result<(usize, String)> {
    let problem = quadratic();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(DelaySequence, usize)> = (0..sequences)
        .map(|_| {
            let t = rng.random_range(16..=512);
            let b = rng.random_range(1..=16);
            (random_delays(&mut rng, t), b)
        })
        .collect();
    let results: Vec<Result<bool>> = cases
        .par_iter()
        .map(|(delays, b)| {
            let target = delays.len() / b;
            let mut oracle = GradientOracle::new(&problem, 0.0, 0)?;
            let probe = FixedPointProbe::new(vec![1.0], target);
            let run = run_minibatch(probe, *b, strictness, &mut oracle, delays, HistoryMode::Pruned)?;
            Ok(verify_lemma_updates(&run.log, delays, *b, target).holds)
        })
        .collect();
    let mut failures = 0;
    for r in results {
        if !r? {
            failures += 1;
        }
    }
    Ok((failures, format!("{failures} of {sequences} sequences below the count")))
}

fn check_lemma1() -> Result<(bool, String)> {
    let (failures, detail) = lemma1_failures(Strictness::Exact, 500, 11)?;
    Ok((failures == 0, detail))
}

fn check_mutation() -> Result<(bool, String)> {
    let (failures, _) = lemma1_failures(Strictness::Corrupted, 500, 11)?;
    Ok((
        failures > 0,
        format!("corrupted filter failed the counting check on {failures} of 500 sequences"),
    ))
}

/// A problem matched to each setting, its starting point and constants.
pub fn matched_problem(setting: Setting) -> (Problem, Vec<f64>, Constants) {
    let (problem, w1) = match setting {
        Setting::NonconvexSgd => (make_nonconvex_smooth(1, 1.0).expect("valid"), vec![1.0]),
        Setting::PsgdConvexLipschitz => (make_convex_lipschitz(1, 1.0, 1.0).expect("valid"), vec![0.5]),
        _ => (quadratic(), vec![1.0]),
    };
    let c = Constants::from_problem(&problem, &w1);
    (problem, w1, c)
}

fn check_lemma2() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let seqs: Vec<DelaySequence> = (0..200)
        .map(|_| {
            let t = rng.random_range(2..=1024);
            random_delays(&mut rng, t)
        })
        .collect();
    let mut failures = 0;
    let mut levels = 0;
    for setting in Setting::ALL {
        let (problem, w1, c) = matched_problem(setting);
        let schedule = SweepSchedule::new(setting, c, 1.0)?;
        let results: Vec<Result<(bool, usize)>> = seqs
            .par_iter()
            .enumerate()
            .map(|(i, delays)| {
                let mut oracle = GradientOracle::new(&problem, 1.0, i as u64)?;
                let r = run_algorithm2(schedule, &problem, &mut oracle, delays, &w1, i as u64)?;
                let report = verify_lemma_sweep(r.completed_epochs(), delays, &schedule);
                Ok((report.holds, report.levels_checked))
            })
            .collect();
        for r in results {
            let (holds, n) = r?;
            levels += n;
            if !holds {
                failures += 1;
            }
        }
    }
    Ok((
        failures == 0,
        format!("{failures} failures over 800 runs, {levels} quantile levels checked"),
    ))
}

fn check_lowerbound() -> Result<(bool, String)> {
    let tau_max = 100;
    let c = lower_bound_construction(1000, tau_max, 1.0, 1.0, 6.1 / (1.0 + tau_max as f64))?;
    let o = c.simulate()?;
    Ok((
        o.holds(1e-12),
        format!(
            "trajectory rel. error {:.1e}, avg |grad|^2 {:.4} >= {:.4}, avg gap {:.4} >= {:.4}",
            o.max_trajectory_rel_error, o.avg_grad_sq, o.avg_grad_sq_bound, o.avg_subopt, o.avg_subopt_bound
        ),
    ))
}

fn check_smallstep() -> Result<(bool, String)> {
    let delays = constant_delay(1000, 0)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for eta in [1e-4, 1e-2] {
        let o = lower_bound_small_stepsize(1000, 1.0, eta, 1.0)?.simulate(&delays)?;
        ok &= o.holds();
        parts.push(format!("eta={eta}: ratio in [{:.4}, {:.4}]", o.min_ratio, o.max_ratio));
    }
    Ok((ok, parts.join("; ")))
}

fn check_machines() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for run in 0..100u64 {
        let m = rng.random_range(2..=16);
        let t = rng.random_range(100..=2000);
        let seq = simulate_workers(t, &WorkerSchedule::poisson_mixture(m, 4.06, run))?;
        if let crate::bounds::MachineBoundReport::Checked {
            average_delay,
            bound,
            holds,
            ..
        } = machine_bound_check(&seq)
        {
            worst = worst.max(average_delay / bound);
            if !holds {
                failures += 1;
            }
        } else {
            failures += 1;
        }
    }
    Ok((
        failures == 0,
        format!("{failures} failures over 100 runs, largest avg/(M-1) = {worst:.3}"),
    ))
}

fn check_quantiles() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut failures = 0;
    for _ in 0..500 {
        let t = rng.random_range(1..=1000);
        let stats = random_delays(&mut rng, t).stats();
        if stats.tau_avg > 0.0 && stats.tau_med as f64 > 2.0 * stats.tau_avg {
            failures += 1;
        }
        let mut prev = 0;
        for j in 1..=100 {
            let tau = stats.quantile(j as f64 / 100.0)?;
            if tau < prev {
                failures += 1;
                break;
            }
            prev = tau;
        }
    }
    Ok((failures == 0, format!("{failures} failures over 500 sequences")))
}

/// Mean over seeds of the guaranteed metric after `budget` synchronous queries.
fn mean_synchronous_metric(setting: Setting, budget: usize, sigma: f64, seeds: u64) -> Result<(f64, f64)> {
    let (problem, w1, c) = matched_problem(setting);
    let kind = setting.inner_kind();
    let metric = kind.metric();
    let values: Vec<Result<f64>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut alg = build_inner(kind, &problem, &w1, budget, sigma, &c, s)?;
            let mut oracle = GradientOracle::new(&problem, sigma, s.wrapping_add(1 << 32))?;
            let out = run_synchronous(&mut alg, &mut oracle)?;
            Ok(metric.evaluate(&problem, &out.w_hat).expect("optimum is known"))
        })
        .collect();
    let mut sum = 0.0;
    for v in values {
        sum += v?;
    }
    Ok((sum / seeds as f64, base_rate(kind, budget, sigma, &c)?.value))
}

fn check_base_rates() -> Result<(bool, String)> {
    let mut ok = true;
    let mut worst = 0.0f64;
    for setting in Setting::ALL {
        for k in [16, 64, 256] {
            let (mean, bound) = mean_synchronous_metric(setting, k, 1.0, 400)?;
            ok &= mean <= 1.05 * bound;
            worst = worst.max(mean / bound);
        }
    }
    Ok((ok, format!("largest mean/bound ratio {worst:.3} (limit 1.05)")))
}

/// Mean suboptimality and largest accepted staleness of mini-batched AC-SA
/// on the unit quadratic with constant delay 8 and `T = 4096`.
fn constant_delay_acsa(strictness: Strictness, seeds: u64) -> Result<(f64, usize, usize)> {
    let problem = quadratic();
    let w1 = [1.0];
    let c = Constants::from_problem(&problem, &w1);
    let delays = constant_delay(4096, 8)?;
    let config = MiniBatchConfig::new(1.0, 8).with_strictness(strictness);
    let runs: Vec<Result<(f64, usize, bool)>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut oracle = GradientOracle::new(&problem, 1.0, s)?;
            let (_, run) = run_algorithm1(
                |sigma, k| build_inner(InnerKind::Acsa, &problem, &w1, k, sigma, &c, s),
                &config,
                1.0,
                &mut oracle,
                &delays,
            )?;
            let gap = problem.suboptimality(run.completion.point()).expect("known optimum");
            Ok((gap, max_accepted_staleness(&run.log), run.completion.is_complete()))
        })
        .collect();
    let (mut sum, mut stale, mut incomplete) = (0.0, 0, 0);
    for r in runs {
        let (gap, s, complete) = r?;
        sum += gap;
        stale = stale.max(s);
        incomplete += usize::from(!complete);
    }
    Ok((sum / seeds as f64, stale, incomplete))
}

fn check_theorem() -> Result<(bool, String)> {
    let (mean, _, incomplete) = constant_delay_acsa(Strictness::Exact, 200)?;
    let c = Constants::from_problem(&quadratic(), &[1.0]);
    let bound = base_rate(InnerKind::Acsa, 4096 / 17, 1.0 / 8f64.sqrt(), &c)?.value;
    Ok((
        mean <= 1.05 * bound && incomplete == 0,
        format!("mean gap {mean:.3e} vs bound {bound:.3e}, {incomplete} incomplete runs"),
    ))
}

fn check_relaxed() -> Result<(bool, String)> {
    let (_, stale, _) = constant_delay_acsa(Strictness::RelaxedKMinus2, 200)?;
    Ok((stale <= 2, format!("largest accepted staleness {stale} queries")))
}

fn check_adaptivity() -> Result<(bool, String)> {
    let problem = quadratic();
    let w1 = [1.0];
    let c = Constants::from_problem(&problem, &w1);
    let delays = half_outlier(4096)?;
    let schedule = SweepSchedule::new(Setting::NonconvexSgd, c, 1.0)?;
    let values: Vec<Result<f64>> = (0..200u64)
        .into_par_iter()
        .map(|s| {
            let mut oracle = GradientOracle::new(&problem, 1.0, s)?;
            let r = run_algorithm2(schedule, &problem, &mut oracle, &delays, &w1, s)?;
            Ok(problem.grad_norm_sq(&r.w_hat))
        })
        .collect();
    let mut sum = 0.0;
    for v in values {
        sum += v?;
    }
    let mean = sum / 200.0;
    let env = quantile_bound_envelope(Setting::NonconvexSgd, EnvelopeVariant::Stated, &delays.stats(), 1.0, &c)?;
    Ok((
        mean <= env.value && env.value < 0.5 * env.value_at_one,
        format!(
            "mean |grad|^2 {mean:.3e}, envelope {:.3e} at q={:.3}, envelope at q=1 {:.3e}",
            env.value, env.q, env.value_at_one
        ),
    ))
}

fn check_variance() -> Result<(bool, String)> {
    let problem = quadratic();
    let mut ok = true;
    let mut parts = Vec::new();
    for b in [1usize, 4, 16] {
        let mut oracle = GradientOracle::new(&problem, 1.0, b as u64)?;
        let v = batch_mean_variance(&mut oracle, &[0.5], b, 10_000, Strictness::Exact)?;
        let ratio = v * b as f64;
        ok &= (0.9..=1.1).contains(&ratio);
        parts.push(format!("B={b}: {ratio:.3}"));
    }
    Ok((ok, format!("variance * B / sigma^2: {}", parts.join(", "))))
}
