//! Acceptance suite. Every expected value is recomputed here from first
//! principles; the library is only used to produce the runs being judged.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use async_opt::bounds::{lower_bound_construction, lower_bound_small_stepsize, Setting};
use async_opt::delays::{simulate_workers, DelayOrigin, DelaySequence, WorkerSchedule};
use async_opt::engine::{HistoryMode, RoundLog};
use async_opt::minibatch::{run_algorithm1, run_minibatch, FixedPointProbe, MiniBatchConfig, Strictness};
use async_opt::optimizers::{build_inner, run_synchronous, Constants, InnerKind};
use async_opt::problems::{make_convex_lipschitz, make_nonconvex_smooth, make_quadratic, GradientOracle, Problem};
use async_opt::sweep::{run_algorithm2, SweepSchedule};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

// ---------- test-side oracles ----------

fn random_delays(rng: &mut ChaCha8Rng, horizon: usize) -> Vec<usize> {
    let style = rng.random_range(0..4);
    let cap = rng.random_range(0..horizon);
    (0..horizon)
        .map(|i| {
            let d = match style {
                0 => rng.random_range(0..=cap),
                1 => {
                    if rng.random_bool(0.3) {
                        i
                    } else {
                        rng.random_range(0..=cap.min(4))
                    }
                }
                2 => {
                    if i % (cap + 1) == 0 {
                        cap
                    } else {
                        0
                    }
                }
                _ => ((rng.random::<f64>().powi(3)) * cap as f64) as usize,
            };
            d.min(i)
        })
        .collect()
}

/// `tau_q` for `q = j / T`: the `j`-th smallest delay.
fn sorted(d: &[usize]) -> Vec<usize> {
    let mut s = d.to_vec();
    s.sort_unstable();
    s
}

/// Minimal integer `tau` with `#{d <= tau} >= qT`, by direct search.
fn brute_quantile(d: &[usize], q: f64) -> usize {
    let need = q * d.len() as f64;
    (0..).find(|&tau| d.iter().filter(|&&x| x <= tau).count() as f64 >= need - 1e-9).unwrap()
}

/// `sup_q floor(qT / (B + tau_q))` over every `q = j / T`.
fn brute_supremum(d: &[usize], b: usize) -> usize {
    let s = sorted(d);
    (1..=d.len()).map(|j| j / (b + s[j - 1])).max().unwrap()
}

/// Replays the stale-gradient filter: query `k` starts the round after the
/// previous dispatch and accepts a round iff its source is not older than
/// that. Returns completed epochs and dispatches in the final epoch.
fn replay_filter(d: &[usize], epochs: &[(usize, usize)]) -> (usize, usize) {
    let (mut epoch, mut start, mut fill, mut dispatched) = (0, 1, 0, 0);
    for (i, &delay) in d.iter().enumerate() {
        if epoch == epochs.len() {
            break;
        }
        let t = i + 1;
        if t - delay >= start {
            fill += 1;
            if fill == epochs[epoch].1 {
                fill = 0;
                dispatched += 1;
                start = t + 1;
                if dispatched == epochs[epoch].0 {
                    epoch += 1;
                    if epoch < epochs.len() {
                        dispatched = 0;
                    }
                }
            }
        }
    }
    (epoch, dispatched)
}

fn quad() -> Problem {
    make_quadratic(1, 1.0, &[0.0]).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let e = start.elapsed();
    if e < limit {
        Ok(())
    } else {
        Err(format!("took {e:.1?}, limit {limit:?}"))
    }
}

// ---------- criteria ----------

fn ac1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cases: Vec<(Vec<usize>, usize)> = (0..500)
        .map(|_| {
            let t = rng.random_range(1..=512);
            let b = rng.random_range(1..=16);
            (random_delays(&mut rng, t), b)
        })
        .collect();
    let problem = quad();
    let failures: Vec<String> = cases
        .par_iter()
        .enumerate()
        .filter_map(|(n, (d, b))| {
            let seq = DelaySequence::new(d.clone()).unwrap();
            // any budget at least T/B never binds, since the supremum is at most T/B
            let target = d.len() / b + 1;
            let mut oracle = GradientOracle::new(&problem, 0.0, 0).unwrap();
            let probe = FixedPointProbe::new(vec![1.0], target);
            let run = run_minibatch(probe, *b, Strictness::Exact, &mut oracle, &seq, HistoryMode::Pruned).unwrap();
            let sup = brute_supremum(d, *b);
            let (_, replayed) = replay_filter(d, &[(target, *b)]);
            let got = run.diagnostics.dispatched;
            (got < sup || got != replayed).then(|| format!("case {n}: dispatched {got}, replay {replayed}, sup {sup}"))
        })
        .collect();
    within(start, Duration::from_secs(30))?;
    if failures.is_empty() {
        Ok("500 sequences, zero failures".into())
    } else {
        Err(format!("{} failures, first: {}", failures.len(), failures[0]))
    }
}

/// `B_i` for `sigma^2 = p / 4`, `beta = 1`, `F = 1/2`, `D = 1`, `G = 1`, in
/// integer arithmetic.
fn oracle_batch(setting: Setting, p: usize, i: usize) -> usize {
    let (k, p) = (1u128 << (i - 1), p as u128);
    let ceil = |num: u128, den: u128| num.div_ceil(den);
    let b = match setting {
        Setting::NonconvexSgd | Setting::SgdConvexSmooth => ceil(p * k, 4),
        Setting::AcsaConvexSmooth => ceil(p * k * (k + 1) * (k + 1), 48),
        Setting::PsgdConvexLipschitz => ceil(p, 4),
    };
    b.max(1) as usize
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let cases: Vec<(Vec<usize>, usize)> = (0..200)
        .map(|_| {
            let t = rng.random_range(2..=2048);
            let p = [1, 4, 16][rng.random_range(0..3)];
            (random_delays(&mut rng, t), p)
        })
        .collect();
    let quadratic = quad();
    let lipschitz = make_convex_lipschitz(1, 1.0, 1.0).unwrap();
    let mut failures = Vec::new();
    let mut levels = 0usize;
    for setting in Setting::ALL {
        let (problem, w1) = match setting {
            Setting::PsgdConvexLipschitz => (&lipschitz, vec![0.5]),
            _ => (&quadratic, vec![1.0]),
        };
        let results: Vec<(usize, Option<String>)> = cases
            .par_iter()
            .enumerate()
            .map(|(n, (d, p))| {
                let sigma = (*p as f64).sqrt() / 2.0;
                let c = Constants {
                    beta: Some(1.0),
                    initial_gap: Some(0.5),
                    distance: Some(1.0),
                    lipschitz: Some(1.0),
                };
                let schedule = SweepSchedule::new(setting, c, sigma).unwrap();
                let seq = DelaySequence::new(d.clone()).unwrap();
                let mut oracle = GradientOracle::new(problem, sigma, n as u64).unwrap();
                let r = run_algorithm2(schedule, problem, &mut oracle, &seq, &w1, n as u64).unwrap();
                // at most 11 epochs fit in 2048 rounds
                let plan: Vec<(usize, usize)> = (1..=13).map(|i| (1 << (i - 1), oracle_batch(setting, *p, i))).collect();
                let (replayed, _) = replay_filter(d, &plan);
                let completed = r.completed_epochs();
                if completed != replayed {
                    return (0, Some(format!("{setting:?} case {n}: {completed} epochs, replay {replayed}")));
                }
                for i in 1..=completed + 1 {
                    if schedule.batch_size(i) != oracle_batch(setting, *p, i) {
                        return (0, Some(format!("{setting:?} case {n}: B_{i} differs")));
                    }
                }
                let (k, b) = (1usize << completed, oracle_batch(setting, *p, completed + 1));
                let s = sorted(d);
                let mut checked = 0;
                for (j, &tau) in s.iter().enumerate() {
                    // largest count with this quantile value
                    if j + 1 < s.len() && s[j + 1] == tau {
                        continue;
                    }
                    checked += 1;
                    if j + 1 >= 2 * (b + tau) * k {
                        return (checked, Some(format!("{setting:?} case {n}: fails at tau {tau}")));
                    }
                }
                (checked, None)
            })
            .collect();
        for (c, f) in results {
            levels += c;
            failures.extend(f);
        }
    }
    within(start, Duration::from_secs(60))?;
    if failures.is_empty() {
        Ok(format!("800 runs, {levels} quantile values, zero failures"))
    } else {
        Err(format!("{} failures, first: {}", failures.len(), failures[0]))
    }
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let (horizon, tau_max, beta, w1) = (1000usize, 100usize, 1.0, 1.0);
    let eta = 6.1 / (beta * 101.0);
    let c = lower_bound_construction(horizon, tau_max, beta, w1, eta).map_err(|e| e.to_string())?;
    let o = c.simulate().map_err(|e| e.to_string())?;
    let d: Vec<usize> = (1..=horizon).map(|t| if t <= tau_max + 1 { t - 1 } else { 0 }).collect();
    if c.delays.as_slice() != d.as_slice() {
        return Err("delay sequence is not the staircase".into());
    }
    // independent scalar replay
    let mut w = vec![w1];
    for t in 1..horizon {
        let g = beta * w[t - d[t - 1] - 1];
        w.push(w[t - 1] - eta * g);
    }
    let mut worst: f64 = 0.0;
    for t in 1..=tau_max + 2 {
        let predicted = w1 * (1.0 - eta * beta * (t as f64 - 1.0));
        worst = worst.max(((o.iterates[t - 1] - predicted) / predicted).abs());
    }
    let replay_gap = o.iterates.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let f = 0.5 * beta * w1 * w1;
    let avg_grad_sq = o.iterates.iter().map(|x| (beta * x).powi(2)).sum::<f64>() / horizon as f64;
    let bound = 4.0 * (1.0 + tau_max as f64) * beta * f / horizon as f64;
    within(start, Duration::from_secs(1))?;
    let detail = format!(
        "trajectory rel. error {worst:.1e}, avg |grad|^2 {avg_grad_sq:.4} vs {bound:.4}, replay gap {replay_gap:.1e}"
    );
    if worst <= 1e-12 && avg_grad_sq >= bound && replay_gap <= 1e-12 && o.iterates.len() == horizon {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac4() -> Outcome {
    let start = Instant::now();
    let (horizon, beta, w1) = (1000usize, 1.0, 1.0);
    let zero = DelaySequence::new(vec![0; horizon]).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for eta in [1e-4, 1e-2] {
        let c = lower_bound_small_stepsize(horizon, beta, eta, w1).map_err(|e| e.to_string())?;
        let o = c.simulate(&zero).map_err(|e| e.to_string())?;
        let denom = f64::max(1.0, 2.0 * beta * eta * horizon as f64);
        let eps = beta / denom;
        let w_star = -1.0;
        let gap0 = w1 - w_star;
        let sandwich = o
            .iterates
            .iter()
            .all(|&w| (w - w_star) >= 0.5 * gap0 && (w - w_star) <= gap0);
        let f0 = 0.5 * eps * gap0 * gap0;
        let avg_g = o.iterates.iter().map(|w| (eps * (w - w_star)).powi(2)).sum::<f64>() / horizon as f64;
        let avg_f = o.iterates.iter().map(|w| 0.5 * eps * (w - w_star).powi(2)).sum::<f64>() / horizon as f64;
        let g_bound = beta * f0 / (2.0 * denom);
        let f_bound = beta * gap0 * gap0 / (8.0 * denom);
        let this = sandwich && avg_g >= g_bound && avg_f >= f_bound && o.iterates.len() == horizon;
        ok &= this;
        parts.push(format!(
            "eta={eta}: sandwich {sandwich}, grad {avg_g:.3e}>={g_bound:.3e}, gap {avg_f:.3e}>={f_bound:.3e}"
        ));
    }
    within(start, Duration::from_secs(1))?;
    if ok {
        Ok(parts.join("; "))
    } else {
        Err(parts.join("; "))
    }
}

fn ac5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for run in 0..100u64 {
        let m = rng.random_range(2..=16);
        let t = rng.random_range(50..=4000);
        let seq = simulate_workers(t, &WorkerSchedule::poisson_mixture(m, 4.06, run)).map_err(|e| e.to_string())?;
        if seq.origin() != &(DelayOrigin::MachineSimulated { machines: m }) || seq.len() != t {
            failures.push(format!("run {run}: wrong origin or length"));
        }
        let total: usize = seq.as_slice().iter().sum();
        worst = worst.max(total as f64 / (t * (m - 1)) as f64);
        if total > (m - 1) * t {
            failures.push(format!("run {run}: sum {total} > {}", (m - 1) * t));
        }
    }
    within(start, Duration::from_secs(30))?;
    if failures.is_empty() {
        Ok(format!("100 runs, largest avg/(M-1) {worst:.3}"))
    } else {
        Err(format!("{} failures, first: {}", failures.len(), failures[0]))
    }
}

fn ac6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut failures = Vec::new();
    for n in 0..500 {
        let t = rng.random_range(1..=600);
        let d = random_delays(&mut rng, t);
        let stats = DelaySequence::new(d.clone()).unwrap().stats();
        let avg = d.iter().sum::<usize>() as f64 / t as f64;
        let med = brute_quantile(&d, 0.5);
        if (stats.tau_avg - avg).abs() > 1e-9 || stats.tau_med != med || stats.tau_max != *d.iter().max().unwrap() {
            failures.push(format!("case {n}: statistics disagree"));
        }
        if avg > 0.0 && med as f64 > 2.0 * avg {
            failures.push(format!("case {n}: median {med} > 2 x {avg}"));
        }
        let mut prev = 0;
        for j in 1..=50 {
            let q = j as f64 / 50.0;
            let tau = stats.quantile(q).map_err(|e| e.to_string())?;
            if tau != brute_quantile(&d, q) || tau < prev {
                failures.push(format!("case {n}: quantile at q={q}"));
                break;
            }
            prev = tau;
        }
    }
    within(start, Duration::from_secs(10))?;
    if failures.is_empty() {
        Ok("500 sequences, zero failures".into())
    } else {
        Err(format!("{} failures, first: {}", failures.len(), failures[0]))
    }
}

fn ac7() -> Outcome {
    let start = Instant::now();
    let sigma: f64 = 1.0;
    let seeds = 400u64;
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in [
        InnerKind::SgdNonconvex,
        InnerKind::SgdConvexSmooth,
        InnerKind::PsgdConvexLipschitz,
        InnerKind::Acsa,
    ] {
        let (problem, w1) = match kind {
            InnerKind::SgdNonconvex => (make_nonconvex_smooth(1, 1.0).unwrap(), 1.0),
            InnerKind::PsgdConvexLipschitz => (make_convex_lipschitz(1, 1.0, 1.0).unwrap(), 0.5),
            _ => (quad(), 1.0),
        };
        let (beta, g) = (1.0, 1.0);
        // f(w) = w^2/(2(1+w^2)) for the nonconvex problem, w^2/2 otherwise
        let f = if kind == InnerKind::SgdNonconvex { 0.25 } else { 0.5 };
        let d = if kind == InnerKind::PsgdConvexLipschitz { 1.0 } else { w1 };
        let c = Constants {
            beta: Some(beta),
            initial_gap: Some(f),
            distance: Some(d),
            lipschitz: Some(g),
        };
        for k in [16usize, 64, 256] {
            let kf = k as f64;
            let bound = match kind {
                InnerKind::SgdNonconvex => 2.0 * beta * f / kf + (8.0 * sigma * sigma * beta * f / kf).sqrt(),
                InnerKind::SgdConvexSmooth => beta * d * d / kf + 2.0 * sigma * d / kf.sqrt(),
                InnerKind::PsgdConvexLipschitz => 2.0 * d * (g * g + sigma * sigma).sqrt() / kf.sqrt(),
                InnerKind::Acsa => 4.0 * beta * d * d / (kf * (kf + 1.0)) + 4.0 * sigma * d / (3.0 * kf).sqrt(),
            };
            let values: Vec<f64> = (0..seeds)
                .into_par_iter()
                .map(|s| {
                    let mut alg = build_inner(kind, &problem, &[w1], k, sigma, &c, s).unwrap();
                    let mut oracle = GradientOracle::new(&problem, sigma, 10_000 + s).unwrap();
                    let w = run_synchronous(&mut alg, &mut oracle).unwrap().w_hat[0];
                    match kind {
                        InnerKind::SgdNonconvex => {
                            let s = 1.0 + w * w;
                            (beta * w / (s * s)).powi(2)
                        }
                        InnerKind::PsgdConvexLipschitz => g * w.abs(),
                        _ => 0.5 * beta * w * w,
                    }
                })
                .collect();
            let m = mean(&values);
            ok &= m <= 1.05 * bound;
            parts.push(format!("{kind:?} K={k}: {:.2}", m / bound));
        }
    }
    within(start, Duration::from_secs(300))?;
    let detail = format!("mean/bound: {}", parts.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Runs mini-batched AC-SA on the unit quadratic with constant delay 8,
/// `T = 4096`, `q = 1`, `tau_hat = 8`; returns each seed's gap and log.
fn constant_delay_runs(strictness: Strictness, seeds: u64) -> Vec<(f64, RoundLog, bool)> {
    let problem = quad();
    let d: Vec<usize> = (0..4096).map(|i: usize| i.min(8)).collect();
    let seq = DelaySequence::new(d).unwrap();
    let c = Constants {
        beta: Some(1.0),
        initial_gap: Some(0.5),
        distance: Some(1.0),
        lipschitz: None,
    };
    let config = MiniBatchConfig::new(1.0, 8).with_strictness(strictness);
    (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut oracle = GradientOracle::new(&problem, 1.0, s).unwrap();
            let (schedule, run) = run_algorithm1(
                |sigma, k| build_inner(InnerKind::Acsa, &problem, &[1.0], k, sigma, &c, s),
                &config,
                1.0,
                &mut oracle,
                &seq,
            )
            .unwrap();
            assert_eq!((schedule.batch_size, schedule.queries), (8, 4096 / 17));
            let w = run.completion.point()[0];
            (0.5 * w * w, run.log, run.completion.is_complete())
        })
        .collect()
}

fn ac8() -> Outcome {
    let start = Instant::now();
    let runs = constant_delay_runs(Strictness::Exact, 200);
    let gaps: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let incomplete = runs.iter().filter(|r| !r.2).count();
    let k = (4096 / 17) as f64;
    let sigma_eff = 1.0 / 8f64.sqrt();
    let bound = 4.0 / (k * (k + 1.0)) + 4.0 * sigma_eff / (3.0 * k).sqrt();
    let m = mean(&gaps);
    within(start, Duration::from_secs(300))?;
    let detail = format!("mean gap {m:.3e}, limit {:.3e}, {incomplete} incomplete", 1.05 * bound);
    if m <= 1.05 * bound && incomplete == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac9() -> Outcome {
    let start = Instant::now();
    let horizon = 4096usize;
    let d: Vec<usize> = (1..=horizon).map(|t| if t <= horizon / 2 + 1 { 0 } else { t - 1 }).collect();
    let seq = DelaySequence::new(d.clone()).unwrap();
    let problem = quad();
    let (beta, f, sigma) = (1.0, 0.5, 1.0);
    let c = Constants {
        beta: Some(beta),
        initial_gap: Some(f),
        distance: None,
        lipschitz: None,
    };
    let schedule = SweepSchedule::new(Setting::NonconvexSgd, c, sigma).unwrap();
    let values: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|s| {
            let mut oracle = GradientOracle::new(&problem, sigma, s).unwrap();
            let r = run_algorithm2(schedule, &problem, &mut oracle, &seq, &[1.0], s).unwrap();
            (beta * r.w_hat[0]).powi(2)
        })
        .collect();
    let m = mean(&values);
    let s = sorted(&d);
    let envelope = |j: usize| {
        let qt = j as f64;
        let tau = s[j - 1] as f64;
        24.0 * (1.0 + 2.0 * tau) * beta * f / qt + 24.0 * sigma * (beta * f).sqrt() / qt.sqrt()
    };
    let (best_j, best) = (1..=horizon)
        .map(|j| (j, envelope(j)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let at_one = envelope(horizon);
    within(start, Duration::from_secs(300))?;
    let detail = format!(
        "mean |grad|^2 {m:.3e}, envelope {best:.3e} at q={:.4}, q=1 envelope {at_one:.3e}",
        best_j as f64 / horizon as f64
    );
    if m <= best && best < 0.5 * at_one {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac10() -> Outcome {
    let runs = constant_delay_runs(Strictness::RelaxedKMinus2, 200);
    let mut worst = 0;
    for (_, log, _) in &runs {
        for r in log.records.iter().filter(|r| r.accepted) {
            let source_round = r.t - r.delay;
            let source_query = log.records[source_round - 1].played_point_id;
            worst = worst.max(r.played_point_id - source_query);
        }
    }
    let accepted: usize = runs.iter().map(|r| r.1.used).sum();
    let detail = format!("{accepted} accepted gradients, largest query lag {worst}");
    if worst <= 2 && accepted > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac11() -> Outcome {
    let start = Instant::now();
    let problem = quad();
    let point = 0.5;
    let exact = point; // gradient of w^2/2
    let mut parts = Vec::new();
    let mut ok = true;
    for b in [1usize, 4, 16] {
        let draws = 10_000;
        let seq = DelaySequence::new(vec![0; draws * b]).unwrap();
        let mut oracle = GradientOracle::new(&problem, 1.0, 1100 + b as u64).unwrap();
        let probe = FixedPointProbe::new(vec![point], draws);
        let run = run_minibatch(probe, b, Strictness::Exact, &mut oracle, &seq, HistoryMode::Pruned).unwrap();
        let means = run.completion.output().and_then(|o| o.trace.clone()).ok_or("probe did not finish")?;
        if means.len() != draws {
            return Err(format!("B={b}: {} batch means", means.len()));
        }
        let var = means.iter().map(|g| (g[0] - exact).powi(2)).sum::<f64>() / draws as f64;
        let ratio = var * b as f64;
        ok &= (0.9..=1.1).contains(&ratio);
        parts.push(format!("B={b}: {ratio:.3}"));
    }
    within(start, Duration::from_secs(10))?;
    let detail = format!("variance x B / sigma^2: {}", parts.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("AC-1", "dispatch count reaches the counting supremum", ac1),
        ("AC-2", "sweep inequality at every quantile value", ac2),
        ("AC-3", "exact staircase lower bound", ac3),
        ("AC-4", "small-stepsize sandwich and averaged bounds", ac4),
        ("AC-5", "average delay at most M - 1", ac5),
        ("AC-6", "median at most twice the mean, monotone quantiles", ac6),
        ("AC-7", "inner optimizers within 1.05 of their guarantees", ac7),
        ("AC-8", "mini-batched AC-SA under constant delay", ac8),
        ("AC-9", "sweep adapts to the best quantile", ac9),
        ("AC-10", "relaxed filter lag at most two queries", ac10),
        ("AC-11", "batch-mean variance sigma^2/B", ac11),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, claim, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {id:<5} {claim} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id:<5} {claim} ({secs:.2}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
