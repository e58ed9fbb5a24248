//! Experiment matrix: every method is run for every seed, cells in parallel.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{algorithm1_rate, base_rate, EnvelopeVariant, Metric};
use crate::config::{ExperimentConfig, MethodSpec};
use crate::delays::{DelaySequence, DelayStats};
use crate::engine::{self, HistoryMode, RoundLog};
use crate::error::Result;
use crate::minibatch::{run_algorithm1, MiniBatchConfig};
use crate::optimizers::{build_inner, Constants, VanillaAsyncSgd};
use crate::problems::{GradientOracle, Problem};
use crate::sweep::{quantile_bound_envelope, run_algorithm2, SweepSchedule};

/// Mixes the base seed into a configured seed.
pub fn cell_seed(base_seed: u64, seed: u64) -> u64 {
    base_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ seed
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub seed: u64,
    pub method: String,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub final_metric: Option<f64>,
    pub used: usize,
    pub discarded: usize,
    pub tau_avg: f64,
    pub tau_med: usize,
    pub tau_max: usize,
    pub bound_value: Option<f64>,
    #[serde(skip)]
    pub complete: bool,
    #[serde(skip)]
    pub error: Option<String>,
    #[serde(skip)]
    pub log: Option<RoundLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub seeds: usize,
    /// Over the seeds with a finite metric.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub incomplete: usize,
    pub errors: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
    pub summaries: Vec<MethodSummary>,
    pub base_seed: u64,
}

impl ExperimentResult {
    pub fn has_errors(&self) -> bool {
        self.cells.iter().any(|c| c.error.is_some())
    }

    pub fn write_metrics_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for c in &self.cells {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            base_seed: u64,
            methods: &'a [MethodSummary],
        }
        Ok(serde_json::to_string_pretty(&Summary {
            base_seed: self.base_seed,
            methods: &self.summaries,
        })?)
    }

    /// Mean final metric of the mini-batching methods that differ only in
    /// `B`, one row per group and one column per batch size.
    pub fn batch_table(&self, config: &ExperimentConfig) -> Option<String> {
        let mut groups: BTreeMap<String, BTreeMap<usize, Option<f64>>> = BTreeMap::new();
        for (m, s) in config.methods.iter().zip(&self.summaries) {
            if let MethodSpec::Algorithm1 {
                inner,
                q,
                tau_hat,
                batch_size: Some(b),
                strictness,
                ..
            } = m
            {
                let key = format!(
                    "{}_q{q}_tau{tau_hat}_{}",
                    serde_json::to_value(inner).ok()?.as_str()?,
                    serde_json::to_value(strictness).ok()?.as_str()?
                );
                groups.entry(key).or_default().insert(*b, s.mean);
            }
        }
        if groups.is_empty() {
            return None;
        }
        let sizes: std::collections::BTreeSet<usize> = groups.values().flat_map(|g| g.keys().copied()).collect();
        let mut out = String::from("group");
        for b in &sizes {
            out.push_str(&format!(",B={b}"));
        }
        out.push('\n');
        for (key, row) in &groups {
            out.push_str(key);
            for b in &sizes {
                out.push(',');
                if let Some(Some(v)) = row.get(b) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        Some(out)
    }

    /// Writes `metrics.csv`, `summary.json`, the batch table when there is
    /// one, and `rounds_<method>_<seed>.csv` for recorded cells.
    pub fn write_outputs(&self, config: &ExperimentConfig, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_metrics_csv(BufWriter::new(File::create(dir.join("metrics.csv"))?))?;
        std::fs::write(dir.join("summary.json"), self.summary_json()?)?;
        if let Some(table) = self.batch_table(config) {
            std::fs::write(dir.join("batch_table.csv"), table)?;
        }
        for c in &self.cells {
            if let Some(log) = &c.log {
                let name = format!("rounds_{}_{}.csv", c.method, c.seed);
                log.write_csv(BufWriter::new(File::create(dir.join(name))?))?;
            }
        }
        Ok(())
    }
}

struct Outcome {
    point: Vec<f64>,
    log: RoundLog,
    complete: bool,
    bound: Option<f64>,
}

fn default_metric(method: &MethodSpec, problem: &Problem) -> Metric {
    match method {
        MethodSpec::VanillaAsyncSgd { .. } if problem.is_convex() => Metric::Suboptimality,
        MethodSpec::VanillaAsyncSgd { .. } => Metric::GradNormSq,
        MethodSpec::Algorithm1 { inner, .. } => inner.metric(),
        MethodSpec::Algorithm2 { setting, .. } => setting.metric(),
    }
}

fn run_method(
    method: &MethodSpec,
    problem: &Problem,
    config: &ExperimentConfig,
    constants: &Constants,
    delays: &DelaySequence,
    stats: &DelayStats,
    seed: u64,
) -> Result<Outcome> {
    let sigma = config.sigma;
    let w1 = &config.w1;
    let mut oracle = GradientOracle::new(problem, sigma, seed)?;
    let alg_seed = seed ^ 0xA5A5_A5A5_A5A5_A5A5;
    match method {
        MethodSpec::VanillaAsyncSgd { eta, .. } => {
            let mut alg = VanillaAsyncSgd::new(problem.domain().clone(), w1, *eta)?;
            let log = engine::run(&mut alg, &mut oracle, delays, HistoryMode::Pruned)?;
            Ok(Outcome {
                point: alg.last_iterate().to_vec(),
                log,
                complete: true,
                bound: None,
            })
        }
        MethodSpec::Algorithm1 {
            inner,
            q,
            tau_hat,
            batch_size,
            strictness,
            ..
        } => {
            let mut mb = MiniBatchConfig::new(*q, *tau_hat).with_strictness(*strictness);
            if let Some(b) = batch_size {
                mb = mb.with_batch_size(*b);
            }
            let (schedule, run) = run_algorithm1(
                |s, k| build_inner(*inner, problem, w1, k, s, constants, alg_seed),
                &mb,
                sigma,
                &mut oracle,
                delays,
            )?;
            let bound = if batch_size.is_some() {
                base_rate(*inner, schedule.queries, schedule.sigma_eff, constants)
            } else {
                algorithm1_rate(*inner, delays.len(), *q, *tau_hat, sigma, constants)
            };
            Ok(Outcome {
                point: run.completion.point().to_vec(),
                log: run.log,
                complete: run.completion.is_complete(),
                bound: bound.ok().map(|r| r.value),
            })
        }
        MethodSpec::Algorithm2 { setting, .. } => {
            let schedule = SweepSchedule::new(*setting, *constants, sigma)?;
            let result = run_algorithm2(schedule, problem, &mut oracle, delays, w1, alg_seed)?;
            let bound = quantile_bound_envelope(*setting, EnvelopeVariant::Stated, stats, sigma, constants);
            let complete = result.completed_epochs() > 0;
            Ok(Outcome {
                point: result.w_hat,
                log: result.log,
                complete,
                bound: bound.ok().map(|e| e.value),
            })
        }
    }
}

fn summarize(method: &str, cells: &[&CellResult]) -> MethodSummary {
    let values: Vec<f64> = cells
        .iter()
        .filter_map(|c| c.final_metric)
        .filter(|v| v.is_finite())
        .collect();
    let (mean, std) = if values.is_empty() {
        (None, None)
    } else {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (Some(mean), Some(var.sqrt()))
    };
    MethodSummary {
        method: method.to_string(),
        seeds: cells.len(),
        mean,
        std,
        incomplete: cells.iter().filter(|c| !c.complete).count(),
        errors: cells
            .iter()
            .filter_map(|c| c.error.as_ref().map(|e| format!("seed {}: {e}", c.seed)))
            .collect(),
    }
}

/// Runs every (seed, method) cell. Errors inside a cell are recorded on the
/// cell; errors that concern the whole configuration are returned.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentResult> {
    config.validate()?;
    let base_seed = config.effective_base_seed()?;
    let problem = config.problem.build()?;
    let constants = config.constants_for(&problem);

    let shared = if config.delays.depends_on_seed() {
        None
    } else {
        Some(config.delays.build(config.horizon, base_seed, base_dir)?)
    };
    let per_seed: Vec<(u64, DelaySequence)> = config
        .seeds
        .iter()
        .map(|&s| {
            let seq = match &shared {
                Some(d) => d.clone(),
                None => config.delays.build(config.horizon, cell_seed(base_seed, s), base_dir)?,
            };
            Ok((s, seq))
        })
        .collect::<Result<_>>()?;
    let stats: Vec<DelayStats> = per_seed.iter().map(|(_, d)| d.stats()).collect();

    let jobs: Vec<(usize, usize)> = (0..per_seed.len())
        .flat_map(|si| (0..config.methods.len()).map(move |mi| (si, mi)))
        .collect();
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(si, mi)| {
            let (seed, delays) = &per_seed[si];
            let stats = &stats[si];
            let method = &config.methods[mi];
            let outcome = run_method(
                method,
                &problem,
                config,
                &constants,
                delays,
                stats,
                cell_seed(base_seed, *seed),
            );
            let metric = config.metric.unwrap_or_else(|| default_metric(method, &problem));
            let mut cell = CellResult {
                seed: *seed,
                method: method.label(),
                horizon: config.horizon,
                final_metric: None,
                used: 0,
                discarded: 0,
                tau_avg: stats.tau_avg,
                tau_med: stats.tau_med,
                tau_max: stats.tau_max,
                bound_value: None,
                complete: false,
                error: None,
                log: None,
            };
            match outcome {
                Ok(o) => {
                    cell.final_metric = metric.evaluate(&problem, &o.point);
                    cell.used = o.log.used;
                    cell.discarded = o.log.discarded;
                    cell.bound_value = o.bound;
                    cell.complete = o.complete;
                    if config.record_rounds {
                        cell.log = Some(o.log);
                    }
                }
                Err(e) => cell.error = Some(e.to_string()),
            }
            cell
        })
        .collect();

    let summaries = config
        .methods
        .iter()
        .map(|m| {
            let label = m.label();
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.method == label).collect();
            summarize(&label, &mine)
        })
        .collect();
    Ok(ExperimentResult {
        cells,
        summaries,
        base_seed,
    })
}

/// Loads a config file, runs it and writes the outputs into `out_dir`.
pub fn run_config_file(path: &Path, out_dir: &Path) -> Result<ExperimentResult> {
    let config = ExperimentConfig::load(path)?;
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let result = run_experiment(&config, base_dir)?;
    result.write_outputs(&config, out_dir)?;
    Ok(result)
}
