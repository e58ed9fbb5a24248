use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use async_opt::bounds::{lower_bound_construction, lower_bound_small_stepsize, lower_bound_threshold};
use async_opt::delays::{
    constant_delay, half_outlier, one_fast_machine, simulate_workers, staircase_adversarial, DelaySequence,
    WorkerSchedule,
};
use async_opt::experiment::run_experiment;
use async_opt::{config::ExperimentConfig, verify, Error};

#[derive(Parser)]
#[command(name = "async-opt", version, about = "Asynchronous stochastic optimization under arbitrary delays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write metrics.csv and summary.json.
    Run {
        config: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the verification battery.
    Verify {
        /// Run a single check by name.
        #[arg(long)]
        only: Option<String>,
        /// List the check names and exit.
        #[arg(long)]
        list: bool,
    },
    /// Print delay statistics of a CSV or JSON delay file.
    Stats {
        delays: PathBuf,
        /// Also print every quantile breakpoint.
        #[arg(long)]
        quantiles: bool,
    },
    /// Simulate the lower-bound construction for fixed-stepsize SGD.
    Lowerbound {
        #[arg(long = "T")]
        horizon: usize,
        #[arg(long)]
        taumax: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long)]
        eta: f64,
        #[arg(long, default_value_t = 1.0)]
        w1: f64,
    },
    /// Generate a delay sequence.
    GenDelays {
        model: DelayModel,
        #[arg(long = "T")]
        horizon: Option<usize>,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long)]
        taumax: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "M")]
        machines: Option<usize>,
        #[arg(long, default_value_t = 4.06)]
        base: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `.json` writes a JSON array, anything else CSV.
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DelayModel {
    Zero,
    Constant,
    Staircase,
    HalfOutlier,
    OneFastMachine,
    Workers,
}

fn need<T>(value: Option<T>, flag: &str) -> async_opt::Result<T> {
    value.ok_or_else(|| Error::Parameter(format!("this model needs --{flag}")))
}

#[allow(clippy::too_many_arguments)]
fn gen_delays(
    model: DelayModel,
    horizon: Option<usize>,
    tau: Option<usize>,
    taumax: Option<usize>,
    n: Option<usize>,
    machines: Option<usize>,
    base: f64,
    seed: u64,
) -> async_opt::Result<DelaySequence> {
    match model {
        DelayModel::Zero => constant_delay(need(horizon, "T")?, 0),
        DelayModel::Constant => constant_delay(need(horizon, "T")?, need(tau, "tau")?),
        DelayModel::Staircase => staircase_adversarial(need(horizon, "T")?, need(taumax, "taumax")?),
        DelayModel::HalfOutlier => half_outlier(need(horizon, "T")?),
        DelayModel::OneFastMachine => one_fast_machine(need(n, "n")?, need(machines, "M")?),
        DelayModel::Workers => simulate_workers(
            need(horizon, "T")?,
            &WorkerSchedule::poisson_mixture(need(machines, "M")?, base, seed),
        ),
    }
}

fn lowerbound(horizon: usize, taumax: usize, beta: f64, eta: f64, w1: f64) -> async_opt::Result<bool> {
    match lower_bound_construction(horizon, taumax, beta, w1, eta) {
        Ok(c) => {
            let o = c.simulate()?;
            let holds = o.holds(1e-12);
            let report = json!({
                "construction": "staircase",
                "threshold": lower_bound_threshold(beta, taumax),
                "initial_gap": c.initial_gap,
                "outcome": o,
                "holds": holds,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(holds)
        }
        Err(Error::StepsizeTooSmall { threshold, .. }) => {
            let c = lower_bound_small_stepsize(horizon, beta, eta, w1)?;
            let o = c.simulate(&staircase_adversarial(horizon, taumax)?)?;
            let holds = o.holds();
            let report = json!({
                "construction": "small_stepsize",
                "threshold": threshold,
                "epsilon": c.epsilon,
                "w_star": c.w_star,
                "initial_gap": c.initial_gap,
                "outcome": o,
                "holds": holds,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(holds)
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: async_opt::Result<ExitCode> = match cli.command {
        Command::Run { config, out } => {
            let parsed = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("invalid config {}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            let base_dir = config.parent().map(PathBuf::from).unwrap_or_default();
            match run_experiment(&parsed, &base_dir) {
                Ok(r) => r.write_outputs(&parsed, &out).map(|()| {
                    for c in r.cells.iter().filter(|c| c.error.is_some()) {
                        eprintln!("{} seed {}: {}", c.method, c.seed, c.error.as_deref().unwrap_or(""));
                    }
                    println!("wrote {} rows to {}", r.cells.len(), out.join("metrics.csv").display());
                    if r.has_errors() {
                        ExitCode::FAILURE
                    } else {
                        ExitCode::SUCCESS
                    }
                }),
                Err(e @ (Error::Config(_) | Error::Parameter(_) | Error::Json(_) | Error::Domain(_))) => {
                    eprintln!("invalid config {}: {e}", config.display());
                    return ExitCode::from(2);
                }
                Err(e) => Err(e),
            }
        }
        Command::Verify { only, list } => {
            if list {
                for c in verify::CHECKS {
                    println!("{:<11} {}", c.name, c.claim);
                }
                return ExitCode::SUCCESS;
            }
            verify::run_checks(only.as_deref()).map(|outcomes| {
                print!("{}", verify::format_table(&outcomes));
                let failed = outcomes.iter().filter(|o| !o.passed).count();
                println!("{} passed, {failed} failed", outcomes.len() - failed);
                if failed == 0 {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            })
        }
        Command::Stats { delays, quantiles } => DelaySequence::load(&delays).and_then(|seq| {
            let stats = seq.stats();
            let mut value = json!({
                "T": stats.horizon,
                "tau_avg": stats.tau_avg,
                "tau_med": stats.tau_med,
                "tau_max": stats.tau_max,
            });
            if quantiles {
                value["quantiles"] = serde_json::to_value(stats.quantile_points())?;
            }
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(ExitCode::SUCCESS)
        }),
        Command::Lowerbound {
            horizon,
            taumax,
            beta,
            eta,
            w1,
        } => lowerbound(horizon, taumax, beta, eta, w1).map(|holds| {
            if holds {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }),
        Command::GenDelays {
            model,
            horizon,
            tau,
            taumax,
            n,
            machines,
            base,
            seed,
            out,
        } => gen_delays(model, horizon, tau, taumax, n, machines, base, seed)
            .and_then(|seq| seq.save(&out))
            .map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
