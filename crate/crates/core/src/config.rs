//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "T": 4096,
//!   "seeds": [0, 1, 2],
//!   "base_seed": 7,
//!   "sigma": 1.0,
//!   "w1": [1.0],
//!   "problem": {"kind": "quadratic", "dimension": 1, "beta": 1.0},
//!   "constants": {"F": 0.5, "D": 1.0},
//!   "delays": {"model": "half_outlier"},
//!   "methods": [
//!     {"kind": "vanilla_async_sgd", "eta": 0.1},
//!     {"kind": "algorithm1", "inner": "acsa", "q": 1.0, "tau_hat": 8},
//!     {"kind": "algorithm2", "setting": "nonconvex_sgd"}
//!   ]
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::{Metric, Setting};
use crate::delays::{
    constant_delay, half_outlier, one_fast_machine, simulate_workers, staircase_adversarial, DelaySequence,
    WorkerSchedule,
};
use crate::error::{ensure, Error, Result};
use crate::minibatch::Strictness;
use crate::optimizers::{Constants, InnerKind};
use crate::problems::{make_convex_lipschitz, make_logistic, make_nonconvex_smooth, make_quadratic, Problem};

/// Environment variable that replaces `base_seed`.
pub const SEED_ENV: &str = "ASYNC_OPT_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub sigma: f64,
    pub w1: Vec<f64>,
    pub problem: ProblemSpec,
    /// `F` and `D` must be given whenever a method needs them; `beta` and `G`
    /// default to the problem's own constants.
    #[serde(default)]
    pub constants: Constants,
    pub delays: DelaySpec,
    pub methods: Vec<MethodSpec>,
    /// Overrides the per-method default metric.
    #[serde(default)]
    pub metric: Option<Metric>,
    #[serde(default)]
    pub record_rounds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        dimension: usize,
        beta: f64,
        #[serde(default)]
        w_star: Option<Vec<f64>>,
    },
    NonconvexSmooth {
        dimension: usize,
        beta: f64,
    },
    ConvexLipschitz {
        dimension: usize,
        #[serde(rename = "G")]
        lipschitz: f64,
        #[serde(rename = "D")]
        diameter: f64,
    },
    Logistic {
        samples: usize,
        dimension: usize,
        l2: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        match self {
            ProblemSpec::Quadratic { dimension, beta, w_star } => {
                let center = w_star.clone().unwrap_or_else(|| vec![0.0; *dimension]);
                make_quadratic(*dimension, *beta, &center)
            }
            ProblemSpec::NonconvexSmooth { dimension, beta } => make_nonconvex_smooth(*dimension, *beta),
            ProblemSpec::ConvexLipschitz {
                dimension,
                lipschitz,
                diameter,
            } => make_convex_lipschitz(*dimension, *lipschitz, *diameter),
            ProblemSpec::Logistic {
                samples,
                dimension,
                l2,
                seed,
            } => make_logistic(*samples, *dimension, *l2, *seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelaySpec {
    Zero,
    Constant {
        tau: usize,
    },
    Staircase {
        tau_max: usize,
    },
    HalfOutlier,
    /// Requires `T = n + M - 1`.
    OneFastMachine {
        n: usize,
        #[serde(rename = "M")]
        machines: usize,
    },
    /// Simulated workers; the sequence is redrawn for every seed.
    Workers {
        #[serde(rename = "M")]
        machines: usize,
        #[serde(default = "default_base")]
        base: f64,
    },
    /// A `d_t` CSV or JSON array, relative to the config file.
    File {
        path: PathBuf,
    },
}

fn default_base() -> f64 {
    4.06
}

impl DelaySpec {
    pub fn depends_on_seed(&self) -> bool {
        matches!(self, DelaySpec::Workers { .. })
    }

    pub fn build(&self, horizon: usize, seed: u64, base_dir: &Path) -> Result<DelaySequence> {
        let seq = match self {
            DelaySpec::Zero => constant_delay(horizon, 0)?,
            DelaySpec::Constant { tau } => constant_delay(horizon, *tau)?,
            DelaySpec::Staircase { tau_max } => staircase_adversarial(horizon, *tau_max)?,
            DelaySpec::HalfOutlier => half_outlier(horizon)?,
            DelaySpec::OneFastMachine { n, machines } => one_fast_machine(*n, *machines)?,
            DelaySpec::Workers { machines, base } => {
                simulate_workers(horizon, &WorkerSchedule::poisson_mixture(*machines, *base, seed))?
            }
            DelaySpec::File { path } => DelaySequence::load(&base_dir.join(path))?,
        };
        if seq.len() != horizon {
            return Err(Error::Config(format!(
                "delay model produces {} rounds but T is {horizon}",
                seq.len()
            )));
        }
        Ok(seq)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    VanillaAsyncSgd {
        #[serde(default)]
        id: Option<String>,
        eta: f64,
    },
    Algorithm1 {
        #[serde(default)]
        id: Option<String>,
        inner: InnerKind,
        q: f64,
        tau_hat: usize,
        #[serde(default, rename = "B")]
        batch_size: Option<usize>,
        #[serde(default)]
        strictness: Strictness,
    },
    Algorithm2 {
        #[serde(default)]
        id: Option<String>,
        setting: Setting,
    },
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::VanillaAsyncSgd { id: Some(id), .. }
            | MethodSpec::Algorithm1 { id: Some(id), .. }
            | MethodSpec::Algorithm2 { id: Some(id), .. } => id.clone(),
            MethodSpec::VanillaAsyncSgd { eta, .. } => format!("vanilla_eta{eta}"),
            MethodSpec::Algorithm1 {
                inner,
                batch_size,
                strictness,
                ..
            } => {
                let inner = serde_json::to_value(inner).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
                let mut label = format!("algorithm1_{inner}");
                if let Some(b) = batch_size {
                    label.push_str(&format!("_B{b}"));
                }
                if *strictness == Strictness::RelaxedKMinus2 {
                    label.push_str("_relaxed");
                }
                label
            }
            MethodSpec::Algorithm2 { setting, .. } => format!("algorithm2_{}", setting.name()),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.horizon == 0 {
            return bad("T must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        let problem = self.problem.build()?;
        if self.w1.len() != problem.dimension() {
            return bad(format!(
                "w1 has {} coordinates, the problem has dimension {}",
                self.w1.len(),
                problem.dimension()
            ));
        }
        let mut labels = std::collections::HashSet::new();
        for m in &self.methods {
            if !labels.insert(m.label()) {
                return bad(format!("duplicate method id {:?}", m.label()));
            }
            if let MethodSpec::Algorithm1 { q, .. } = m {
                ensure(*q > 0.0 && *q <= 1.0, || format!("q must lie in (0, 1], got {q}"))?;
            }
        }
        Ok(())
    }

    /// `base_seed`, unless the environment overrides it.
    pub fn effective_base_seed(&self) -> Result<u64> {
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
            Err(_) => Ok(self.base_seed),
        }
    }

    /// Config constants with `beta` and `G` filled in from the problem.
    pub fn constants_for(&self, problem: &Problem) -> Constants {
        Constants {
            beta: self.constants.beta.or(problem.smoothness()),
            lipschitz: self.constants.lipschitz.or(problem.lipschitz()),
            ..self.constants
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "T": 10, "seeds": [0], "w1": [1.0],
        "problem": {"kind": "quadratic", "dimension": 1, "beta": 1.0},
        "delays": {"model": "zero"},
        "methods": [{"kind": "vanilla_async_sgd", "eta": 0.5}]
    }"#;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.horizon, 10);
        assert_eq!(c.methods[0].label(), "vanilla_eta0.5");
        assert_eq!(c.sigma, 0.0);
    }

    #[test]
    fn method_labels() {
        let m: MethodSpec = serde_json::from_str(
            r#"{"kind":"algorithm1","inner":"acsa","q":1,"tau_hat":8,"B":4,"strictness":"relaxed_k_minus2"}"#,
        )
        .unwrap();
        assert_eq!(m.label(), "algorithm1_acsa_B4_relaxed");
        let m: MethodSpec = serde_json::from_str(r#"{"kind":"algorithm2","setting":"nonconvex_sgd","id":"x"}"#).unwrap();
        assert_eq!(m.label(), "x");
    }

    #[test]
    fn malformed_configs_are_rejected() {
        let typo = MINIMAL.replace("\"seeds\"", "\"sedes\"");
        assert!(ExperimentConfig::from_json(&typo).is_err());
        let empty = MINIMAL.replace("[0]", "[]");
        assert!(matches!(ExperimentConfig::from_json(&empty), Err(Error::Config(_))));
        let dim = MINIMAL.replace("[1.0]", "[1.0, 2.0]");
        assert!(matches!(ExperimentConfig::from_json(&dim), Err(Error::Config(_))));
        let dup = MINIMAL.replace(
            r#"[{"kind": "vanilla_async_sgd", "eta": 0.5}]"#,
            r#"[{"kind": "vanilla_async_sgd", "eta": 0.5}, {"kind": "vanilla_async_sgd", "eta": 0.5}]"#,
        );
        assert!(matches!(ExperimentConfig::from_json(&dup), Err(Error::Config(_))));
    }

    #[test]
    fn delay_models_build() {
        let dir = Path::new(".");
        assert_eq!(DelaySpec::Constant { tau: 2 }.build(5, 0, dir).unwrap().as_slice(), &[0, 1, 2, 2, 2]);
        let ofm = DelaySpec::OneFastMachine { n: 4, machines: 3 };
        assert_eq!(ofm.build(6, 0, dir).unwrap().as_slice(), &[0, 0, 0, 0, 4, 5]);
        assert!(matches!(ofm.build(7, 0, dir), Err(Error::Config(_))));
        let w = DelaySpec::Workers { machines: 4, base: 4.06 };
        assert!(w.depends_on_seed());
        assert_ne!(w.build(200, 1, dir).unwrap(), w.build(200, 2, dir).unwrap());
    }

    #[test]
    fn constants_default_from_problem() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let p = c.problem.build().unwrap();
        let k = c.constants_for(&p);
        assert_eq!(k.beta, Some(1.0));
        assert_eq!(k.initial_gap, None);
    }
}
