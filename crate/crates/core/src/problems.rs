//! Benchmark objectives with analytic constants, and seeded stochastic
//! gradient oracles with a controlled variance bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::vector;

/// Feasible set of a problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Unconstrained,
    /// Closed Euclidean ball; its diameter is `2 * radius`.
    Ball { center: Vec<f64>, radius: f64 },
}

impl Domain {
    /// Membership with a small relative tolerance so that projected points
    /// are always accepted.
    pub fn contains(&self, w: &[f64]) -> bool {
        match self {
            Domain::Unconstrained => true,
            Domain::Ball { center, radius } => {
                vector::dist(w, center) <= radius * (1.0 + 1e-9) + 1e-12
            }
        }
    }

    /// Euclidean projection, in place.
    pub fn project(&self, w: &mut [f64]) {
        if let Domain::Ball { center, radius } = self {
            let d = vector::dist(w, center);
            if d > *radius {
                let s = radius / d;
                for (wi, ci) in w.iter_mut().zip(center) {
                    *wi = ci + s * (*wi - ci);
                }
            }
        }
    }

    pub fn diameter(&self) -> Option<f64> {
        match self {
            Domain::Unconstrained => None,
            Domain::Ball { radius, .. } => Some(2.0 * radius),
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, Domain::Ball { .. })
    }
}

#[derive(Clone, Debug)]
enum Objective {
    /// `(beta/2) * ||w - center||^2`
    Quadratic { beta: f64, center: Vec<f64> },
    /// `(beta/2) * sum_i w_i^2 / (1 + w_i^2)`; per-coordinate curvature lies
    /// in `[-beta/4, beta]`.
    Saturating { beta: f64 },
    /// `g * ||w - center||`
    Norm { g: f64, center: Vec<f64> },
    /// Mean logistic loss plus `(l2/2)||w||^2`, labels in {-1, +1}.
    Logistic {
        features: Vec<Vec<f64>>,
        labels: Vec<f64>,
        l2: f64,
    },
}

/// An objective together with the constants the schedules consume.
#[derive(Clone, Debug)]
pub struct Problem {
    name: &'static str,
    dimension: usize,
    objective: Objective,
    domain: Domain,
    smoothness: Option<f64>,
    lipschitz: Option<f64>,
    minimizer: Option<Vec<f64>>,
    optimal_value: Option<f64>,
    convex: bool,
}

/// `f(w) = (beta/2)||w - w_star||^2`.
pub fn make_quadratic(dimension: usize, beta: f64, w_star: &[f64]) -> Result<Problem> {
    ensure(dimension >= 1, || "dimension must be at least 1".into())?;
    ensure(beta > 0.0 && beta.is_finite(), || format!("beta must be positive, got {beta}"))?;
    ensure(w_star.len() == dimension, || {
        format!("minimizer has {} coordinates, expected {dimension}", w_star.len())
    })?;
    Ok(Problem {
        name: "quadratic",
        dimension,
        objective: Objective::Quadratic {
            beta,
            center: w_star.to_vec(),
        },
        domain: Domain::Unconstrained,
        smoothness: Some(beta),
        lipschitz: None,
        minimizer: Some(w_star.to_vec()),
        optimal_value: Some(0.0),
        convex: true,
    })
}

/// Smooth nonconvex objective `(beta/2) sum_i w_i^2/(1+w_i^2)`, with global
/// minimum 0 at the origin and smoothness constant exactly `beta`.
pub fn make_nonconvex_smooth(dimension: usize, beta: f64) -> Result<Problem> {
    ensure(dimension >= 1, || "dimension must be at least 1".into())?;
    ensure(beta > 0.0 && beta.is_finite(), || format!("beta must be positive, got {beta}"))?;
    Ok(Problem {
        name: "nonconvex_smooth",
        dimension,
        objective: Objective::Saturating { beta },
        domain: Domain::Unconstrained,
        smoothness: Some(beta),
        lipschitz: None,
        minimizer: Some(vec![0.0; dimension]),
        optimal_value: Some(0.0),
        convex: false,
    })
}

/// `f(w) = G ||w||` over the ball of diameter `D` centred at the origin.
pub fn make_convex_lipschitz(dimension: usize, lipschitz: f64, diameter: f64) -> Result<Problem> {
    ensure(dimension >= 1, || "dimension must be at least 1".into())?;
    ensure(lipschitz > 0.0, || format!("G must be positive, got {lipschitz}"))?;
    ensure(diameter > 0.0, || format!("D must be positive, got {diameter}"))?;
    let center = vec![0.0; dimension];
    Ok(Problem {
        name: "convex_lipschitz",
        dimension,
        objective: Objective::Norm {
            g: lipschitz,
            center: center.clone(),
        },
        domain: Domain::Ball {
            center: center.clone(),
            radius: diameter / 2.0,
        },
        smoothness: None,
        lipschitz: Some(lipschitz),
        minimizer: Some(center),
        optimal_value: Some(0.0),
        convex: true,
    })
}

/// L2-regularised logistic regression on a synthetic, seeded data set.
///
/// The smoothness constant uses the Frobenius bound
/// `sum_i ||x_i||^2 / (4n) + l2`. The optimum is located by gradient descent
/// at construction time, which converges linearly because `l2 > 0`.
pub fn make_logistic(samples: usize, dimension: usize, l2: f64, seed: u64) -> Result<Problem> {
    ensure(samples >= 1, || "need at least one sample".into())?;
    ensure(dimension >= 1, || "dimension must be at least 1".into())?;
    ensure(l2 > 0.0, || format!("l2 must be positive, got {l2}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted: Vec<f64> = (0..dimension).map(|_| rng.sample(StandardNormal)).collect();
    let mut features = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x: Vec<f64> = (0..dimension)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / (dimension as f64).sqrt())
            .collect();
        let margin = vector::dot(&x, &planted) + 0.5 * rng.sample::<f64, _>(StandardNormal);
        labels.push(if margin >= 0.0 { 1.0 } else { -1.0 });
        features.push(x);
    }
    let beta =
        features.iter().map(|x| vector::norm_sq(x)).sum::<f64>() / (4.0 * samples as f64) + l2;

    let mut problem = Problem {
        name: "logistic",
        dimension,
        objective: Objective::Logistic {
            features,
            labels,
            l2,
        },
        domain: Domain::Unconstrained,
        smoothness: Some(beta),
        lipschitz: None,
        minimizer: None,
        optimal_value: None,
        convex: true,
    };

    let mut w = vec![0.0; dimension];
    let mut grad = vec![0.0; dimension];
    for _ in 0..200_000 {
        problem.gradient_into(&w, &mut grad);
        if vector::norm(&grad) < 1e-13 {
            break;
        }
        vector::axpy(-1.0 / beta, &grad, &mut w);
    }
    problem.optimal_value = Some(problem.value(&w));
    problem.minimizer = Some(w);
    Ok(problem)
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Problem {
    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Smoothness constant `beta`, absent for the nonsmooth problem.
    pub fn smoothness(&self) -> Option<f64> {
        self.smoothness
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn diameter(&self) -> Option<f64> {
        self.domain.diameter()
    }

    pub fn minimizer(&self) -> Option<&[f64]> {
        self.minimizer.as_deref()
    }

    pub fn optimal_value(&self) -> Option<f64> {
        self.optimal_value
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        match &self.objective {
            Objective::Quadratic { beta, center } => 0.5 * beta * vector::dist_sq(w, center),
            Objective::Saturating { beta } => {
                0.5 * beta * w.iter().map(|x| x * x / (1.0 + x * x)).sum::<f64>()
            }
            Objective::Norm { g, center } => g * vector::dist(w, center),
            Objective::Logistic {
                features,
                labels,
                l2,
            } => {
                let loss: f64 = features
                    .iter()
                    .zip(labels)
                    .map(|(x, y)| log1p_exp(-y * vector::dot(x, w)))
                    .sum();
                loss / features.len() as f64 + 0.5 * l2 * vector::norm_sq(w)
            }
        }
    }

    /// Gradient (a subgradient for the norm objective, zero at its kink).
    pub fn gradient_into(&self, w: &[f64], out: &mut [f64]) {
        debug_assert_eq!(w.len(), self.dimension);
        match &self.objective {
            Objective::Quadratic { beta, center } => {
                for ((o, wi), ci) in out.iter_mut().zip(w).zip(center) {
                    *o = beta * (wi - ci);
                }
            }
            Objective::Saturating { beta } => {
                for (o, x) in out.iter_mut().zip(w) {
                    let s = 1.0 + x * x;
                    *o = beta * x / (s * s);
                }
            }
            Objective::Norm { g, center } => {
                let d = vector::dist(w, center);
                if d == 0.0 {
                    out.fill(0.0);
                } else {
                    for ((o, wi), ci) in out.iter_mut().zip(w).zip(center) {
                        *o = g * (wi - ci) / d;
                    }
                }
            }
            Objective::Logistic {
                features,
                labels,
                l2,
            } => {
                let n = features.len() as f64;
                for (o, wi) in out.iter_mut().zip(w) {
                    *o = l2 * wi;
                }
                for (x, y) in features.iter().zip(labels) {
                    let coef = -y * sigmoid(-y * vector::dot(x, w)) / n;
                    vector::axpy(coef, x, out);
                }
            }
        }
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        self.gradient_into(w, &mut out);
        out
    }

    pub fn grad_norm_sq(&self, w: &[f64]) -> f64 {
        vector::norm_sq(&self.gradient(w))
    }

    /// `f(w) - f*` when the optimal value is known.
    pub fn suboptimality(&self, w: &[f64]) -> Option<f64> {
        self.optimal_value.map(|fs| self.value(w) - fs)
    }

    /// `f(w1) - f*`, the tightest admissible `F`.
    pub fn initial_gap(&self, w1: &[f64]) -> Option<f64> {
        self.suboptimality(w1)
    }

    /// `||w1 - w*||`, the tightest admissible `D` in the smooth convex setting.
    pub fn distance_to_minimizer(&self, w1: &[f64]) -> Option<f64> {
        self.minimizer.as_deref().map(|ws| vector::dist(w1, ws))
    }

    pub fn project(&self, w: &mut [f64]) {
        self.domain.project(w);
    }
}

/// Unbiased stochastic gradient oracle: the exact gradient plus isotropic
/// Gaussian noise scaled so that `E||noise||^2 = sigma^2`.
///
/// The noise stream is a function of the seed and the call index only.
#[derive(Clone, Debug)]
pub struct GradientOracle<'p> {
    problem: &'p Problem,
    sigma: f64,
    seed: u64,
    rng: ChaCha8Rng,
    calls: u64,
}

impl<'p> GradientOracle<'p> {
    pub fn new(problem: &'p Problem, sigma: f64, seed: u64) -> Result<Self> {
        ensure(sigma >= 0.0 && sigma.is_finite(), || {
            format!("noise level must be nonnegative, got {sigma}")
        })?;
        Ok(Self {
            problem,
            sigma,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            calls: 0,
        })
    }

    pub fn problem(&self) -> &'p Problem {
        self.problem
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn sample_into(&mut self, w: &[f64], out: &mut [f64]) -> Result<()> {
        if w.len() != self.problem.dimension || !self.problem.domain.contains(w) {
            return Err(Error::Domain(format!(
                "{:?} is not in the domain of {}",
                w, self.problem.name
            )));
        }
        self.problem.gradient_into(w, out);
        self.calls += 1;
        if self.sigma > 0.0 {
            let s = self.sigma / (self.problem.dimension as f64).sqrt();
            for o in out.iter_mut() {
                let z: f64 = self.rng.sample(StandardNormal);
                *o += s * z;
            }
        }
        Ok(())
    }

    /// One stochastic gradient at `w`.
    pub fn sample_gradient(&mut self, w: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.problem.dimension];
        self.sample_into(w, &mut out)?;
        Ok(out)
    }
}
