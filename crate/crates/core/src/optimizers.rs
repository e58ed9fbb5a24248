//! Classical stochastic first-order methods as query/response state machines.
//!
//! A [`QueryAlgorithm`] emits exactly `K` query points, consuming the gradient
//! response to each one before the next query is emitted, and then produces
//! its output. Stepsizes are fixed at construction from the tuning constants.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{AsyncAlgorithm, Delivery};
use crate::error::{ensure, Error, Result};
use crate::problems::{Domain, Problem};
use crate::vector;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerOutput {
    pub w_hat: Vec<f64>,
    /// Query points `w_1..w_K`, when tracing was requested.
    pub trace: Option<Vec<Vec<f64>>>,
}

impl OptimizerOutput {
    /// Columns `k, norm, w_0, w_1, ...`.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::Config("no trace was recorded".into()))?;
        let dim = trace.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["k".to_string(), "norm".to_string()];
        header.extend((0..dim).map(|i| format!("w_{i}")));
        w.write_record(&header)?;
        for (k, point) in trace.iter().enumerate() {
            let mut row = vec![(k + 1).to_string(), vector::norm(point).to_string()];
            row.extend(point.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A `K`-query stochastic first-order method.
///
/// Calls must alternate `next_query`, `respond`, `next_query`, ... exactly `K`
/// times before `finalize`. Violations are programming errors and panic.
pub trait QueryAlgorithm {
    fn budget(&self) -> usize;
    fn responses(&self) -> usize;
    fn next_query(&mut self) -> Vec<f64>;
    fn respond(&mut self, gradient: &[f64]);
    fn finalize(&mut self) -> OptimizerOutput;

    fn is_complete(&self) -> bool {
        self.responses() == self.budget()
    }
}

impl<A: QueryAlgorithm + ?Sized> QueryAlgorithm for Box<A> {
    fn budget(&self) -> usize {
        (**self).budget()
    }
    fn responses(&self) -> usize {
        (**self).responses()
    }
    fn next_query(&mut self) -> Vec<f64> {
        (**self).next_query()
    }
    fn respond(&mut self, gradient: &[f64]) {
        (**self).respond(gradient)
    }
    fn finalize(&mut self) -> OptimizerOutput {
        (**self).finalize()
    }
}

/// Tracks the strict query/response alternation.
#[derive(Clone, Debug)]
struct Protocol {
    budget: usize,
    responses: usize,
    awaiting: bool,
    finalized: bool,
}

impl Protocol {
    fn new(budget: usize) -> Self {
        Self {
            budget,
            responses: 0,
            awaiting: false,
            finalized: false,
        }
    }

    fn query(&mut self) {
        assert!(!self.awaiting, "query emitted before the previous response");
        assert!(
            self.responses < self.budget,
            "query budget of {} exhausted",
            self.budget
        );
        self.awaiting = true;
    }

    fn respond(&mut self) {
        assert!(self.awaiting, "response received without an outstanding query");
        self.awaiting = false;
        self.responses += 1;
    }

    fn finalize(&mut self) {
        assert!(
            self.responses == self.budget,
            "finalize after {} of {} responses",
            self.responses,
            self.budget
        );
        assert!(!self.finalized, "finalize called twice");
        self.finalized = true;
    }
}

fn require(value: Option<f64>, what: &str) -> Result<f64> {
    value.ok_or_else(|| Error::Config(format!("{what} is required but unknown")))
}

fn check_start(domain: &Domain, w1: &[f64], budget: usize, sigma: f64) -> Result<()> {
    ensure(budget >= 1, || "query budget must be at least 1".into())?;
    ensure(sigma >= 0.0, || format!("sigma must be nonnegative, got {sigma}"))?;
    if !domain.contains(w1) {
        return Err(Error::Domain(format!("initial point {w1:?} is outside the domain")));
    }
    Ok(())
}

/// `min(a, sqrt(num/den))`, taking the deterministic branch when `den == 0`.
fn tuned_min(deterministic: f64, num: f64, den: f64) -> f64 {
    if den == 0.0 {
        deterministic
    } else {
        deterministic.min((num / den).sqrt())
    }
}

/// Which iterate the method reports.
#[derive(Clone, Debug)]
enum OutputRule {
    /// Uniformly random iterate among `w_1..w_K`; the index is drawn up front
    /// from the algorithm's own seed.
    Uniform { index: usize },
    /// Arithmetic mean of `w_1..w_K`.
    Average { sum: Vec<f64> },
}

/// Fixed-stepsize (projected) SGD: `w_{k+1} = P(w_k - step * g_k)`.
#[derive(Clone, Debug)]
pub struct Sgd {
    protocol: Protocol,
    point: Vec<f64>,
    step: f64,
    domain: Domain,
    rule: OutputRule,
    chosen: Option<Vec<f64>>,
    trace: Option<Vec<Vec<f64>>>,
}

impl Sgd {
    fn build(domain: Domain, w1: &[f64], budget: usize, step: f64, rule: OutputRule) -> Self {
        Self {
            protocol: Protocol::new(budget),
            point: w1.to_vec(),
            step,
            domain,
            rule,
            chosen: None,
            trace: None,
        }
    }

    fn uniform(seed: u64, budget: usize) -> OutputRule {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        OutputRule::Uniform {
            index: rng.random_range(0..budget),
        }
    }

    /// SGD with a given stepsize that reports a uniformly random iterate.
    pub fn with_step(
        domain: Domain,
        w1: &[f64],
        budget: usize,
        step: f64,
        seed: u64,
    ) -> Result<Self> {
        check_start(&domain, w1, budget, 0.0)?;
        ensure(step > 0.0 && step.is_finite(), || format!("stepsize must be positive, got {step}"))?;
        Ok(Self::build(domain, w1, budget, step, Self::uniform(seed, budget)))
    }

    /// Randomised SGD for smooth nonconvex objectives:
    /// `step = min(1/beta, sqrt(2F / (sigma^2 beta K)))`.
    pub fn nonconvex(
        problem: &Problem,
        w1: &[f64],
        budget: usize,
        sigma_in: f64,
        initial_gap: f64,
        seed: u64,
    ) -> Result<Self> {
        let beta = require(problem.smoothness(), "smoothness constant beta")?;
        check_start(problem.domain(), w1, budget, sigma_in)?;
        ensure(initial_gap > 0.0, || format!("F must be positive, got {initial_gap}"))?;
        let step = tuned_min(
            1.0 / beta,
            2.0 * initial_gap,
            sigma_in * sigma_in * beta * budget as f64,
        );
        Ok(Self::build(
            problem.domain().clone(),
            w1,
            budget,
            step,
            Self::uniform(seed, budget),
        ))
    }

    /// SGD for smooth convex objectives: `step = min(1/beta, sqrt(D^2/(sigma^2 K)))`.
    pub fn convex_smooth(
        problem: &Problem,
        w1: &[f64],
        budget: usize,
        sigma_in: f64,
        distance: f64,
        seed: u64,
    ) -> Result<Self> {
        let beta = require(problem.smoothness(), "smoothness constant beta")?;
        check_start(problem.domain(), w1, budget, sigma_in)?;
        ensure(distance > 0.0, || format!("D must be positive, got {distance}"))?;
        let step = tuned_min(
            1.0 / beta,
            distance * distance,
            sigma_in * sigma_in * budget as f64,
        );
        Ok(Self::build(
            problem.domain().clone(),
            w1,
            budget,
            step,
            Self::uniform(seed, budget),
        ))
    }

    /// Projected subgradient method over a bounded domain,
    /// `step = D / sqrt((G^2 + sigma^2) K)`, reporting the average iterate.
    pub fn projected_lipschitz(
        problem: &Problem,
        w1: &[f64],
        budget: usize,
        sigma_in: f64,
        diameter: f64,
        lipschitz: f64,
    ) -> Result<Self> {
        if !problem.domain().is_bounded() {
            return Err(Error::Config(
                "projected SGD needs a bounded domain".into(),
            ));
        }
        check_start(problem.domain(), w1, budget, sigma_in)?;
        ensure(diameter > 0.0 && lipschitz > 0.0, || {
            format!("D and G must be positive, got D={diameter}, G={lipschitz}")
        })?;
        let step = diameter
            / ((lipschitz * lipschitz + sigma_in * sigma_in) * budget as f64).sqrt();
        Ok(Self::build(
            problem.domain().clone(),
            w1,
            budget,
            step,
            OutputRule::Average {
                sum: vec![0.0; w1.len()],
            },
        ))
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    /// Current iterate (the next query point).
    pub fn iterate(&self) -> &[f64] {
        &self.point
    }

    pub fn record_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }
}

impl QueryAlgorithm for Sgd {
    fn budget(&self) -> usize {
        self.protocol.budget
    }

    fn responses(&self) -> usize {
        self.protocol.responses
    }

    fn next_query(&mut self) -> Vec<f64> {
        self.protocol.query();
        let k = self.protocol.responses;
        match &mut self.rule {
            OutputRule::Uniform { index } if *index == k => self.chosen = Some(self.point.clone()),
            OutputRule::Average { sum } => vector::axpy(1.0, &self.point, sum),
            _ => {}
        }
        if let Some(trace) = &mut self.trace {
            trace.push(self.point.clone());
        }
        self.point.clone()
    }

    fn respond(&mut self, gradient: &[f64]) {
        self.protocol.respond();
        vector::axpy(-self.step, gradient, &mut self.point);
        self.domain.project(&mut self.point);
    }

    fn finalize(&mut self) -> OptimizerOutput {
        self.protocol.finalize();
        let w_hat = match &self.rule {
            OutputRule::Uniform { .. } => self.chosen.take().expect("chosen index was visited"),
            OutputRule::Average { sum } => {
                let mut avg = sum.clone();
                vector::scale(1.0 / self.protocol.budget as f64, &mut avg);
                self.domain.project(&mut avg);
                avg
            }
        };
        OptimizerOutput {
            w_hat,
            trace: self.trace.take(),
        }
    }
}

/// Accelerated stochastic approximation (AC-SA) with `alpha_t = 2/(t+1)` and
/// `gamma_t = gamma * t`:
///
/// ```text
/// md_t  = (1 - alpha_t) ag_{t-1} + alpha_t x_{t-1}      (queried)
/// x_t   = P(x_{t-1} - gamma_t g(md_t))
/// ag_t  = (1 - alpha_t) ag_{t-1} + alpha_t x_t
/// ```
///
/// starting from `x_0 = ag_0 = w_1`; the output is `ag_K`.
#[derive(Clone, Debug)]
pub struct AcSa {
    protocol: Protocol,
    gamma: f64,
    domain: Domain,
    search: Vec<f64>,
    aggregate: Vec<f64>,
    middle: Vec<f64>,
    trace: Option<Vec<Vec<f64>>>,
}

impl AcSa {
    pub fn with_gamma(domain: Domain, w1: &[f64], budget: usize, gamma: f64) -> Result<Self> {
        check_start(&domain, w1, budget, 0.0)?;
        ensure(gamma > 0.0 && gamma.is_finite(), || format!("gamma must be positive, got {gamma}"))?;
        Ok(Self {
            protocol: Protocol::new(budget),
            gamma,
            domain,
            search: w1.to_vec(),
            aggregate: w1.to_vec(),
            middle: w1.to_vec(),
            trace: None,
        })
    }

    /// `gamma = min(1/(4 beta), sqrt(3 D^2 / (4 sigma^2 K (K+1)^2)))`.
    pub fn tuned(
        problem: &Problem,
        w1: &[f64],
        budget: usize,
        sigma_in: f64,
        distance: f64,
    ) -> Result<Self> {
        let beta = require(problem.smoothness(), "smoothness constant beta")?;
        check_start(problem.domain(), w1, budget, sigma_in)?;
        ensure(distance > 0.0, || format!("D must be positive, got {distance}"))?;
        let k = budget as f64;
        let gamma = tuned_min(
            1.0 / (4.0 * beta),
            3.0 * distance * distance,
            4.0 * sigma_in * sigma_in * k * (k + 1.0) * (k + 1.0),
        );
        Self::with_gamma(problem.domain().clone(), w1, budget, gamma)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(t: usize) -> f64 {
        2.0 / (t as f64 + 1.0)
    }

    pub fn record_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }
}

impl QueryAlgorithm for AcSa {
    fn budget(&self) -> usize {
        self.protocol.budget
    }

    fn responses(&self) -> usize {
        self.protocol.responses
    }

    fn next_query(&mut self) -> Vec<f64> {
        self.protocol.query();
        let alpha = Self::alpha(self.protocol.responses + 1);
        for ((m, a), x) in self.middle.iter_mut().zip(&self.aggregate).zip(&self.search) {
            *m = (1.0 - alpha) * a + alpha * x;
        }
        if let Some(trace) = &mut self.trace {
            trace.push(self.middle.clone());
        }
        self.middle.clone()
    }

    fn respond(&mut self, gradient: &[f64]) {
        self.protocol.respond();
        let t = self.protocol.responses;
        let alpha = Self::alpha(t);
        vector::axpy(-self.gamma * t as f64, gradient, &mut self.search);
        self.domain.project(&mut self.search);
        for (a, x) in self.aggregate.iter_mut().zip(&self.search) {
            *a = (1.0 - alpha) * *a + alpha * x;
        }
    }

    fn finalize(&mut self) -> OptimizerOutput {
        self.protocol.finalize();
        OptimizerOutput {
            w_hat: self.aggregate.clone(),
            trace: self.trace.take(),
        }
    }
}

/// The inner methods the wrappers know how to tune.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerKind {
    SgdNonconvex,
    SgdConvexSmooth,
    PsgdConvexLipschitz,
    Acsa,
}

/// Tuning constants a method may need. Missing entries surface as
/// configuration errors from [`build_inner`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub beta: Option<f64>,
    #[serde(rename = "F")]
    pub initial_gap: Option<f64>,
    #[serde(rename = "D")]
    pub distance: Option<f64>,
    #[serde(rename = "G")]
    pub lipschitz: Option<f64>,
}

impl Constants {
    /// Tightest constants derivable from a problem and starting point.
    pub fn from_problem(problem: &Problem, w1: &[f64]) -> Self {
        let distance = match problem.domain() {
            Domain::Ball { .. } => problem.diameter(),
            Domain::Unconstrained => problem.distance_to_minimizer(w1),
        };
        Self {
            beta: problem.smoothness(),
            initial_gap: problem.initial_gap(w1),
            distance,
            lipschitz: problem.lipschitz(),
        }
    }

    pub fn beta(&self) -> Result<f64> {
        require(self.beta, "beta")
    }
    pub fn initial_gap(&self) -> Result<f64> {
        require(self.initial_gap, "F")
    }
    pub fn distance(&self) -> Result<f64> {
        require(self.distance, "D")
    }
    pub fn lipschitz(&self) -> Result<f64> {
        require(self.lipschitz, "G")
    }
}

/// Builds `A(sigma_in, K)` for the given method. The problem's own smoothness
/// constant is overridden by `constants.beta` when present.
pub fn build_inner(
    kind: InnerKind,
    problem: &Problem,
    w1: &[f64],
    budget: usize,
    sigma_in: f64,
    constants: &Constants,
    seed: u64,
) -> Result<Box<dyn QueryAlgorithm + Send>> {
    let domain = problem.domain().clone();
    Ok(match kind {
        InnerKind::SgdNonconvex => {
            let beta = constants.beta()?;
            let f = constants.initial_gap()?;
            check_start(&domain, w1, budget, sigma_in)?;
            let step = tuned_min(1.0 / beta, 2.0 * f, sigma_in * sigma_in * beta * budget as f64);
            Box::new(Sgd::with_step(domain, w1, budget, step, seed)?)
        }
        InnerKind::SgdConvexSmooth => {
            let beta = constants.beta()?;
            let d = constants.distance()?;
            check_start(&domain, w1, budget, sigma_in)?;
            let step = tuned_min(1.0 / beta, d * d, sigma_in * sigma_in * budget as f64);
            Box::new(Sgd::with_step(domain, w1, budget, step, seed)?)
        }
        InnerKind::PsgdConvexLipschitz => Box::new(Sgd::projected_lipschitz(
            problem,
            w1,
            budget,
            sigma_in,
            constants.distance()?,
            constants.lipschitz()?,
        )?),
        InnerKind::Acsa => {
            let beta = constants.beta()?;
            let d = constants.distance()?;
            check_start(&domain, w1, budget, sigma_in)?;
            let k = budget as f64;
            let gamma = tuned_min(
                1.0 / (4.0 * beta),
                3.0 * d * d,
                4.0 * sigma_in * sigma_in * k * (k + 1.0) * (k + 1.0),
            );
            Box::new(AcSa::with_gamma(domain, w1, budget, gamma)?)
        }
    })
}

/// Drives a query algorithm with direct (undelayed) oracle access.
pub fn run_synchronous<A: QueryAlgorithm + ?Sized>(
    algorithm: &mut A,
    oracle: &mut crate::problems::GradientOracle<'_>,
) -> Result<OptimizerOutput> {
    while !algorithm.is_complete() {
        let w = algorithm.next_query();
        let g = oracle.sample_gradient(&w)?;
        algorithm.respond(&g);
    }
    Ok(algorithm.finalize())
}

/// Fixed-stepsize asynchronous SGD: every received gradient, however stale,
/// is applied immediately, `w_{t+1} = w_t - eta g_t`.
#[derive(Clone, Debug)]
pub struct VanillaAsyncSgd {
    point: Vec<f64>,
    eta: f64,
    domain: Domain,
    round: usize,
    played: Vec<Vec<f64>>,
    keep_played: bool,
}

impl VanillaAsyncSgd {
    pub fn new(domain: Domain, w1: &[f64], eta: f64) -> Result<Self> {
        ensure(eta > 0.0 && eta.is_finite(), || format!("eta must be positive, got {eta}"))?;
        if !domain.contains(w1) {
            return Err(Error::Domain(format!("initial point {w1:?} is outside the domain")));
        }
        Ok(Self {
            point: w1.to_vec(),
            eta,
            domain,
            round: 1,
            played: Vec::new(),
            keep_played: false,
        })
    }

    /// Keep every played iterate `w_1..w_T` for later inspection.
    pub fn keep_iterates(mut self) -> Self {
        self.keep_played = true;
        self
    }

    pub fn iterates(&self) -> &[Vec<f64>] {
        &self.played
    }

    /// The next iterate after all received gradients, `w_{T+1}`.
    pub fn last_iterate(&self) -> &[f64] {
        &self.point
    }
}

impl AsyncAlgorithm for VanillaAsyncSgd {
    fn current_point(&self) -> &[f64] {
        &self.point
    }

    fn current_point_id(&self) -> usize {
        self.round
    }

    fn receive(&mut self, delivery: Delivery<'_>) -> bool {
        if self.keep_played {
            self.played.push(self.point.clone());
        }
        vector::axpy(-self.eta, delivery.gradient, &mut self.point);
        self.domain.project(&mut self.point);
        self.round += 1;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_convex_lipschitz, make_nonconvex_smooth, make_quadratic, GradientOracle};

    #[test]
    fn sgd_one_exact_step_on_quadratic() {
        let beta = 2.0;
        let p = make_quadratic(1, beta, &[0.0]).unwrap();
        let mut alg = Sgd::nonconvex(&p, &[1.0], 1, 0.0, p.initial_gap(&[1.0]).unwrap(), 0)
            .unwrap()
            .record_trace();
        assert_eq!(alg.step_size(), 1.0 / beta);
        let mut o = GradientOracle::new(&p, 0.0, 0).unwrap();
        let out = run_synchronous(&mut alg, &mut o).unwrap();
        assert_eq!(alg.iterate(), &[0.0]);
        // only w_1 is eligible for output when K = 1
        assert_eq!(out.w_hat, vec![1.0]);
        assert_eq!(out.trace.unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn convex_smooth_one_step_reaches_minimizer() {
        let p = make_quadratic(2, 1.0, &[1.0, -1.0]).unwrap();
        let w1 = [4.0, 3.0];
        let d = p.distance_to_minimizer(&w1).unwrap();
        let mut alg = Sgd::convex_smooth(&p, &w1, 1, 0.0, d, 0).unwrap();
        let mut o = GradientOracle::new(&p, 0.0, 0).unwrap();
        run_synchronous(&mut alg, &mut o).unwrap();
        assert_eq!(alg.iterate(), &[1.0, -1.0]);
    }

    #[test]
    fn stepsizes_follow_the_tuned_formulas() {
        let p = make_nonconvex_smooth(1, 2.0).unwrap();
        let a = Sgd::nonconvex(&p, &[1.0], 50, 3.0, 0.5, 0).unwrap();
        let expect = (1.0_f64 / 2.0).min((2.0 * 0.5 / (9.0 * 2.0 * 50.0_f64)).sqrt());
        assert_eq!(a.step_size(), expect);

        let q = make_quadratic(1, 1.0, &[0.0]).unwrap();
        let b = Sgd::convex_smooth(&q, &[1.0], 16, 1.0, 1.0, 0).unwrap();
        assert_eq!(b.step_size(), 0.25);

        let c = AcSa::tuned(&q, &[1.0], 10, 0.0, 1.0).unwrap();
        assert_eq!(c.gamma(), 0.25);
        let c = AcSa::tuned(&q, &[1.0], 10, 1.0, 1.0).unwrap();
        assert_eq!(c.gamma(), (3.0_f64 / (4.0 * 10.0 * 121.0)).sqrt());

        let l = make_convex_lipschitz(1, 3.0, 2.0).unwrap();
        let d = Sgd::projected_lipschitz(&l, &[1.0], 25, 4.0, 2.0, 3.0).unwrap();
        assert_eq!(d.step_size(), 2.0 / (25.0_f64 * 25.0).sqrt());
    }

    #[test]
    fn missing_constants_are_configuration_errors() {
        let l = make_convex_lipschitz(1, 1.0, 2.0).unwrap();
        assert!(matches!(Sgd::nonconvex(&l, &[0.0], 4, 1.0, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(AcSa::tuned(&l, &[0.0], 4, 1.0, 1.0), Err(Error::Config(_))));
        let q = make_quadratic(1, 1.0, &[0.0]).unwrap();
        assert!(matches!(
            Sgd::projected_lipschitz(&q, &[0.0], 4, 1.0, 1.0, 1.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_inner(InnerKind::Acsa, &q, &[0.0], 4, 1.0, &Constants::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    #[should_panic(expected = "outstanding query")]
    fn respond_without_query_panics() {
        let q = make_quadratic(1, 1.0, &[0.0]).unwrap();
        let mut a = Sgd::convex_smooth(&q, &[1.0], 2, 0.0, 1.0, 0).unwrap();
        a.respond(&[1.0]);
    }

    #[test]
    #[should_panic(expected = "before the previous response")]
    fn double_query_panics() {
        let q = make_quadratic(1, 1.0, &[0.0]).unwrap();
        let mut a = AcSa::tuned(&q, &[1.0], 2, 0.0, 1.0).unwrap();
        a.next_query();
        a.next_query();
    }

    #[test]
    #[should_panic(expected = "finalize after 1 of 2")]
    fn early_finalize_panics() {
        let q = make_quadratic(1, 1.0, &[0.0]).unwrap();
        let mut a = AcSa::tuned(&q, &[1.0], 2, 0.0, 1.0).unwrap();
        a.next_query();
        a.respond(&[1.0]);
        a.finalize();
    }

    #[test]
    fn random_output_index_is_seeded() {
        let q = make_quadratic(1, 1.0, &[0.0]).unwrap();
        let run = |seed| {
            let mut a = Sgd::nonconvex(&q, &[1.0], 3, 1.0, 0.5, seed).unwrap();
            let mut o = GradientOracle::new(&q, 1.0, 9).unwrap();
            run_synchronous(&mut a, &mut o).unwrap().w_hat
        };
        assert_eq!(run(5), run(5));
        let distinct: std::collections::HashSet<u64> =
            (0..40).map(|s| run(s)[0].to_bits()).collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn psgd_noiseless_rate_and_feasibility() {
        let (g, d) = (2.0, 2.0);
        let p = make_convex_lipschitz(1, g, d).unwrap();
        for k in [1usize, 4, 16, 100] {
            let mut a = Sgd::projected_lipschitz(&p, &[d / 2.0], k, 0.0, d, g).unwrap();
            let mut o = GradientOracle::new(&p, 0.0, 0).unwrap();
            while !a.is_complete() {
                let w = a.next_query();
                assert!(p.domain().contains(&w));
                let gr = o.sample_gradient(&w).unwrap();
                a.respond(&gr);
            }
            let out = a.finalize();
            assert!(p.domain().contains(&out.w_hat));
            assert!(p.suboptimality(&out.w_hat).unwrap() <= 2.0 * d * g / (k as f64).sqrt());
        }
    }

    #[test]
    fn psgd_started_at_minimizer_stays_close() {
        let (g, d) = (1.0, 4.0);
        let p = make_convex_lipschitz(2, g, d).unwrap();
        let k = 64;
        let mut a = Sgd::projected_lipschitz(&p, &[0.0, 0.0], k, 0.0, d, g).unwrap();
        let step = a.step_size();
        let mut o = GradientOracle::new(&p, 0.0, 0).unwrap();
        while !a.is_complete() {
            let w = a.next_query();
            assert!(vector::norm(&w) <= step * g + 1e-12);
            let gr = o.sample_gradient(&w).unwrap();
            a.respond(&gr);
        }
        let out = a.finalize();
        assert!(p.suboptimality(&out.w_hat).unwrap() <= 2.0 * d * g / (k as f64).sqrt());
    }

    #[test]
    fn acsa_noiseless_quadratic_meets_rate() {
        let p = make_quadratic(1, 1.0, &[0.0]).unwrap();
        let mut a = AcSa::tuned(&p, &[1.0], 32, 0.0, 1.0).unwrap();
        let mut o = GradientOracle::new(&p, 0.0, 0).unwrap();
        let out = run_synchronous(&mut a, &mut o).unwrap();
        let gap = p.suboptimality(&out.w_hat).unwrap();
        assert!(gap <= 4.0 / (32.0 * 33.0), "gap {gap}");
    }

    #[test]
    fn acsa_single_query_stays_in_domain() {
        let p = make_quadratic(1, 1.0, &[0.0]).unwrap();
        let mut a = AcSa::tuned(&p, &[1.0], 1, 0.0, 1.0).unwrap();
        let mut o = GradientOracle::new(&p, 0.0, 0).unwrap();
        let out = run_synchronous(&mut a, &mut o).unwrap();
        // alpha_1 = 1: query w_1, step gamma, aggregate = search point
        assert_eq!(out.w_hat, vec![1.0 - 0.25]);
    }

    #[test]
    fn acceleration_beats_plain_sgd_without_noise() {
        // Plain SGD with step 1/beta lands on w* after one step, so the
        // expected gap of its uniformly random output is f(w_1)/K exactly.
        let p = make_quadratic(1, 1.0, &[0.0]).unwrap();
        for k in [8usize, 16, 64] {
            let mut a = AcSa::tuned(&p, &[1.0], k, 0.0, 1.0).unwrap();
            let mut o = GradientOracle::new(&p, 0.0, 0).unwrap();
            let acc = p.suboptimality(&run_synchronous(&mut a, &mut o).unwrap().w_hat).unwrap();

            let mut sgd = Sgd::convex_smooth(&p, &[1.0], k, 0.0, 1.0, 0).unwrap().record_trace();
            let mut o = GradientOracle::new(&p, 0.0, 0).unwrap();
            let trace = run_synchronous(&mut sgd, &mut o).unwrap().trace.unwrap();
            let plain = trace.iter().map(|w| p.suboptimality(w).unwrap()).sum::<f64>() / k as f64;
            assert!(acc < plain, "K={k}: accelerated {acc} vs plain {plain}");
        }
    }

    #[test]
    fn trace_csv_layout() {
        let p = make_quadratic(2, 1.0, &[0.0, 0.0]).unwrap();
        let mut a = Sgd::convex_smooth(&p, &[3.0, 4.0], 2, 0.0, 5.0, 0).unwrap().record_trace();
        let mut o = GradientOracle::new(&p, 0.0, 0).unwrap();
        let out = run_synchronous(&mut a, &mut o).unwrap();
        let mut buf = Vec::new();
        out.write_trace_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,norm,w_0,w_1\n1,5,3,4\n2,0,0,0\n");
    }
}
