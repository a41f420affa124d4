//! Bayesian optimization of ensemble kernel weights over the probability
//! simplex.
//!
//! The loop keeps a surrogate Gaussian process over the first two simplex
//! coordinates `(w_rbf, w_rq)`, fitted to standardized scores. Each round
//! draws a pool of uniform simplex candidates, picks the one with the largest
//! expected improvement, evaluates it, updates the incumbent only on a strict
//! improvement, and refits the surrogate.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::data_io::Dataset;
use crate::evaluation::{cross_validate_predictions, make_folds, per_fold_rmse, EvalError, FoldPlan};
use crate::gp::{GpError, GpModel};
use crate::kernels::{Ensemble, EnsembleWeights, KernelSpec, Matern, MaternNu};
use crate::transforms::{normal_cdf, normal_pdf};

pub const SURROGATE_LENGTHSCALE: f64 = 0.3;
pub const SURROGATE_NOISE: f64 = 1e-6;
pub const DEFAULT_XI: f64 = 0.01;
pub const DEFAULT_CANDIDATE_POOL: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoError {
    #[error("invalid BO configuration: {0}")]
    InvalidConfig(String),
    #[error("surrogate needs at least 2 observations, have {0}")]
    SurrogateNotReady(usize),
    #[error("objective returned non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("need at least {needed} rows for {folds}-fold evaluation, got {got}")]
    TooFewRows { needed: usize, folds: usize, got: usize },
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoConfig {
    pub iterations: usize,
    pub initial_designs: usize,
    pub candidate_pool: usize,
    pub acquisition_xi: f64,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            initial_designs: 5,
            candidate_pool: DEFAULT_CANDIDATE_POOL,
            acquisition_xi: DEFAULT_XI,
            cv_folds: 5,
            seed: 42,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<(), BoError> {
        let bad = |m: &str| Err(BoError::InvalidConfig(m.to_string()));
        if self.iterations < 1 {
            return bad("iterations must be at least 1");
        }
        if self.initial_designs < 2 {
            return bad("initial_designs must be at least 2");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2");
        }
        if self.candidate_pool < 1 {
            return bad("candidate_pool must be at least 1");
        }
        if !(self.acquisition_xi.is_finite() && self.acquisition_xi >= 0.0) {
            return bad("acquisition_xi must be non-negative");
        }
        Ok(())
    }
}

/// Expected improvement of a Gaussian posterior `N(mu, sigma^2)` over `best`
/// for a maximization problem.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let gain = mu - best - xi;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    (gain * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// Uniform draw from the probability simplex via normalized exponentials.
pub fn sample_simplex(rng: &mut ChaCha8Rng) -> EnsembleWeights {
    let e: [f64; 3] = [Exp1.sample(rng), Exp1.sample(rng), Exp1.sample(rng)];
    EnsembleWeights::normalized(e[0], e[1], e[2]).expect("exponential draws are positive")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Initial,
    Acquired,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Initial => "initial",
            Phase::Acquired => "acquired",
        })
    }
}

/// One row of the optimization history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub weights: EnsembleWeights,
    pub score: f64,
    pub incumbent_weights: EnsembleWeights,
    pub incumbent_score: f64,
}

/// Optimization history, incumbent and surrogate.
#[derive(Debug, Clone)]
pub struct BoState {
    trace: Vec<TraceRecord>,
    incumbent: Option<(EnsembleWeights, f64)>,
    surrogate: Option<Surrogate>,
    rng_seed: u64,
}

#[derive(Debug, Clone)]
struct Surrogate {
    model: GpModel,
    score_mean: f64,
    score_scale: f64,
}

impl BoState {
    pub fn new(rng_seed: u64) -> Self {
        Self { trace: Vec::new(), incumbent: None, surrogate: None, rng_seed }
    }

    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn observed_weights(&self) -> Vec<EnsembleWeights> {
        self.trace.iter().map(|r| r.weights).collect()
    }

    pub fn observed_scores(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.score).collect()
    }

    pub fn incumbent_weights(&self) -> Option<EnsembleWeights> {
        self.incumbent.map(|(w, _)| w)
    }

    /// Best score so far; `-inf` before the first observation.
    pub fn incumbent_score(&self) -> f64 {
        self.incumbent.map_or(f64::NEG_INFINITY, |(_, s)| s)
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Records an evaluation, updates the incumbent on strict improvement and
    /// refits the surrogate. Returns whether the incumbent changed.
    pub fn observe(&mut self, phase: Phase, weights: EnsembleWeights, score: f64) -> Result<bool, BoError> {
        if !score.is_finite() {
            return Err(BoError::NonFiniteScore(score));
        }
        let improved = score > self.incumbent_score();
        if improved {
            self.incumbent = Some((weights, score));
        }
        let (iw, is) = self.incumbent.expect("set above");
        self.trace.push(TraceRecord {
            iteration: self.trace.len(),
            phase,
            weights,
            score,
            incumbent_weights: iw,
            incumbent_score: is,
        });
        self.refit_surrogate()?;
        Ok(improved)
    }

    fn refit_surrogate(&mut self) -> Result<(), BoError> {
        let n = self.trace.len();
        if n < 2 {
            self.surrogate = None;
            return Ok(());
        }
        let scores = self.observed_scores();
        let mean = scores.iter().sum::<f64>() / n as f64;
        let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let scale = if sd > 0.0 { sd } else { 1.0 };
        let x = DMatrix::from_fn(n, 2, |i, j| self.trace[i].weights.leading()[j]);
        let y = DVector::from_iterator(n, scores.iter().map(|s| (s - mean) / scale));
        let model = GpModel::fit(&x, &y, surrogate_kernel(), SURROGATE_NOISE)?;
        self.surrogate = Some(Surrogate { model, score_mean: mean, score_scale: scale });
        Ok(())
    }

    /// Surrogate posterior mean and standard deviation in score units.
    pub fn surrogate_posterior(&self, candidates: &[EnsembleWeights]) -> Result<(Vec<f64>, Vec<f64>), BoError> {
        let s = self.surrogate.as_ref().ok_or(BoError::SurrogateNotReady(self.len()))?;
        let (mu, sd) = s.standardized_posterior(candidates)?;
        Ok((
            mu.iter().map(|m| m * s.score_scale + s.score_mean).collect(),
            sd.iter().map(|v| v * s.score_scale).collect(),
        ))
    }

    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "iteration,phase,w_rbf,w_rq,w_matern,score,incumbent_w_rbf,incumbent_w_rq,incumbent_w_matern,incumbent_score"
        )?;
        for r in &self.trace {
            let [a, b, c] = r.weights.as_array();
            let [ia, ib, ic] = r.incumbent_weights.as_array();
            writeln!(out, "{},{},{a},{b},{c},{},{ia},{ib},{ic},{}", r.iteration, r.phase, r.score, r.incumbent_score)?;
        }
        Ok(())
    }
}

impl Surrogate {
    fn standardized_posterior(&self, candidates: &[EnsembleWeights]) -> Result<(Vec<f64>, Vec<f64>), BoError> {
        let x = DMatrix::from_fn(candidates.len(), 2, |i, j| candidates[i].leading()[j]);
        let p = self.model.predict(&x)?;
        Ok((p.mean.iter().copied().collect(), p.variance.iter().map(|v| v.sqrt()).collect()))
    }
}

fn surrogate_kernel() -> KernelSpec {
    KernelSpec::Matern(Matern { variance: 1.0, lengthscale: SURROGATE_LENGTHSCALE, nu: MaternNu::FiveHalves })
}

/// Candidate generator for the acquisition step of round `round`. Stream 0
/// belongs to the initial design; each round gets its own stream so the draw
/// depends only on seed and history size.
fn round_rng(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64 + 1);
    rng
}

/// Picks the next weights to evaluate: the expected-improvement argmax over
/// a pool of uniform simplex candidates, ties going to the lowest index.
pub fn acquire_threshold(state: &BoState, config: &BoConfig) -> Result<EnsembleWeights, BoError> {
    let surrogate = state.surrogate.as_ref().ok_or(BoError::SurrogateNotReady(state.len()))?;
    let mut rng = round_rng(state.rng_seed, state.len());
    let candidates: Vec<EnsembleWeights> = (0..config.candidate_pool).map(|_| sample_simplex(&mut rng)).collect();
    let (mu, sd) = surrogate.standardized_posterior(&candidates)?;
    let best = (state.incumbent_score() - surrogate.score_mean) / surrogate.score_scale;

    let mut arg = 0;
    let mut top = f64::NEG_INFINITY;
    for (i, (m, s)) in mu.iter().zip(&sd).enumerate() {
        let ei = expected_improvement(*m, *s, best, config.acquisition_xi);
        if ei > top {
            top = ei;
            arg = i;
        }
    }
    Ok(candidates[arg])
}

/// Initial design: the three vertices and the centroid (truncated when fewer
/// designs are requested), then uniform simplex draws.
pub fn initial_designs(config: &BoConfig) -> Vec<EnsembleWeights> {
    let fixed = [
        EnsembleWeights::from_leading(1.0, 0.0),
        EnsembleWeights::from_leading(0.0, 1.0),
        EnsembleWeights::from_leading(0.0, 0.0),
        EnsembleWeights::uniform(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut designs: Vec<EnsembleWeights> = fixed.iter().copied().take(config.initial_designs).collect();
    while designs.len() < config.initial_designs {
        designs.push(sample_simplex(&mut rng));
    }
    designs
}

/// Final result of a weight search.
#[derive(Debug, Clone)]
pub struct BoOutcome {
    pub weights: EnsembleWeights,
    pub score: f64,
    pub state: BoState,
}

/// Runs the optimization loop against an arbitrary objective (higher is
/// better).
pub fn optimize_with<F>(config: &BoConfig, mut objective: F) -> Result<BoOutcome, BoError>
where
    F: FnMut(&EnsembleWeights) -> Result<f64, BoError>,
{
    config.validate()?;
    let mut state = BoState::new(config.seed);
    for w in initial_designs(config) {
        let score = objective(&w)?;
        state.observe(Phase::Initial, w, score)?;
    }
    for _ in 0..config.iterations {
        let w = acquire_threshold(&state, config)?;
        let score = objective(&w)?;
        state.observe(Phase::Acquired, w, score)?;
    }
    let (weights, score) = state.incumbent.expect("at least two observations");
    Ok(BoOutcome { weights, score, state })
}

/// Cross-validated score of an ensemble with fixed member hyperparameters.
#[derive(Debug, Clone)]
pub struct CvObjective<'a> {
    data: &'a Dataset,
    members: Ensemble,
    noise_variance: f64,
    plan: FoldPlan,
}

impl<'a> CvObjective<'a> {
    pub fn new(
        data: &'a Dataset,
        members: Ensemble,
        noise_variance: f64,
        folds: usize,
        seed: u64,
    ) -> Result<Self, BoError> {
        let needed = 2 * folds;
        if data.n_rows() < needed {
            return Err(BoError::TooFewRows { needed, folds, got: data.n_rows() });
        }
        let plan = make_folds(data.n_rows(), folds, seed)?;
        Ok(Self { data, members, noise_variance, plan })
    }

    pub fn plan(&self) -> &FoldPlan {
        &self.plan
    }

    pub fn spec_for(&self, weights: &EnsembleWeights) -> KernelSpec {
        KernelSpec::Ensemble(Ensemble { weights: *weights, ..self.members })
    }

    /// Negative RMSE averaged over folds.
    pub fn score(&self, weights: &EnsembleWeights) -> Result<f64, BoError> {
        score_spec(self.data, &self.spec_for(weights), self.noise_variance, &self.plan)
    }
}

/// Negative fold-averaged RMSE of any kernel under a fixed fold plan.
pub fn score_spec(data: &Dataset, spec: &KernelSpec, noise_variance: f64, plan: &FoldPlan) -> Result<f64, BoError> {
    let pred = cross_validate_predictions(data, spec, noise_variance, plan)?;
    let rmse = per_fold_rmse(data.target().as_slice(), pred.as_slice(), plan);
    Ok(-rmse.iter().sum::<f64>() / rmse.len() as f64)
}

/// Scores one weight vector with folds drawn from `config.seed`.
pub fn evaluate_model(
    data: &Dataset,
    weights: &EnsembleWeights,
    members: &Ensemble,
    noise_variance: f64,
    config: &BoConfig,
) -> Result<f64, BoError> {
    CvObjective::new(data, *members, noise_variance, config.cv_folds, config.seed)?.score(weights)
}

/// Searches ensemble weights that maximize the cross-validated score.
pub fn optimize_kernel_weight(
    data: &Dataset,
    members: &Ensemble,
    noise_variance: f64,
    config: &BoConfig,
) -> Result<BoOutcome, BoError> {
    config.validate()?;
    let objective = CvObjective::new(data, *members, noise_variance, config.cv_folds, config.seed)?;
    optimize_with(config, |w| objective.score(w))
}
