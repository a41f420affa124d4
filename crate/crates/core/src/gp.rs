//! Exact Gaussian process regression.
//!
//! The model has a zero prior mean on centered targets: `fit` subtracts the
//! target mean and `predict` adds it back. The noisy Gram matrix
//! `K(X, X) + noise * I` is factorized by Cholesky; if that fails, a diagonal
//! jitter is escalated from [`JITTER_START`] by factors of ten up to
//! [`JITTER_MAX`]. The first attempt already carries [`JITTER_START`].

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernels::{gram_matrix, gram_symmetric, Covariance, KernelError, KernelSpec};
use crate::optim::golden_section_max;

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;
pub const DEFAULT_NOISE_VARIANCE: f64 = 1e-4;

/// Log-space box for every tuned hyperparameter.
pub const HYPER_LOWER: f64 = 1e-2;
pub const HYPER_UPPER: f64 = 1e2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("no training points")]
    Empty,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("noise variance must be finite and non-negative, got {0}")]
    InvalidNoise(f64),
    #[error("kernel matrix is not positive definite even with jitter {JITTER_MAX}")]
    IllConditioned,
    #[error("tuning budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// A fitted Gaussian process.
#[derive(Debug, Clone)]
pub struct GpModel {
    x_train: DMatrix<f64>,
    y_centered: DVector<f64>,
    y_offset: f64,
    kernel: KernelSpec,
    noise_variance: f64,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// Posterior marginals at a set of test points.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: DVector<f64>,
    /// Latent-function variance, clamped at zero.
    pub variance: DVector<f64>,
}

impl GpModel {
    /// Fits on targets centered at their sample mean.
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, kernel: KernelSpec, noise_variance: f64) -> Result<Self, GpError> {
        let offset = if y.is_empty() { 0.0 } else { y.mean() };
        Self::fit_with_offset(x, y, kernel, noise_variance, offset)
    }

    /// Fits with a caller-chosen constant prior mean `y_offset`; `0.0` gives
    /// the plain zero-mean process.
    pub fn fit_with_offset(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        kernel: KernelSpec,
        noise_variance: f64,
        y_offset: f64,
    ) -> Result<Self, GpError> {
        if !y_offset.is_finite() {
            return Err(GpError::NonFinite("targets"));
        }
        Self::fit_centered(x, &y.add_scalar(-y_offset), y_offset, kernel, noise_variance)
    }

    /// Fits on targets already centered at `y_offset`. Used when restoring a
    /// persisted model so the stored targets are reused bit for bit.
    pub fn fit_centered(
        x: &DMatrix<f64>,
        y_centered: &DVector<f64>,
        y_offset: f64,
        kernel: KernelSpec,
        noise_variance: f64,
    ) -> Result<Self, GpError> {
        let y = y_centered;
        let n = x.nrows();
        if n == 0 {
            return Err(GpError::Empty);
        }
        if y.len() != n {
            return Err(GpError::Shape(format!("{n} input rows but {} targets", y.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite("inputs"));
        }
        if y.iter().any(|v| !v.is_finite()) || !y_offset.is_finite() {
            return Err(GpError::NonFinite("targets"));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(GpError::InvalidNoise(noise_variance));
        }
        kernel.validate()?;

        let y_centered = y.clone();
        let gram = gram_symmetric(x, &kernel);

        let mut jitter = JITTER_START;
        let chol = loop {
            let mut k = gram.clone();
            for i in 0..n {
                k[(i, i)] += noise_variance + jitter;
            }
            if let Some(c) = Cholesky::new(k) {
                break c;
            }
            jitter *= 10.0;
            // Allow for rounding in the repeated multiplication.
            if jitter > JITTER_MAX * 1.000_001 {
                return Err(GpError::IllConditioned);
            }
        };
        let alpha = chol.solve(&y_centered);
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(GpError::IllConditioned);
        }

        Ok(Self { x_train: x.clone(), y_centered, y_offset, kernel, noise_variance, jitter, chol, alpha })
    }

    pub fn predict(&self, x_star: &DMatrix<f64>) -> Result<Prediction, GpError> {
        if x_star.ncols() != self.x_train.ncols() {
            return Err(GpError::Shape(format!(
                "model has {} features, test points have {}",
                self.x_train.ncols(),
                x_star.ncols()
            )));
        }
        if x_star.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite("test inputs"));
        }
        // n x m
        let k_star = gram_matrix(&self.x_train, x_star, &self.kernel)?;
        let mean = k_star.tr_mul(&self.alpha).add_scalar(self.y_offset);
        let v = self.chol.l_dirty().solve_lower_triangular(&k_star).ok_or(GpError::IllConditioned)?;
        let prior = self.kernel.diag();
        let variance =
            DVector::from_iterator(x_star.nrows(), v.column_iter().map(|c| (prior - c.norm_squared()).max(0.0)));
        Ok(Prediction { mean, variance })
    }

    /// Log evidence of the centered targets under the fitted covariance.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y_centered.len() as f64;
        let log_det_half: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * self.y_centered.dot(&self.alpha) - log_det_half - 0.5 * n * (2.0 * PI).ln()
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x_train
    }

    /// Training targets in their original (uncentered) scale.
    pub fn y_train(&self) -> DVector<f64> {
        self.y_centered.add_scalar(self.y_offset)
    }

    pub fn y_centered(&self) -> &DVector<f64> {
        &self.y_centered
    }

    pub fn y_offset(&self) -> f64 {
        self.y_offset
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Diagonal jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }
}

/// Result of marginal-likelihood hyperparameter search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunedKernel {
    pub spec: KernelSpec,
    pub log_marginal_likelihood: f64,
    pub evaluations: usize,
}

/// Maximizes the log marginal likelihood over the tunable hyperparameters of
/// `template`, within `[HYPER_LOWER, HYPER_UPPER]` in log space.
///
/// The template itself is evaluated first. A third of the remaining budget
/// goes to log-uniform random starts; the rest to cyclic coordinate-wise
/// golden-section refinement around the incumbent with a shrinking window.
/// For an ensemble, each member is tuned on its own with the full budget and
/// the weights are kept.
pub fn tune_hyperparameters(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    template: &KernelSpec,
    noise_variance: f64,
    budget: usize,
    seed: u64,
) -> Result<TunedKernel, GpError> {
    if budget == 0 {
        return Err(GpError::ZeroBudget);
    }
    template.validate()?;
    if let KernelSpec::Ensemble(e) = template {
        let mut e = *e;
        let rbf = tune_member(x, y, &KernelSpec::Rbf(e.rbf), noise_variance, budget, seed)?;
        let rq = tune_member(x, y, &KernelSpec::RationalQuadratic(e.rq), noise_variance, budget, seed ^ 1)?;
        let matern = tune_member(x, y, &KernelSpec::Matern(e.matern), noise_variance, budget, seed ^ 2)?;
        if let KernelSpec::Rbf(k) = rbf.spec {
            e.rbf = k;
        }
        if let KernelSpec::RationalQuadratic(k) = rq.spec {
            e.rq = k;
        }
        if let KernelSpec::Matern(k) = matern.spec {
            e.matern = k;
        }
        let spec = KernelSpec::Ensemble(e);
        let lml =
            GpModel::fit(x, y, spec, noise_variance).map(|m| m.log_marginal_likelihood()).unwrap_or(f64::NEG_INFINITY);
        return Ok(TunedKernel {
            spec,
            log_marginal_likelihood: lml,
            evaluations: rbf.evaluations + rq.evaluations + matern.evaluations + 1,
        });
    }
    tune_member(x, y, template, noise_variance, budget, seed)
}

fn tune_member(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    template: &KernelSpec,
    noise_variance: f64,
    budget: usize,
    seed: u64,
) -> Result<TunedKernel, GpError> {
    // Surface shape and NaN problems instead of scoring them as -inf.
    let start = GpModel::fit(x, y, *template, noise_variance);
    let start_lml = match start {
        Ok(m) => m.log_marginal_likelihood(),
        Err(GpError::IllConditioned) => f64::NEG_INFINITY,
        Err(e) => return Err(e),
    };

    let (lo, hi) = (HYPER_LOWER.ln(), HYPER_UPPER.ln());
    let mut best: Vec<f64> = template.tunable().iter().map(|(_, v)| v.ln().clamp(lo, hi)).collect();
    let mut best_lml = start_lml;
    let mut used = 1;
    let dims = best.len();

    let objective = |log_params: &[f64]| -> f64 {
        let values: Vec<f64> = log_params.iter().map(|v| v.exp()).collect();
        match GpModel::fit(x, y, template.with_tunable(&values), noise_variance) {
            Ok(m) => m.log_marginal_likelihood(),
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let remaining = budget - used;
    let random_starts = remaining / 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_starts {
        let candidate: Vec<f64> = (0..dims).map(|_| rng.random_range(lo..=hi)).collect();
        let lml = objective(&candidate);
        used += 1;
        if lml > best_lml {
            best_lml = lml;
            best = candidate;
        }
    }

    const EVALS_PER_LINE: usize = 8;
    let mut half_width = 2.0;
    'refine: loop {
        for coord in 0..dims {
            let left = budget - used;
            if left < 2 {
                break 'refine;
            }
            let a = (best[coord] - half_width).max(lo);
            let b = (best[coord] + half_width).min(hi);
            let mut probe = best.clone();
            let line = golden_section_max(
                |v| {
                    probe[coord] = v;
                    objective(&probe)
                },
                a,
                b,
                0.0,
                EVALS_PER_LINE.min(left),
            );
            used += line.evaluations;
            if line.value > best_lml {
                best_lml = line.value;
                best[coord] = line.x;
            }
        }
        half_width = (half_width * 0.5).max(0.05);
    }

    let values: Vec<f64> = best.iter().map(|v| v.exp()).collect();
    Ok(TunedKernel {
        spec: if best_lml > start_lml { template.with_tunable(&values) } else { *template },
        log_marginal_likelihood: best_lml.max(start_lml),
        evaluations: used,
    })
}
