//! Isotropic covariance functions and their weighted ensemble.
//!
//! All kernels here are stationary and depend on the inputs only through the
//! Euclidean distance, so each one is evaluated from a squared distance.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

/// Tolerance on the sum of ensemble weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid hyperparameter {name} = {value}")]
    InvalidHyperparameter { name: &'static str, value: f64 },
    #[error("unsupported Matern smoothness {0} (expected 0.5, 1.5 or 2.5)")]
    UnsupportedNu(f64),
    #[error("invalid ensemble weights ({0}, {1}, {2}): must be non-negative and sum to 1")]
    InvalidWeights(f64, f64, f64),
    #[error("unknown kernel family '{0}' (expected rbf, rq, matern or ensemble)")]
    UnknownFamily(String),
}

pub trait Covariance {
    /// Covariance as a function of the squared Euclidean distance.
    fn at_sq_dist(&self, d2: f64) -> f64;

    fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64, KernelError> {
        Ok(self.at_sq_dist(sq_dist(x, x2)?))
    }

    /// Prior variance `k(x, x)`.
    fn diag(&self) -> f64 {
        self.at_sq_dist(0.0)
    }
}

pub fn sq_dist(x: &[f64], x2: &[f64]) -> Result<f64, KernelError> {
    if x.len() != x2.len() {
        return Err(KernelError::DimensionMismatch { left: x.len(), right: x2.len() });
    }
    Ok(x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum())
}

fn positive(name: &'static str, value: f64) -> Result<(), KernelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(KernelError::InvalidHyperparameter { name, value })
    }
}

/// Unit-variance squared-exponential kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rbf {
    pub lengthscale: f64,
}

impl Covariance for Rbf {
    fn at_sq_dist(&self, d2: f64) -> f64 {
        (-d2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RationalQuadratic {
    pub variance: f64,
    pub lengthscale: f64,
    pub alpha: f64,
}

impl Covariance for RationalQuadratic {
    fn at_sq_dist(&self, d2: f64) -> f64 {
        let base = d2 / (2.0 * self.alpha * self.lengthscale * self.lengthscale);
        // ln_1p keeps the large-alpha limit accurate.
        self.variance * (-self.alpha * base.ln_1p()).exp()
    }
}

/// Half-integer Matern smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaternNu {
    Half,
    #[default]
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn value(&self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }

    pub fn from_value(nu: f64) -> Result<Self, KernelError> {
        if nu == 0.5 {
            Ok(MaternNu::Half)
        } else if nu == 1.5 {
            Ok(MaternNu::ThreeHalves)
        } else if nu == 2.5 {
            Ok(MaternNu::FiveHalves)
        } else {
            Err(KernelError::UnsupportedNu(nu))
        }
    }
}

impl FromStr for MaternNu {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: f64 = s.trim().parse().map_err(|_| KernelError::UnsupportedNu(f64::NAN))?;
        Self::from_value(v)
    }
}

impl fmt::Display for MaternNu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matern {
    pub variance: f64,
    pub lengthscale: f64,
    pub nu: MaternNu,
}

impl Covariance for Matern {
    fn at_sq_dist(&self, d2: f64) -> f64 {
        let r = d2.sqrt() / self.lengthscale;
        let shape = match self.nu {
            MaternNu::Half => (-r).exp(),
            MaternNu::ThreeHalves => {
                let s = 3f64.sqrt() * r;
                (1.0 + s) * (-s).exp()
            }
            MaternNu::FiveHalves => {
                let s = 5f64.sqrt() * r;
                (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
            }
        };
        self.variance * shape
    }
}

/// Convex weights over the RBF, rational-quadratic and Matern members.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleWeights {
    rbf: f64,
    rq: f64,
    matern: f64,
}

impl EnsembleWeights {
    pub fn new(rbf: f64, rq: f64, matern: f64) -> Result<Self, KernelError> {
        let ok = [rbf, rq, matern].iter().all(|w| w.is_finite() && *w >= 0.0)
            && (rbf + rq + matern - 1.0).abs() <= WEIGHT_SUM_TOL;
        if ok {
            Ok(Self { rbf, rq, matern })
        } else {
            Err(KernelError::InvalidWeights(rbf, rq, matern))
        }
    }

    /// Scales non-negative weights onto the simplex.
    pub fn normalized(rbf: f64, rq: f64, matern: f64) -> Result<Self, KernelError> {
        let sum = rbf + rq + matern;
        let valid = [rbf, rq, matern].iter().all(|w| w.is_finite() && *w >= 0.0);
        if !valid || !(sum > 0.0 && sum.is_finite()) {
            return Err(KernelError::InvalidWeights(rbf, rq, matern));
        }
        let (a, b) = (rbf / sum, rq / sum);
        Ok(Self::from_leading(a, b))
    }

    /// Builds weights from the first two coordinates; the third takes up the
    /// remainder so the sum is one by construction.
    pub fn from_leading(rbf: f64, rq: f64) -> Self {
        let rbf = rbf.clamp(0.0, 1.0);
        let rq = rq.clamp(0.0, 1.0 - rbf);
        let matern = (1.0 - rbf - rq).max(0.0);
        Self { rbf, rq, matern }
    }

    pub fn uniform() -> Self {
        Self::from_leading(1.0 / 3.0, 1.0 / 3.0)
    }

    pub fn rbf(&self) -> f64 {
        self.rbf
    }

    pub fn rq(&self) -> f64 {
        self.rq
    }

    pub fn matern(&self) -> f64 {
        self.matern
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.rbf, self.rq, self.matern]
    }

    /// Coordinates used by the weight-space surrogate.
    pub fn leading(&self) -> [f64; 2] {
        [self.rbf, self.rq]
    }
}

impl fmt::Display for EnsembleWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4})", self.rbf, self.rq, self.matern)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ensemble {
    pub weights: EnsembleWeights,
    pub rbf: Rbf,
    pub rq: RationalQuadratic,
    pub matern: Matern,
}

impl Covariance for Ensemble {
    fn at_sq_dist(&self, d2: f64) -> f64 {
        let w = &self.weights;
        w.rbf * self.rbf.at_sq_dist(d2) + w.rq * self.rq.at_sq_dist(d2) + w.matern * self.matern.at_sq_dist(d2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Rbf,
    RationalQuadratic,
    Matern,
    Ensemble,
}

impl KernelFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelFamily::Rbf => "rbf",
            KernelFamily::RationalQuadratic => "rq",
            KernelFamily::Matern => "matern",
            KernelFamily::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelFamily {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rbf" => Ok(KernelFamily::Rbf),
            "rq" => Ok(KernelFamily::RationalQuadratic),
            "matern" => Ok(KernelFamily::Matern),
            "ensemble" => Ok(KernelFamily::Ensemble),
            other => Err(KernelError::UnknownFamily(other.to_string())),
        }
    }
}

/// A kernel family together with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Rbf(Rbf),
    RationalQuadratic(RationalQuadratic),
    Matern(Matern),
    Ensemble(Ensemble),
}

pub const DEFAULT_LENGTHSCALE: f64 = 1.0;
pub const DEFAULT_VARIANCE: f64 = 1.0;
pub const DEFAULT_RQ_ALPHA: f64 = 1.0;

impl KernelSpec {
    /// Untuned defaults for standardized features.
    pub fn default_for(family: KernelFamily, nu: MaternNu) -> Self {
        let rbf = Rbf { lengthscale: DEFAULT_LENGTHSCALE };
        let rq =
            RationalQuadratic { variance: DEFAULT_VARIANCE, lengthscale: DEFAULT_LENGTHSCALE, alpha: DEFAULT_RQ_ALPHA };
        let matern = Matern { variance: DEFAULT_VARIANCE, lengthscale: DEFAULT_LENGTHSCALE, nu };
        match family {
            KernelFamily::Rbf => KernelSpec::Rbf(rbf),
            KernelFamily::RationalQuadratic => KernelSpec::RationalQuadratic(rq),
            KernelFamily::Matern => KernelSpec::Matern(matern),
            KernelFamily::Ensemble => {
                KernelSpec::Ensemble(Ensemble { weights: EnsembleWeights::uniform(), rbf, rq, matern })
            }
        }
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            KernelSpec::Rbf(_) => KernelFamily::Rbf,
            KernelSpec::RationalQuadratic(_) => KernelFamily::RationalQuadratic,
            KernelSpec::Matern(_) => KernelFamily::Matern,
            KernelSpec::Ensemble(_) => KernelFamily::Ensemble,
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        fn rbf(k: &Rbf) -> Result<(), KernelError> {
            positive("lengthscale", k.lengthscale)
        }
        fn rq(k: &RationalQuadratic) -> Result<(), KernelError> {
            positive("variance", k.variance)?;
            positive("lengthscale", k.lengthscale)?;
            positive("rq_alpha", k.alpha)
        }
        fn matern(k: &Matern) -> Result<(), KernelError> {
            positive("variance", k.variance)?;
            positive("lengthscale", k.lengthscale)
        }
        match self {
            KernelSpec::Rbf(k) => rbf(k),
            KernelSpec::RationalQuadratic(k) => rq(k),
            KernelSpec::Matern(k) => matern(k),
            KernelSpec::Ensemble(e) => {
                let [a, b, c] = e.weights.as_array();
                EnsembleWeights::new(a, b, c)?;
                rbf(&e.rbf)?;
                rq(&e.rq)?;
                matern(&e.matern)
            }
        }
    }

    /// Hyperparameters searched by the marginal-likelihood tuner, in a fixed
    /// order per family. Ensembles expose none; their members are tuned
    /// individually.
    pub fn tunable(&self) -> Vec<(&'static str, f64)> {
        match self {
            KernelSpec::Rbf(k) => vec![("lengthscale", k.lengthscale)],
            KernelSpec::RationalQuadratic(k) => {
                vec![("variance", k.variance), ("lengthscale", k.lengthscale), ("rq_alpha", k.alpha)]
            }
            KernelSpec::Matern(k) => vec![("variance", k.variance), ("lengthscale", k.lengthscale)],
            KernelSpec::Ensemble(_) => Vec::new(),
        }
    }

    /// Returns a copy with the tunable hyperparameters replaced, in the order
    /// given by [`KernelSpec::tunable`].
    pub fn with_tunable(&self, values: &[f64]) -> KernelSpec {
        let mut out = *self;
        match &mut out {
            KernelSpec::Rbf(k) => k.lengthscale = values[0],
            KernelSpec::RationalQuadratic(k) => {
                k.variance = values[0];
                k.lengthscale = values[1];
                k.alpha = values[2];
            }
            KernelSpec::Matern(k) => {
                k.variance = values[0];
                k.lengthscale = values[1];
            }
            KernelSpec::Ensemble(_) => {}
        }
        out
    }
}

impl Covariance for KernelSpec {
    fn at_sq_dist(&self, d2: f64) -> f64 {
        match self {
            KernelSpec::Rbf(k) => k.at_sq_dist(d2),
            KernelSpec::RationalQuadratic(k) => k.at_sq_dist(d2),
            KernelSpec::Matern(k) => k.at_sq_dist(d2),
            KernelSpec::Ensemble(k) => k.at_sq_dist(d2),
        }
    }
}

/// Cross-covariance matrix between the rows of `x` and the rows of `x2`.
pub fn gram_matrix<K: Covariance + ?Sized>(
    x: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    kernel: &K,
) -> Result<DMatrix<f64>, KernelError> {
    if x.ncols() != x2.ncols() {
        return Err(KernelError::DimensionMismatch { left: x.ncols(), right: x2.ncols() });
    }
    // Transposing makes every point a contiguous column slice.
    let a = x.transpose();
    let b = x2.transpose();
    Ok(DMatrix::from_fn(x.nrows(), x2.nrows(), |i, j| {
        let d2: f64 = a.column(i).iter().zip(b.column(j).iter()).map(|(p, q)| (p - q) * (p - q)).sum();
        kernel.at_sq_dist(d2)
    }))
}

/// Symmetric Gram matrix of the rows of `x` with themselves.
pub fn gram_symmetric<K: Covariance + ?Sized>(x: &DMatrix<f64>, kernel: &K) -> DMatrix<f64> {
    let n = x.nrows();
    let a = x.transpose();
    let mut k = DMatrix::zeros(n, n);
    let diag = kernel.diag();
    for i in 0..n {
        k[(i, i)] = diag;
        for j in 0..i {
            let d2: f64 = a.column(i).iter().zip(a.column(j).iter()).map(|(p, q)| (p - q) * (p - q)).sum();
            let v = kernel.at_sq_dist(d2);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}
