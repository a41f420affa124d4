//! Per-column Gaussianizing transforms.
//!
//! Two fitted, invertible maps are provided: the Yeo-Johnson power transform
//! (exponent chosen by maximum likelihood, output standardized) and the
//! quantile transform onto the standard normal. [`ColumnTransform`] puts both
//! behind one interface together with the identity.

mod normal;
mod quantile;
mod yeo_johnson;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use normal::{inverse_normal_cdf, normal_cdf, normal_pdf};
pub use quantile::QuantileMap;
pub use yeo_johnson::{
    yeo_johnson_forward, yeo_johnson_inverse, yeo_johnson_log_likelihood, YeoJohnsonTransform, LAMBDA_GRID_POINTS,
    LAMBDA_MAX, LAMBDA_MIN, LAMBDA_TOL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("non-finite value in input")]
    NonFinite,
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("data has zero variance")]
    Degenerate,
    #[error("probability {0} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("invalid transform parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown transform kind '{0}' (expected quantile, yeo-johnson or none)")]
    UnknownKind(String),
}

pub(crate) fn check_finite(data: &[f64]) -> Result<(), TransformError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TransformError::NonFinite)
    }
}

/// Sample skewness `m3 / m2^{3/2}` from biased central moments.
pub fn skewness(data: &[f64]) -> Result<f64, TransformError> {
    check_finite(data)?;
    if data.len() < 3 {
        return Err(TransformError::TooFewValues { needed: 3, got: data.len() });
    }
    if data.iter().all(|&v| v == data[0]) {
        return Err(TransformError::Degenerate);
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let (m2, m3) = data.iter().fold((0.0, 0.0), |(m2, m3), &v| {
        let d = v - mean;
        (m2 + d * d, m3 + d * d * d)
    });
    let (m2, m3) = (m2 / n, m3 / n);
    if m2 <= 0.0 {
        return Err(TransformError::Degenerate);
    }
    Ok(m3 / m2.powf(1.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformKind {
    #[default]
    Quantile,
    YeoJohnson,
    None,
}

impl TransformKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransformKind::Quantile => "quantile",
            TransformKind::YeoJohnson => "yeo-johnson",
            TransformKind::None => "none",
        }
    }

    pub fn fit(&self, data: &[f64]) -> Result<ColumnTransform, TransformError> {
        match self {
            TransformKind::Quantile => QuantileMap::fit(data).map(ColumnTransform::Quantile),
            TransformKind::YeoJohnson => YeoJohnsonTransform::fit(data).map(ColumnTransform::YeoJohnson),
            TransformKind::None => {
                check_finite(data)?;
                Ok(ColumnTransform::Identity)
            }
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransformKind {
    type Err = TransformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quantile" => Ok(TransformKind::Quantile),
            "yeo-johnson" => Ok(TransformKind::YeoJohnson),
            "none" => Ok(TransformKind::None),
            other => Err(TransformError::UnknownKind(other.to_string())),
        }
    }
}

/// A fitted transform for one data column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnTransform {
    YeoJohnson(YeoJohnsonTransform),
    Quantile(QuantileMap),
    Identity,
}

impl ColumnTransform {
    pub fn kind(&self) -> TransformKind {
        match self {
            ColumnTransform::YeoJohnson(_) => TransformKind::YeoJohnson,
            ColumnTransform::Quantile(_) => TransformKind::Quantile,
            ColumnTransform::Identity => TransformKind::None,
        }
    }

    pub fn forward(&self, x: f64) -> Result<f64, TransformError> {
        if !x.is_finite() {
            return Err(TransformError::NonFinite);
        }
        Ok(match self {
            ColumnTransform::YeoJohnson(t) => t.forward(x),
            ColumnTransform::Quantile(m) => m.forward(x),
            ColumnTransform::Identity => x,
        })
    }

    /// Maps a value in transformed space back to original units.
    pub fn inverse(&self, y: f64) -> Result<f64, TransformError> {
        if !y.is_finite() {
            return Err(TransformError::NonFinite);
        }
        Ok(match self {
            ColumnTransform::YeoJohnson(t) => t.inverse(y),
            ColumnTransform::Quantile(m) => m.inverse(y),
            ColumnTransform::Identity => y,
        })
    }

    pub fn forward_all(&self, data: &[f64]) -> Result<Vec<f64>, TransformError> {
        data.iter().map(|&x| self.forward(x)).collect()
    }
}
