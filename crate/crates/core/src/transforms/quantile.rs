//! Rank-based quantile transform onto the standard normal.

use super::normal::{inverse_normal_cdf, normal_cdf};
use super::{check_finite, TransformError};

/// Empirical CDF of a reference sample, mapped through the normal quantile
/// function.
///
/// The i-th smallest reference value (1-based) sits at plotting position
/// `(i - 0.5) / n`; tied values share the mean of their positions. Between
/// distinct reference values the CDF is interpolated linearly, and outside
/// the reference range it is clamped to `[1/(2n), 1 - 1/(2n)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileMap {
    sorted_reference: Vec<f64>,
    knots: Vec<f64>,
    positions: Vec<f64>,
}

impl QuantileMap {
    pub fn fit(data: &[f64]) -> Result<Self, TransformError> {
        check_finite(data)?;
        if data.len() < 2 {
            return Err(TransformError::TooFewValues { needed: 2, got: data.len() });
        }
        let mut sorted = data.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self::from_sorted(sorted)
    }

    /// Rebuilds a map from a stored ascending reference sample.
    pub fn from_sorted(sorted_reference: Vec<f64>) -> Result<Self, TransformError> {
        check_finite(&sorted_reference)?;
        if sorted_reference.len() < 2 {
            return Err(TransformError::TooFewValues { needed: 2, got: sorted_reference.len() });
        }
        if sorted_reference.windows(2).any(|w| w[1] < w[0]) {
            return Err(TransformError::InvalidParameter("reference values are not sorted".into()));
        }

        let n = sorted_reference.len() as f64;
        let mut knots = Vec::new();
        let mut positions = Vec::new();
        let mut start = 0;
        while start < sorted_reference.len() {
            let value = sorted_reference[start];
            let end = start + sorted_reference[start..].iter().take_while(|&&v| v == value).count();
            // Mean 1-based rank of the tie block, minus one half.
            let mid_rank = (start + end + 1) as f64 / 2.0;
            knots.push(value);
            positions.push((mid_rank - 0.5) / n);
            start = end;
        }
        Ok(Self { sorted_reference, knots, positions })
    }

    pub fn sorted_reference(&self) -> &[f64] {
        &self.sorted_reference
    }

    pub fn n(&self) -> usize {
        self.sorted_reference.len()
    }

    fn p_min(&self) -> f64 {
        0.5 / self.n() as f64
    }

    fn p_max(&self) -> f64 {
        1.0 - 0.5 / self.n() as f64
    }

    /// Interpolated empirical CDF, clamped to the plotting-position range.
    pub fn cdf(&self, x: f64) -> f64 {
        let first = self.knots[0];
        let last = *self.knots.last().expect("at least two reference values");
        if x < first {
            return self.p_min();
        }
        if x > last {
            return self.p_max();
        }
        let idx = self.knots.partition_point(|&k| k < x);
        let p = if self.knots[idx] == x {
            self.positions[idx]
        } else {
            let (x0, x1) = (self.knots[idx - 1], self.knots[idx]);
            let (p0, p1) = (self.positions[idx - 1], self.positions[idx]);
            p0 + (p1 - p0) * (x - x0) / (x1 - x0)
        };
        p.clamp(self.p_min(), self.p_max())
    }

    /// Inverse of [`QuantileMap::cdf`] on the knot range; probabilities
    /// beyond the outermost knots map to the reference minimum or maximum.
    pub fn inverse_cdf(&self, p: f64) -> f64 {
        let last_i = self.knots.len() - 1;
        if p <= self.positions[0] {
            return self.knots[0];
        }
        if p >= self.positions[last_i] {
            return self.knots[last_i];
        }
        let idx = self.positions.partition_point(|&q| q < p);
        if self.positions[idx] == p {
            return self.knots[idx];
        }
        let (x0, x1) = (self.knots[idx - 1], self.knots[idx]);
        let (p0, p1) = (self.positions[idx - 1], self.positions[idx]);
        x0 + (x1 - x0) * (p - p0) / (p1 - p0)
    }

    pub fn forward(&self, x: f64) -> f64 {
        // cdf() is clamped strictly inside (0, 1).
        inverse_normal_cdf(self.cdf(x)).expect("clamped probability")
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.inverse_cdf(normal_cdf(y))
    }
}
