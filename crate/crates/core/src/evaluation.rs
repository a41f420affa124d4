//! Regression metrics and k-fold cross-validation.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data_io::Dataset;
use crate::gp::{GpError, GpModel};
use crate::kernels::KernelSpec;

/// How `accuracy_pct` is derived; printed next to every reported value.
pub const ACCURACY_DEFINITION: &str = "accuracy_pct = 100 * (1 - MAE / mean(|y_true|))";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} true values vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("true values have zero variance; R^2 is undefined")]
    ZeroVariance,
    #[error("need 2 <= k <= n for k-fold splitting, got n={n}, k={k}")]
    InvalidFolds { n: usize, k: usize },
    #[error("fold plan covers {plan} rows but dataset has {data}")]
    PlanMismatch { plan: usize, data: usize },
    #[error("non-finite value in metric input")]
    NonFinite,
    #[error(transparent)]
    Gp(#[from] GpError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    pub accuracy_pct: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "mse,mae,rmse,r2,accuracy_pct";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.mse, self.mae, self.rmse, self.r2, self.accuracy_pct)
    }
}

pub fn compute_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<MetricReport, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    if y_true.iter().chain(y_pred).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    if y_true.iter().all(|&y| y == y_true[0]) {
        return Err(EvalError::ZeroVariance);
    }
    let sst: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    let sse: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    let abs_err: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs()).sum();
    let mean_abs_true = y_true.iter().map(|y| y.abs()).sum::<f64>() / n;

    let mse = sse / n;
    let mae = abs_err / n;
    Ok(MetricReport {
        mse,
        mae,
        rmse: mse.sqrt(),
        r2: 1.0 - sse / sst,
        accuracy_pct: 100.0 * (1.0 - mae / mean_abs_true),
    })
}

/// Assignment of rows to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Builds a plan from an explicit assignment.
    pub fn from_assignment(k: usize, assignment: Vec<usize>) -> Result<Self, EvalError> {
        let n = assignment.len();
        if k < 2 || n < k || assignment.iter().any(|&f| f >= k) {
            return Err(EvalError::InvalidFolds { n, k });
        }
        if (0..k).any(|f| !assignment.contains(&f)) {
            return Err(EvalError::InvalidFolds { n, k });
        }
        Ok(Self { k, assignment })
    }

    /// Row indices in fold `f`, ascending.
    pub fn test_rows(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == f).collect()
    }

    /// Row indices outside fold `f`, ascending.
    pub fn train_rows(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != f).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle followed by round-robin fold assignment.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    if k < 2 || n < k {
        return Err(EvalError::InvalidFolds { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(FoldPlan { k, assignment })
}

/// Out-of-fold predictive means, in original row order.
pub fn cross_validate_predictions(
    data: &Dataset,
    spec: &KernelSpec,
    noise_variance: f64,
    plan: &FoldPlan,
) -> Result<DVector<f64>, EvalError> {
    if plan.n() != data.n_rows() {
        return Err(EvalError::PlanMismatch { plan: plan.n(), data: data.n_rows() });
    }
    let mut out = DVector::zeros(data.n_rows());
    for f in 0..plan.k() {
        let train = plan.train_rows(f);
        let test = plan.test_rows(f);
        let model = GpModel::fit(
            &data.features().select_rows(&train),
            &data.target().select_rows(&train),
            *spec,
            noise_variance,
        )?;
        let pred = model.predict(&data.features().select_rows(&test))?;
        for (slot, &row) in test.iter().enumerate() {
            out[row] = pred.mean[slot];
        }
    }
    Ok(out)
}

/// Metrics over the concatenated out-of-fold predictions.
pub fn cross_validate(
    data: &Dataset,
    spec: &KernelSpec,
    noise_variance: f64,
    plan: &FoldPlan,
) -> Result<MetricReport, EvalError> {
    let pred = cross_validate_predictions(data, spec, noise_variance, plan)?;
    compute_metrics(data.target().as_slice(), pred.as_slice())
}

/// Root mean squared error of each fold's held-out predictions.
pub fn per_fold_rmse(y_true: &[f64], y_pred: &[f64], plan: &FoldPlan) -> Vec<f64> {
    (0..plan.k())
        .map(|f| {
            let rows = plan.test_rows(f);
            let sse: f64 = rows.iter().map(|&i| (y_true[i] - y_pred[i]).powi(2)).sum();
            (sse / rows.len() as f64).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelFamily, MaternNu, Rbf};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn dataset(x: &[f64], y: &[f64]) -> Dataset {
        Dataset::new(
            vec!["x".into()],
            DMatrix::from_column_slice(x.len(), 1, x),
            "y".into(),
            DVector::from_column_slice(y),
        )
        .unwrap()
    }

    #[test]
    fn perfect_fit() {
        let y = [1.0, 2.0, 4.0];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.mse, m.mae, m.rmse, m.r2), (0.0, 0.0, 0.0, 1.0));
        assert_eq!(m.accuracy_pct, 100.0);
    }

    #[test]
    fn mean_predictor_has_zero_r2() {
        let y = [1.0, 2.0, 6.0];
        let m = compute_metrics(&y, &[3.0; 3]).unwrap();
        assert_eq!(m.r2, 0.0);
    }

    #[test]
    fn hand_worked_example() {
        let m = compute_metrics(&[0.0, 1.0, 2.0], &[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(m.mse, 1.0 / 3.0);
        assert_eq!(m.mae, 1.0 / 3.0);
        assert!((m.rmse - 0.577_35).abs() < 1e-5);
        assert_eq!(m.r2, 0.5);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(compute_metrics(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch(1, 2))));
        assert!(matches!(compute_metrics(&[2.0, 2.0], &[1.0, 2.0]), Err(EvalError::ZeroVariance)));
        assert!(matches!(compute_metrics(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn fold_sizes() {
        assert_eq!(make_folds(10, 5, 1).unwrap().fold_sizes(), vec![2; 5]);
        let mut s = make_folds(7, 3, 1).unwrap().fold_sizes();
        s.sort_unstable();
        assert_eq!(s, vec![2, 2, 3]);
        assert_eq!(make_folds(50, 4, 9).unwrap(), make_folds(50, 4, 9).unwrap());
        assert!(make_folds(2, 3, 0).is_err());
        assert!(make_folds(5, 1, 0).is_err());
    }

    #[test]
    fn constant_target_predicts_constant() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let d = dataset(&x, &[4.2; 10]);
        let plan = make_folds(10, 5, 0).unwrap();
        let spec = KernelSpec::Rbf(Rbf { lengthscale: 1.0 });
        let pred = cross_validate_predictions(&d, &spec, 1e-4, &plan).unwrap();
        let mse = pred.iter().map(|p| (p - 4.2).powi(2)).sum::<f64>() / 10.0;
        assert!(mse <= 1e-8);
        assert!(matches!(cross_validate(&d, &spec, 1e-4, &plan), Err(EvalError::ZeroVariance)));
    }

    #[test]
    fn leave_one_out_matches_manual_loop() {
        let x = [0.0, 0.4, 1.1, 1.9, 3.0];
        let y = [0.2, 0.9, 0.4, -0.3, 1.5];
        let d = dataset(&x, &y);
        let plan = FoldPlan::from_assignment(5, vec![0, 1, 2, 3, 4]).unwrap();
        let spec = KernelSpec::default_for(KernelFamily::Matern, MaternNu::FiveHalves);
        let pred = cross_validate_predictions(&d, &spec, 1e-3, &plan).unwrap();
        for i in 0..5 {
            let keep: Vec<usize> = (0..5).filter(|&j| j != i).collect();
            let m = GpModel::fit(
                &DMatrix::from_fn(4, 1, |r, _| x[keep[r]]),
                &DVector::from_fn(4, |r, _| y[keep[r]]),
                spec,
                1e-3,
            )
            .unwrap();
            let p = m.predict(&DMatrix::from_element(1, 1, x[i])).unwrap();
            assert!((p.mean[0] - pred[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn held_out_target_cannot_leak() {
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.77).sin() * 2.0).collect();
        let mut y: Vec<f64> = x.iter().map(|v| v.cos()).collect();
        let plan = make_folds(12, 4, 3).unwrap();
        let spec = KernelSpec::Rbf(Rbf { lengthscale: 0.8 });
        let before = cross_validate_predictions(&dataset(&x, &y), &spec, 1e-4, &plan).unwrap();
        y[5] += 100.0;
        let after = cross_validate_predictions(&dataset(&x, &y), &spec, 1e-4, &plan).unwrap();
        assert_eq!(before[5], after[5]);
    }

    #[test]
    fn plan_must_match_rows() {
        let d = dataset(&[0.0, 1.0, 2.0], &[1.0, 2.0, 0.0]);
        let plan = make_folds(4, 2, 0).unwrap();
        let spec = KernelSpec::Rbf(Rbf { lengthscale: 1.0 });
        assert!(matches!(cross_validate(&d, &spec, 1e-4, &plan), Err(EvalError::PlanMismatch { .. })));
    }

    proptest! {
        #[test]
        fn rmse_squared_is_mse(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..60)) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(t.iter().any(|&v| v != t[0]));
            let m = compute_metrics(&t, &p).unwrap();
            prop_assert!((m.rmse * m.rmse - m.mse).abs() <= 1e-12 * m.mse.max(1.0));
            prop_assert!(m.mae <= m.rmse + 1e-12);
            prop_assert!(m.r2 <= 1.0);
        }

        #[test]
        fn r2_affine_invariant(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
            scale in prop_oneof![-5.0f64..-0.2, 0.2f64..5.0],
            shift in -50.0f64..50.0,
        ) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let mean = t.iter().sum::<f64>() / t.len() as f64;
            prop_assume!(t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() > 1e-3);
            let a = compute_metrics(&t, &p).unwrap();
            let tt: Vec<f64> = t.iter().map(|v| scale * v + shift).collect();
            let pp: Vec<f64> = p.iter().map(|v| scale * v + shift).collect();
            let b = compute_metrics(&tt, &pp).unwrap();
            prop_assert!((a.r2 - b.r2).abs() <= 1e-9 * a.r2.abs().max(1.0));
        }
    }
}
