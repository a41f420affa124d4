//! End-to-end workflow: Gaussianize columns, tune member kernels, search
//! ensemble weights, cross-validate, fit and predict.
//!
//! Features and target are each mapped by their own fitted column transform;
//! every model is trained and scored in transformed space, and predictions
//! are mapped back through the target transform for original-unit reports.

use nalgebra::{DMatrix, DVector};

use crate::bayes_opt::{optimize_kernel_weight, BoConfig, BoOutcome, CvObjective};
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, cross_validate_predictions, per_fold_rmse, FoldPlan, MetricReport};
use crate::gp::{tune_hyperparameters, GpModel, DEFAULT_NOISE_VARIANCE};
use crate::kernels::{Ensemble, EnsembleWeights, KernelFamily, KernelSpec, MaternNu};
use crate::transforms::{ColumnTransform, TransformKind};

pub const DEFAULT_TUNE_BUDGET: usize = 60;

/// Every setting of a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub transform: TransformKind,
    pub kernel: KernelFamily,
    pub nu: MaternNu,
    pub noise_variance: f64,
    pub tune_budget: usize,
    pub bo: BoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            transform: TransformKind::default(),
            kernel: KernelFamily::Ensemble,
            nu: MaternNu::default(),
            noise_variance: DEFAULT_NOISE_VARIANCE,
            tune_budget: DEFAULT_TUNE_BUDGET,
            bo: BoConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::Usage(format!("noise variance must be non-negative, got {}", self.noise_variance)));
        }
        if self.tune_budget == 0 {
            return Err(Error::Usage("tuning budget must be at least 1".into()));
        }
        self.bo.validate()?;
        Ok(())
    }
}

/// Fitted per-column transforms for the features and the target.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTransform {
    pub kind: TransformKind,
    pub feature_names: Vec<String>,
    pub features: Vec<ColumnTransform>,
    pub target_name: String,
    pub target: ColumnTransform,
}

impl DataTransform {
    pub fn fit(data: &Dataset, kind: TransformKind) -> Result<Self> {
        let features = (0..data.n_features())
            .map(|j| {
                kind.fit(&data.feature_column(j))
                    .map_err(|source| Error::Transform { column: data.feature_names()[j].clone(), source })
            })
            .collect::<Result<Vec<_>>>()?;
        let target = kind
            .fit(data.target().as_slice())
            .map_err(|source| Error::Transform { column: data.target_name().to_string(), source })?;
        Ok(Self {
            kind,
            feature_names: data.feature_names().to_vec(),
            features,
            target_name: data.target_name().to_string(),
            target,
        })
    }

    /// Maps a raw feature matrix whose columns follow `feature_names`.
    pub fn forward_features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.features.len() {
            return Err(Error::Schema(format!("expected {} feature columns, got {}", self.features.len(), x.ncols())));
        }
        let mut out = x.clone();
        for (j, t) in self.features.iter().enumerate() {
            for i in 0..x.nrows() {
                out[(i, j)] = t
                    .forward(x[(i, j)])
                    .map_err(|source| Error::Transform { column: self.feature_names[j].clone(), source })?;
            }
        }
        Ok(out)
    }

    pub fn forward_target(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let v = self
            .target
            .forward_all(y.as_slice())
            .map_err(|source| Error::Transform { column: self.target_name.clone(), source })?;
        Ok(DVector::from_vec(v))
    }

    pub fn inverse_target(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        y.iter()
            .map(|&v| {
                self.target.inverse(v).map_err(|source| Error::Transform { column: self.target_name.clone(), source })
            })
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    }

    /// Transforms a dataset with the same schema as the fitting data.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        self.check_schema(data.feature_names())?;
        Ok(Dataset::new(
            self.feature_names.clone(),
            self.forward_features(data.features())?,
            self.target_name.clone(),
            self.forward_target(data.target())?,
        )?)
    }

    pub fn check_schema(&self, names: &[String]) -> Result<()> {
        for (i, expected) in self.feature_names.iter().enumerate() {
            match names.get(i) {
                Some(n) if n == expected => {}
                Some(n) => {
                    return Err(Error::Schema(format!("feature column {} is '{n}', expected '{expected}'", i + 1)))
                }
                None => return Err(Error::Schema(format!("missing feature column '{expected}'"))),
            }
        }
        if let Some(extra) = names.get(self.feature_names.len()) {
            return Err(Error::Schema(format!("unexpected feature column '{extra}'")));
        }
        Ok(())
    }
}

/// Seed offset per family so standalone tuning of a member reproduces the
/// member tuned inside an ensemble.
fn family_seed(family: KernelFamily, seed: u64) -> u64 {
    match family {
        KernelFamily::Rbf | KernelFamily::Ensemble => seed,
        KernelFamily::RationalQuadratic => seed ^ 1,
        KernelFamily::Matern => seed ^ 2,
    }
}

/// Tunes the hyperparameters of one kernel family on transformed data. For
/// the ensemble, members are tuned and weights stay uniform.
pub fn tune_family(data: &Dataset, family: KernelFamily, config: &PipelineConfig) -> Result<KernelSpec> {
    let template = KernelSpec::default_for(family, config.nu);
    let tuned = tune_hyperparameters(
        data.features(),
        data.target(),
        &template,
        config.noise_variance,
        config.tune_budget,
        family_seed(family, config.bo.seed),
    )?;
    Ok(tuned.spec)
}

pub fn tune_members(data: &Dataset, config: &PipelineConfig) -> Result<Ensemble> {
    match tune_family(data, KernelFamily::Ensemble, config)? {
        KernelSpec::Ensemble(e) => Ok(e),
        _ => unreachable!("ensemble template tunes to an ensemble"),
    }
}

pub fn member_spec(members: &Ensemble, family: KernelFamily) -> KernelSpec {
    match family {
        KernelFamily::Rbf => KernelSpec::Rbf(members.rbf),
        KernelFamily::RationalQuadratic => KernelSpec::RationalQuadratic(members.rq),
        KernelFamily::Matern => KernelSpec::Matern(members.matern),
        KernelFamily::Ensemble => KernelSpec::Ensemble(*members),
    }
}

/// Cross-validated metrics for one kernel, on both scales.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSummary {
    pub spec: KernelSpec,
    pub transformed: MetricReport,
    pub original: MetricReport,
    pub mean_fold_rmse: f64,
}

pub fn cv_summary(
    raw: &Dataset,
    transformed: &Dataset,
    transform: &DataTransform,
    spec: &KernelSpec,
    noise_variance: f64,
    plan: &FoldPlan,
) -> Result<CvSummary> {
    let pred = cross_validate_predictions(transformed, spec, noise_variance, plan)?;
    let folds = per_fold_rmse(transformed.target().as_slice(), pred.as_slice(), plan);
    let pred_original = transform.inverse_target(&pred)?;
    Ok(CvSummary {
        spec: *spec,
        transformed: compute_metrics(transformed.target().as_slice(), pred.as_slice())?,
        original: compute_metrics(raw.target().as_slice(), pred_original.as_slice())?,
        mean_fold_rmse: folds.iter().sum::<f64>() / folds.len() as f64,
    })
}

/// Transforms plus a GP fitted in transformed space.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub transform: DataTransform,
    pub gp: GpModel,
}

/// Predictions at new rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub mean_original: DVector<f64>,
}

impl TrainedModel {
    pub fn fit(transformed: &Dataset, transform: DataTransform, spec: KernelSpec, noise_variance: f64) -> Result<Self> {
        let gp = GpModel::fit(transformed.features(), transformed.target(), spec, noise_variance)?;
        Ok(Self { transform, gp })
    }

    /// Predicts from raw feature values ordered like `transform.feature_names`.
    pub fn predict(&self, x_raw: &DMatrix<f64>) -> Result<ModelPrediction> {
        let x = self.transform.forward_features(x_raw)?;
        let p = self.gp.predict(&x)?;
        let mean_original = self.transform.inverse_target(&p.mean)?;
        Ok(ModelPrediction { mean: p.mean, variance: p.variance, mean_original })
    }
}

/// Everything produced by the weight search.
#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub members: Ensemble,
    pub outcome: BoOutcome,
    pub ensemble: CvSummary,
    pub baselines: Vec<(KernelFamily, CvSummary)>,
    pub model: TrainedModel,
}

impl OptimizeReport {
    pub fn weights(&self) -> EnsembleWeights {
        self.outcome.weights
    }

    /// Metric table rows: the three single kernels then the ensemble.
    pub fn table(&self) -> Vec<(KernelFamily, &CvSummary)> {
        let mut rows: Vec<(KernelFamily, &CvSummary)> = self.baselines.iter().map(|(f, s)| (*f, s)).collect();
        rows.push((KernelFamily::Ensemble, &self.ensemble));
        rows
    }
}

/// Transform, tune members, search ensemble weights, score the ensemble and
/// each single member under the same folds, and fit the final model.
pub fn run_optimize(data: &Dataset, config: &PipelineConfig) -> Result<OptimizeReport> {
    config.validate()?;
    let transform = DataTransform::fit(data, config.transform)?;
    let tdata = transform.apply(data)?;
    let members = tune_members(&tdata, config)?;
    let outcome = optimize_kernel_weight(&tdata, &members, config.noise_variance, &config.bo)?;

    let objective = CvObjective::new(&tdata, members, config.noise_variance, config.bo.cv_folds, config.bo.seed)?;
    let plan = objective.plan().clone();
    let spec = objective.spec_for(&outcome.weights);
    let ensemble = cv_summary(data, &tdata, &transform, &spec, config.noise_variance, &plan)?;
    let baselines = [KernelFamily::Rbf, KernelFamily::RationalQuadratic, KernelFamily::Matern]
        .into_iter()
        .map(|f| {
            cv_summary(data, &tdata, &transform, &member_spec(&members, f), config.noise_variance, &plan)
                .map(|s| (f, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let model = TrainedModel::fit(&tdata, transform, spec, config.noise_variance)?;
    Ok(OptimizeReport { members, outcome, ensemble, baselines, model })
}

/// Fits a final model. An ensemble without explicit weights runs the weight
/// search first.
pub fn run_fit(data: &Dataset, config: &PipelineConfig, weights: Option<EnsembleWeights>) -> Result<TrainedModel> {
    config.validate()?;
    if config.kernel == KernelFamily::Ensemble && weights.is_none() {
        return Ok(run_optimize(data, config)?.model);
    }
    let transform = DataTransform::fit(data, config.transform)?;
    let tdata = transform.apply(data)?;
    let mut spec = tune_family(&tdata, config.kernel, config)?;
    if let (KernelSpec::Ensemble(e), Some(w)) = (&mut spec, weights) {
        e.weights = w;
    }
    TrainedModel::fit(&tdata, transform, spec, config.noise_variance)
}

/// Metrics of a model on labelled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub transformed: MetricReport,
    pub original: MetricReport,
    pub actual: DVector<f64>,
    pub prediction: ModelPrediction,
}

pub fn evaluate_model_on(model: &TrainedModel, x_raw: &DMatrix<f64>, y_raw: &DVector<f64>) -> Result<Evaluation> {
    let prediction = model.predict(x_raw)?;
    let y_t = model.transform.forward_target(y_raw)?;
    Ok(Evaluation {
        transformed: compute_metrics(y_t.as_slice(), prediction.mean.as_slice())?,
        original: compute_metrics(y_raw.as_slice(), prediction.mean_original.as_slice())?,
        actual: y_raw.clone(),
        prediction,
    })
}
