//! Command-line interface.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use crate::bayes_opt::BoConfig;
use crate::data_io::{
    correlation_matrix, load_csv, load_features_csv, synth_generate, train_test_split, write_matrix_csv, Dataset,
    SynthConfig, TARGET_NAME,
};
use crate::error::{Error, Result};
use crate::evaluation::{MetricReport, ACCURACY_DEFINITION};
use crate::gp::DEFAULT_NOISE_VARIANCE;
use crate::kernels::{EnsembleWeights, KernelFamily, MaternNu};
use crate::model_file;
use crate::pipeline::{
    evaluate_model_on, run_fit, run_optimize, DataTransform, Evaluation, OptimizeReport, PipelineConfig, TrainedModel,
    DEFAULT_TUNE_BUDGET,
};
use crate::transforms::{skewness, TransformKind};

#[derive(Debug, Parser)]
#[command(
    name = "ensemble-gp",
    version,
    about = "Gaussian process regression with a Bayesian-optimized ensemble kernel"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic marketing-channel dataset as CSV
    Synth(SynthArgs),
    /// Print per-column skewness and write the correlation matrix
    Inspect(InspectArgs),
    /// Write the Gaussianized dataset
    Transform(TransformArgs),
    /// Tune members, search ensemble weights and write trace, metrics and model
    Optimize(OptimizeArgs),
    /// Fit a model and save it
    Fit(FitArgs),
    /// Predict with a saved model
    Predict(PredictArgs),
    /// Score a saved model, or fit and score on a held-out split
    Evaluate(EvaluateArgs),
    /// Run the whole workflow and write every table into one directory
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long = "noise-sd", default_value_t = SynthConfig::default().noise_sd)]
    pub noise_sd: f64,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = TARGET_NAME)]
    pub target: String,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Correlation matrix CSV
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = "quantile")]
    pub transform: TransformKind,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "quantile")]
    pub transform: TransformKind,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "quantile")]
    pub transform: TransformKind,
    #[arg(long, default_value = "ensemble")]
    pub kernel: KernelFamily,
    /// Matern smoothness: 0.5, 1.5 or 2.5
    #[arg(long, default_value = "1.5")]
    pub nu: MaternNu,
    /// Observation noise variance on the transformed target
    #[arg(long, default_value_t = DEFAULT_NOISE_VARIANCE)]
    pub noise: f64,
    #[arg(long, default_value_t = BoConfig::default().iterations)]
    pub iterations: usize,
    #[arg(long = "initial-designs", default_value_t = BoConfig::default().initial_designs)]
    pub initial_designs: usize,
    #[arg(long, default_value_t = BoConfig::default().cv_folds)]
    pub folds: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Marginal-likelihood evaluations per tuned kernel
    #[arg(long = "tune-budget", default_value_t = DEFAULT_TUNE_BUDGET)]
    pub tune_budget: usize,
}

impl ModelArgs {
    pub fn config(&self) -> PipelineConfig {
        PipelineConfig {
            transform: self.transform,
            kernel: self.kernel,
            nu: self.nu,
            noise_variance: self.noise,
            tune_budget: self.tune_budget,
            bo: BoConfig {
                iterations: self.iterations,
                initial_designs: self.initial_designs,
                cv_folds: self.folds,
                seed: self.seed,
                ..BoConfig::default()
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model_args: ModelArgs,
    /// Directory for trace.csv, metrics.csv and weights.txt
    #[arg(long)]
    pub output: PathBuf,
    /// Model file path; defaults to model.txt in the output directory
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model_args: ModelArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Fixed ensemble weights "rbf,rq,matern"; skips the weight search
    #[arg(long)]
    pub weights: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Saved model to score; without it the input is split and a model fitted
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub model_args: ModelArgs,
    #[arg(long = "test-fraction", default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Directory for metrics.csv and predicted_vs_actual.csv
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model_args: ModelArgs,
    #[arg(long = "test-fraction", default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long)]
    pub output: PathBuf,
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Inspect(a) => cmd_inspect(&a, out),
        Command::Transform(a) => cmd_transform(&a, out),
        Command::Optimize(a) => cmd_optimize(&a, out),
        Command::Fit(a) => cmd_fit(&a, out),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Report(a) => cmd_report(&a, out),
    }
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", text.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load(data: &DataArgs) -> Result<Dataset> {
    Ok(load_csv(&data.input, &data.target)?)
}

fn parse_weights(s: &str) -> Result<EnsembleWeights> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad weight '{p}'"))))
        .collect::<Result<_>>()?;
    match v[..] {
        [a, b, c] => EnsembleWeights::new(a, b, c).map_err(|e| Error::Usage(e.to_string())),
        _ => Err(Error::Usage(format!("expected 3 comma-separated weights, got '{s}'"))),
    }
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let config = SynthConfig { n: a.n, seed: a.seed, noise_sd: a.noise_sd, ..SynthConfig::default() };
    let data = synth_generate(&config)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf, Some(&config.describe()))?;
    write_file(&a.output, &buf)?;
    say(out, format!("wrote {} rows x {} features to {}", data.n_rows(), data.n_features(), a.output.display()))
}

/// Skewness before and after the transform, one row per column.
pub fn skewness_table(data: &Dataset, kind: TransformKind) -> Result<Vec<(String, f64, f64)>> {
    let transform = DataTransform::fit(data, kind)?;
    let tdata = transform.apply(data)?;
    let column = |d: &Dataset, j: usize| -> Vec<f64> {
        if j < d.n_features() {
            d.feature_column(j)
        } else {
            d.target().iter().copied().collect()
        }
    };
    let names: Vec<String> =
        data.feature_names().iter().cloned().chain(std::iter::once(data.target_name().to_string())).collect();
    names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let skew = |d: &Dataset| {
                skewness(&column(d, j)).map_err(|source| Error::Transform { column: name.clone(), source })
            };
            Ok((name.clone(), skew(data)?, skew(&tdata)?))
        })
        .collect()
}

fn skewness_csv(rows: &[(String, f64, f64)], kind: TransformKind) -> String {
    let mut s = format!("column,skewness_raw,skewness_{}\n", kind.as_str().replace('-', "_"));
    for (name, raw, t) in rows {
        s.push_str(&format!("{name},{raw},{t}\n"));
    }
    s
}

fn correlation_csv(data: &Dataset) -> Result<Vec<u8>> {
    let (labels, m) = correlation_matrix(data)?;
    let mut buf = Vec::new();
    write_matrix_csv(&mut buf, &labels, &m)?;
    Ok(buf)
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let data = load(&a.data)?;
    let rows = skewness_table(&data, a.transform)?;
    say(out, format!("{:<24} {:>12} {:>12}", "column", "skew_raw", format!("skew_{}", a.transform)))?;
    for (name, raw, t) in &rows {
        say(out, format!("{name:<24} {raw:>12.4} {t:>12.4}"))?;
    }
    let corr = correlation_csv(&data)?;
    match &a.output {
        Some(p) => {
            write_file(p, &corr)?;
            say(out, format!("correlation matrix written to {}", p.display()))
        }
        None => say(out, String::from_utf8_lossy(&corr)),
    }
}

fn cmd_transform(a: &TransformArgs, out: &mut dyn Write) -> Result<()> {
    let data = load(&a.data)?;
    let transform = DataTransform::fit(&data, a.transform)?;
    let tdata = transform.apply(&data)?;
    let mut buf = Vec::new();
    tdata.write_csv(&mut buf, Some(&format!("{} transform of {}", a.transform, a.data.input.display())))?;
    write_file(&a.output, &buf)?;
    say(out, format!("wrote {} transformed rows to {}", tdata.n_rows(), a.output.display()))
}

fn metrics_csv(rows: &[(&str, &str, MetricReport)]) -> String {
    let mut s = format!("# {ACCURACY_DEFINITION}\nkernel,scale,{}\n", MetricReport::CSV_HEADER);
    for (kernel, scale, m) in rows {
        s.push_str(&format!("{kernel},{scale},{}\n", m.csv_row()));
    }
    s
}

fn weights_text(w: &EnsembleWeights) -> String {
    let [a, b, c] = w.as_array();
    format!("w_rbf = {a}\nw_rq = {b}\nw_matern = {c}\n")
}

fn optimize_tables(report: &OptimizeReport) -> Result<(Vec<u8>, String)> {
    let mut trace = Vec::new();
    report.outcome.state.write_trace_csv(&mut trace).map_err(|e| Error::io("<trace>", e))?;
    let rows: Vec<(&str, &str, MetricReport)> = report
        .table()
        .into_iter()
        .flat_map(|(f, s)| [(f.as_str(), "transformed", s.transformed), (f.as_str(), "original", s.original)])
        .collect();
    Ok((trace, metrics_csv(&rows)))
}

fn print_table(out: &mut dyn Write, report: &OptimizeReport) -> Result<()> {
    say(out, format!("{:<10} {:>10} {:>10} {:>10} {:>10}", "kernel", "cv_rmse", "cv_r2", "r2_orig", "acc_orig%"))?;
    for (f, s) in report.table() {
        say(
            out,
            format!(
                "{:<10} {:>10.5} {:>10.5} {:>10.5} {:>10.3}",
                f.as_str(),
                s.transformed.rmse,
                s.transformed.r2,
                s.original.r2,
                s.original.accuracy_pct
            ),
        )?;
    }
    say(out, format!("accuracy: {ACCURACY_DEFINITION}"))
}

fn cmd_optimize(a: &OptimizeArgs, out: &mut dyn Write) -> Result<()> {
    let data = load(&a.data)?;
    let config = a.model_args.config();
    let report = run_optimize(&data, &config)?;
    ensure_dir(&a.output)?;
    let (trace, metrics) = optimize_tables(&report)?;
    write_file(&a.output.join("trace.csv"), &trace)?;
    write_file(&a.output.join("metrics.csv"), metrics.as_bytes())?;
    write_file(&a.output.join("weights.txt"), weights_text(&report.weights()).as_bytes())?;
    let model_path = a.model.clone().unwrap_or_else(|| a.output.join("model.txt"));
    model_file::save(&report.model, &model_path)?;

    let [w1, w2, w3] = report.weights().as_array();
    say(out, format!("weights: rbf={w1:.6} rq={w2:.6} matern={w3:.6} (sum {:.12})", w1 + w2 + w3))?;
    say(out, format!("best CV score (-RMSE): {}", report.outcome.score))?;
    print_table(out, &report)?;
    say(out, format!("outputs in {}; model {}", a.output.display(), model_path.display()))
}

fn cmd_fit(a: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let data = load(&a.data)?;
    let weights = a.weights.as_deref().map(parse_weights).transpose()?;
    if weights.is_some() && a.model_args.kernel != KernelFamily::Ensemble {
        return Err(Error::Usage("--weights requires --kernel ensemble".into()));
    }
    let model = run_fit(&data, &a.model_args.config(), weights)?;
    model_file::save(&model, &a.model)?;
    say(
        out,
        format!(
            "fitted {} on {} rows; model written to {}",
            model.gp.kernel().family(),
            data.n_rows(),
            a.model.display()
        ),
    )
}

fn load_for_model(
    model: &TrainedModel,
    path: &Path,
    with_target: bool,
) -> Result<(DMatrix<f64>, Option<DVector<f64>>)> {
    let t = &model.transform;
    let target = with_target.then_some(t.target_name.as_str());
    load_features_csv(path, &t.feature_names, target).map_err(|e| match e {
        crate::data_io::DataError::MissingColumn(c) => Error::Schema(format!("input lacks model column '{c}'")),
        other => other.into(),
    })
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let model = model_file::load(&a.model)?;
    let (x, _) = load_for_model(&model, &a.input, false)?;
    let p = model.predict(&x)?;
    let mut s = String::from("row_id,mean,variance,mean_original\n");
    for i in 0..p.mean.len() {
        s.push_str(&format!("{},{},{},{}\n", i + 1, p.mean[i], p.variance[i], p.mean_original[i]));
    }
    write_file(&a.output, s.as_bytes())?;
    say(out, format!("wrote {} predictions to {}", p.mean.len(), a.output.display()))
}

fn evaluation_files(dir: &Path, e: &Evaluation) -> Result<()> {
    ensure_dir(dir)?;
    let mut metrics = format!("# {ACCURACY_DEFINITION}\nscale,{}\n", MetricReport::CSV_HEADER);
    metrics.push_str(&format!("transformed,{}\noriginal,{}\n", e.transformed.csv_row(), e.original.csv_row()));
    write_file(&dir.join("metrics.csv"), metrics.as_bytes())?;
    let mut pva = String::from("row_id,actual,predicted,predicted_transformed,variance_transformed\n");
    for i in 0..e.actual.len() {
        pva.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            e.actual[i],
            e.prediction.mean_original[i],
            e.prediction.mean[i],
            e.prediction.variance[i]
        ));
    }
    write_file(&dir.join("predicted_vs_actual.csv"), pva.as_bytes())
}

fn print_evaluation(out: &mut dyn Write, e: &Evaluation) -> Result<()> {
    say(out, format!("{:<12} {:>12} {:>12} {:>12} {:>10} {:>10}", "scale", "mse", "mae", "rmse", "r2", "acc%"))?;
    for (scale, m) in [("transformed", &e.transformed), ("original", &e.original)] {
        say(
            out,
            format!(
                "{scale:<12} {:>12.6} {:>12.6} {:>12.6} {:>10.6} {:>10.3}",
                m.mse, m.mae, m.rmse, m.r2, m.accuracy_pct
            ),
        )?;
    }
    say(out, format!("accuracy: {ACCURACY_DEFINITION}"))
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let eval = match &a.model {
        Some(path) => {
            let model = model_file::load(path)?;
            let (x, y) = load_for_model(&model, &a.data.input, true)?;
            let y =
                y.ok_or_else(|| Error::Schema(format!("input lacks target column '{}'", model.transform.target_name)))?;
            evaluate_model_on(&model, &x, &y)?
        }
        None => {
            let data = load(&a.data)?;
            let (train, test) = train_test_split(&data, a.test_fraction, a.model_args.seed)?;
            let model = run_fit(&train, &a.model_args.config(), None)?;
            evaluate_model_on(&model, test.features(), test.target())?
        }
    };
    evaluation_files(&a.output, &eval)?;
    print_evaluation(out, &eval)?;
    say(out, format!("metrics and predicted-vs-actual written to {}", a.output.display()))
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let data = load(&a.data)?;
    let config = a.model_args.config();
    let dir = &a.output;
    ensure_dir(dir)?;

    let skew = skewness_table(&data, config.transform)?;
    write_file(&dir.join("skewness.csv"), skewness_csv(&skew, config.transform).as_bytes())?;
    write_file(&dir.join("correlation.csv"), &correlation_csv(&data)?)?;

    let (train, test) = train_test_split(&data, a.test_fraction, config.bo.seed)?;
    let report = run_optimize(&train, &config)?;
    let (trace, metrics) = optimize_tables(&report)?;
    write_file(&dir.join("trace.csv"), &trace)?;
    write_file(&dir.join("kernel_metrics.csv"), metrics.as_bytes())?;
    write_file(&dir.join("weights.txt"), weights_text(&report.weights()).as_bytes())?;
    model_file::save(&report.model, dir.join("model.txt"))?;

    let eval = evaluate_model_on(&report.model, test.features(), test.target())?;
    evaluation_files(&dir.join("holdout"), &eval)?;

    say(out, format!("train rows {}, held-out rows {}", train.n_rows(), test.n_rows()))?;
    let [w1, w2, w3] = report.weights().as_array();
    say(out, format!("weights: rbf={w1:.6} rq={w2:.6} matern={w3:.6}"))?;
    say(out, "cross-validated on the training rows:")?;
    print_table(out, &report)?;
    say(out, "held-out rows:")?;
    print_evaluation(out, &eval)?;
    say(out, format!("report written to {}", dir.display()))
}
