//! Tabular data: CSV ingestion, the synthetic marketing-channel generator,
//! correlation analysis and train/test splitting.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("write failed: {0}")]
    Write(#[from] io::Error),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("column '{0}' not found")]
    MissingColumn(String),
    #[error("duplicate column '{0}'")]
    DuplicateColumn(String),
    #[error("no feature columns besides target '{0}'")]
    NoFeatures(String),
    #[error("row {row}, column '{column}': cannot parse '{value}' as a finite number")]
    MalformedCell { row: usize, column: String, value: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("zero data rows")]
    NoRows,
    #[error("column '{0}' has zero variance")]
    ZeroVariance(String),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Feature matrix plus a named target column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    features: DMatrix<f64>,
    target_name: String,
    target: DVector<f64>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        features: DMatrix<f64>,
        target_name: String,
        target: DVector<f64>,
    ) -> Result<Self, DataError> {
        if feature_names.is_empty() {
            return Err(DataError::NoFeatures(target_name));
        }
        if features.ncols() != feature_names.len() {
            return Err(DataError::Shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        if features.nrows() != target.len() {
            return Err(DataError::Shape(format!("{} feature rows for {} targets", features.nrows(), target.len())));
        }
        if target.is_empty() {
            return Err(DataError::NoRows);
        }
        let mut seen = HashSet::new();
        for name in feature_names.iter().chain(std::iter::once(&target_name)) {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateColumn(name.clone()));
            }
        }
        if let Some((i, j)) = (0..features.nrows())
            .flat_map(|i| (0..features.ncols()).map(move |j| (i, j)))
            .find(|&(i, j)| !features[(i, j)].is_finite())
        {
            return Err(DataError::MalformedCell {
                row: i + 1,
                column: feature_names[j].clone(),
                value: features[(i, j)].to_string(),
            });
        }
        if let Some(i) = target.iter().position(|v| !v.is_finite()) {
            return Err(DataError::MalformedCell { row: i + 1, column: target_name, value: target[i].to_string() });
        }
        Ok(Self { feature_names, features, target_name, target })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_column(&self, j: usize) -> Vec<f64> {
        self.features.column(j).iter().copied().collect()
    }

    /// Copy of the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            features: self.features.select_rows(rows),
            target_name: self.target_name.clone(),
            target: self.target.select_rows(rows),
        }
    }

    /// Writes a CSV with features first and the target last. An optional
    /// comment is emitted as a leading `#` line.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<(), DataError> {
        if let Some(c) = comment {
            writeln!(out, "# {}", c.replace('\n', " "))?;
        }
        let header: Vec<&str> =
            self.feature_names.iter().map(String::as_str).chain(std::iter::once(self.target_name.as_str())).collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.n_rows() {
            let mut line = String::new();
            for j in 0..self.n_features() {
                line.push_str(&self.features[(i, j)].to_string());
                line.push(',');
            }
            line.push_str(&self.target[i].to_string());
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Loads a dataset; every column other than `target_column` is a feature.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset, DataError> {
    read_csv(open(path.as_ref())?, target_column)
}

/// Parses CSV text with a header row. Lines starting with `#` are comments.
pub fn read_csv<R: Read>(reader: R, target_column: &str) -> Result<Dataset, DataError> {
    let table = read_table(reader)?;
    let target_idx = table.index_of(target_column)?;
    let feature_idx: Vec<usize> = (0..table.header.len()).filter(|&i| i != target_idx).collect();
    if feature_idx.is_empty() {
        return Err(DataError::NoFeatures(target_column.to_string()));
    }
    let (features, target) = table.extract(&feature_idx, Some(target_idx))?;
    Dataset::new(
        feature_idx.iter().map(|&i| table.header[i].clone()).collect(),
        features,
        target_column.to_string(),
        target.expect("target requested"),
    )
}

/// Reads the named feature columns (in the given order) and, if present, the
/// target column. Other columns are ignored.
pub fn read_features_csv<R: Read>(
    reader: R,
    feature_names: &[String],
    target_column: Option<&str>,
) -> Result<(DMatrix<f64>, Option<DVector<f64>>), DataError> {
    let table = read_table(reader)?;
    let feature_idx = feature_names.iter().map(|name| table.index_of(name)).collect::<Result<Vec<_>, _>>()?;
    let target_idx = target_column.and_then(|t| table.index_of(t).ok());
    table.extract(&feature_idx, target_idx)
}

pub fn load_features_csv(
    path: impl AsRef<Path>,
    feature_names: &[String],
    target_column: Option<&str>,
) -> Result<(DMatrix<f64>, Option<DVector<f64>>), DataError> {
    read_features_csv(open(path.as_ref())?, feature_names, target_column)
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl RawTable {
    fn index_of(&self, name: &str) -> Result<usize, DataError> {
        self.header.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    fn extract(
        &self,
        feature_idx: &[usize],
        target_idx: Option<usize>,
    ) -> Result<(DMatrix<f64>, Option<DVector<f64>>), DataError> {
        let parse = |row: usize, col: usize| -> Result<f64, DataError> {
            let raw = &self.rows[row][col];
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() && is_plain_decimal(raw) => Ok(v),
                _ => {
                    Err(DataError::MalformedCell { row: row + 1, column: self.header[col].clone(), value: raw.clone() })
                }
            }
        };
        let n = self.rows.len();
        let mut features = DMatrix::zeros(n, feature_idx.len());
        let mut target = target_idx.map(|_| DVector::zeros(n));
        for i in 0..n {
            for (j, &col) in feature_idx.iter().enumerate() {
                features[(i, j)] = parse(i, col)?;
            }
            if let (Some(t), Some(col)) = (target.as_mut(), target_idx) {
                t[i] = parse(i, col)?;
            }
        }
        Ok((features, target))
    }
}

// Rejects spellings like "inf", "NaN" or "1_000" that `f64::from_str` may
// accept or that are not plain decimal notation.
fn is_plain_decimal(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'))
}

fn read_table<R: Read>(reader: R) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).flexible(true).from_reader(reader);
    let header: Vec<String> =
        rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(DataError::Csv("missing header row".into()));
    }
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(DataError::DuplicateColumn(h.clone()));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        if record.len() != header.len() {
            return Err(DataError::RaggedRow { row: i + 1, expected: header.len(), found: record.len() });
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(DataError::NoRows);
    }
    Ok(RawTable { header, rows })
}

/// Spend distribution for one synthetic channel. Both shapes are right-skewed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelShape {
    /// Gamma with the given shape parameter, scaled to the channel mean.
    Gamma { shape: f64 },
    /// Lognormal with the given log-scale sigma, scaled to the channel median.
    LogNormal { sigma: f64 },
}

/// One marketing channel of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub shape: ChannelShape,
    /// Mean spend (gamma) or median spend (lognormal).
    pub spend_scale: f64,
    /// Maximum lift in units sold as spend grows without bound.
    pub max_lift: f64,
    /// Spend at which the lift reaches `1 - 1/e` of its maximum.
    pub saturation: f64,
}

pub const CHANNEL_NAMES: [&str; 6] =
    ["TV", "Billboards", "Google_Ads", "Social_Media", "Influencer_Marketing", "Affiliate_Marketing"];
pub const TARGET_NAME: &str = "Product_Sold";

const BASE_SALES: f64 = 100.0;
/// Lift from the joint saturation of TV and Social_Media.
const INTERACTION_LIFT: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub noise_sd: f64,
    pub channels: Vec<Channel>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let ch = |name: &str, shape, spend_scale, max_lift, saturation| Channel {
            name: name.to_string(),
            shape,
            spend_scale,
            max_lift,
            saturation,
        };
        Self {
            n: 400,
            seed: 42,
            noise_sd: 5.0,
            channels: vec![
                ch(CHANNEL_NAMES[0], ChannelShape::Gamma { shape: 2.0 }, 500.0, 120.0, 400.0),
                ch(CHANNEL_NAMES[1], ChannelShape::LogNormal { sigma: 0.6 }, 200.0, 40.0, 250.0),
                ch(CHANNEL_NAMES[2], ChannelShape::Gamma { shape: 1.5 }, 300.0, 90.0, 200.0),
                ch(CHANNEL_NAMES[3], ChannelShape::LogNormal { sigma: 0.8 }, 150.0, 70.0, 150.0),
                ch(CHANNEL_NAMES[4], ChannelShape::Gamma { shape: 1.2 }, 100.0, 50.0, 120.0),
                ch(CHANNEL_NAMES[5], ChannelShape::LogNormal { sigma: 0.5 }, 80.0, 30.0, 90.0),
            ],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidConfig(msg));
        if self.n < 10 {
            return bad(format!("n must be at least 10, got {}", self.n));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!("noise_sd must be non-negative, got {}", self.noise_sd));
        }
        if self.channels.is_empty() {
            return bad("no channels".into());
        }
        for c in &self.channels {
            let shape_ok = match c.shape {
                ChannelShape::Gamma { shape } => shape.is_finite() && shape > 0.0,
                ChannelShape::LogNormal { sigma } => sigma.is_finite() && sigma > 0.0,
            };
            let positive = [c.spend_scale, c.saturation].iter().all(|v| v.is_finite() && *v > 0.0);
            if !shape_ok || !positive || !c.max_lift.is_finite() {
                return bad(format!("channel '{}' has invalid parameters", c.name));
            }
        }
        Ok(())
    }

    /// Expected units sold for one row of channel spends.
    pub fn response(&self, spends: &[f64]) -> f64 {
        let sat = |c: &Channel, x: f64| 1.0 - (-x / c.saturation).exp();
        let mut total = BASE_SALES;
        for (c, &x) in self.channels.iter().zip(spends) {
            total += c.max_lift * sat(c, x);
        }
        let tv = self.channels.iter().position(|c| c.name == "TV");
        let social = self.channels.iter().position(|c| c.name == "Social_Media");
        if let (Some(a), Some(b)) = (tv, social) {
            total += INTERACTION_LIFT * sat(&self.channels[a], spends[a]) * sat(&self.channels[b], spends[b]);
        }
        total
    }

    /// One-line description of the generating equation and its parameters.
    pub fn describe(&self) -> String {
        let channels: Vec<String> = self
            .channels
            .iter()
            .map(|c| {
                let dist = match c.shape {
                    ChannelShape::Gamma { shape } => format!("gamma(shape={shape}, mean={})", c.spend_scale),
                    ChannelShape::LogNormal { sigma } => {
                        format!("lognormal(sigma={sigma}, median={})", c.spend_scale)
                    }
                };
                format!("{}~{} lift={} sat={}", c.name, dist, c.max_lift, c.saturation)
            })
            .collect();
        format!(
            "synthetic marketing data n={} seed={} noise_sd={}; {TARGET_NAME} = {BASE_SALES} + sum_j lift_j*(1-exp(-x_j/sat_j)) \
             + {INTERACTION_LIFT}*(1-exp(-TV/sat_TV))*(1-exp(-Social_Media/sat_Social_Media)) + N(0, noise_sd^2); {}",
            self.n,
            self.seed,
            self.noise_sd,
            channels.join("; ")
        )
    }
}

type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> f64>;

/// Generates a reproducible synthetic dataset. Each row draws the channel
/// spends in order, then the noise term.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samplers: Vec<Sampler> = config
        .channels
        .iter()
        .map(|c| -> Sampler {
            match c.shape {
                ChannelShape::Gamma { shape } => {
                    let g = Gamma::new(shape, c.spend_scale / shape).expect("validated");
                    Box::new(move |r| g.sample(r))
                }
                ChannelShape::LogNormal { sigma } => {
                    let l = LogNormal::new(c.spend_scale.ln(), sigma).expect("validated");
                    Box::new(move |r| l.sample(r))
                }
            }
        })
        .collect();
    let noise = Normal::new(0.0, config.noise_sd).expect("validated");

    let d = config.channels.len();
    let mut features = DMatrix::zeros(config.n, d);
    let mut target = DVector::zeros(config.n);
    let mut row = vec![0.0; d];
    for i in 0..config.n {
        for (j, sample) in samplers.iter().enumerate() {
            row[j] = sample(&mut rng);
            features[(i, j)] = row[j];
        }
        let eps = noise.sample(&mut rng);
        target[i] = config.response(&row) + eps;
    }
    Dataset::new(config.channels.iter().map(|c| c.name.clone()).collect(), features, TARGET_NAME.to_string(), target)
}

/// Pearson correlations over the features followed by the target. Returns
/// the labels in matrix order.
pub fn correlation_matrix(data: &Dataset) -> Result<(Vec<String>, DMatrix<f64>), DataError> {
    let n = data.n_rows();
    if n < 3 {
        return Err(DataError::TooFewRows { needed: 3, got: n });
    }
    let mut labels: Vec<String> = data.feature_names().to_vec();
    labels.push(data.target_name().to_string());
    let mut columns: Vec<Vec<f64>> = (0..data.n_features()).map(|j| data.feature_column(j)).collect();
    columns.push(data.target().iter().copied().collect());

    let mut centered = Vec::with_capacity(columns.len());
    for (col, name) in columns.iter().zip(&labels) {
        if col.iter().all(|&v| v == col[0]) {
            return Err(DataError::ZeroVariance(name.clone()));
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let c: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        centered.push(c.into_iter().map(|v| v / norm).collect::<Vec<f64>>());
    }
    let k = labels.len();
    let mut corr = DMatrix::identity(k, k);
    for i in 0..k {
        for j in 0..i {
            let r: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = r.clamp(-1.0, 1.0);
            corr[(i, j)] = r;
            corr[(j, i)] = r;
        }
    }
    Ok((labels, corr))
}

/// Writes a labelled square matrix as CSV.
pub fn write_matrix_csv<W: Write>(mut out: W, labels: &[String], m: &DMatrix<f64>) -> Result<(), DataError> {
    writeln!(out, ",{}", labels.join(","))?;
    for (i, label) in labels.iter().enumerate() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{label},{}", row.join(","))?;
    }
    Ok(())
}

/// Seeded shuffle split into `(train, test)`; the test part has
/// `ceil(n * test_fraction)` rows. Both parts keep the original row order.
pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidConfig(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n = data.n_rows();
    let n_test = (n as f64 * test_fraction).ceil() as usize;
    if n_test == 0 || n_test >= n {
        return Err(DataError::InvalidConfig(format!(
            "test fraction {test_fraction} leaves an empty part for {n} rows"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = idx.split_at_mut(n_test);
    test.sort_unstable();
    train.sort_unstable();
    Ok((data.select_rows(train), data.select_rows(test)))
}
