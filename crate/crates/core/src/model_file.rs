//! Versioned plain-text model persistence.
//!
//! A model file is a list of `key = value` lines. Lines starting with `#` and
//! blank lines are ignored. The first entry must be `format = ensemble-gp-model`
//! followed by `version = 1`. Numeric lists are whitespace separated and every
//! float is written in shortest round-trip form, so a saved model restores
//! bit for bit. The GP factor is not stored: it is recomputed on load and
//! checked against the stored sum and L1 norm of the solve vector.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::gp::{GpError, GpModel};
use crate::kernels::{Ensemble, EnsembleWeights, KernelFamily, KernelSpec, Matern, MaternNu, RationalQuadratic, Rbf};
use crate::pipeline::{DataTransform, TrainedModel};
use crate::transforms::{ColumnTransform, QuantileMap, TransformKind, YeoJohnsonTransform};

pub const FORMAT_NAME: &str = "ensemble-gp-model";
pub const FORMAT_VERSION: u32 = 1;
pub const CHECKSUM_RTOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelFileError {
    #[error("not a model file: first entry must be 'format = {FORMAT_NAME}'")]
    MissingHeader,
    #[error("unsupported model file version '{0}' (supported: {FORMAT_VERSION})")]
    UnsupportedVersion(String),
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key '{key}'")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("missing key '{0}'")]
    MissingKey(String),
    #[error("key '{key}': invalid value '{value}'")]
    BadValue { key: String, value: String },
    #[error("key '{key}': {reason}")]
    Invalid { key: String, reason: String },
    #[error("solve-vector checksum mismatch for {what}: stored {stored}, recomputed {recomputed}")]
    Checksum { what: &'static str, stored: f64, recomputed: f64 },
    #[error("cannot rebuild GP: {0}")]
    Rebuild(#[from] GpError),
}

type Parsed<T> = std::result::Result<T, ModelFileError>;

fn floats(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x}").expect("write to String");
    }
    s
}

fn push(out: &mut String, key: &str, value: impl std::fmt::Display) {
    writeln!(out, "{key} = {value}").expect("write to String");
}

fn render_transform(out: &mut String, prefix: &str, t: &ColumnTransform) {
    push(out, &format!("{prefix}.transform"), t.kind());
    match t {
        ColumnTransform::YeoJohnson(yj) => {
            push(out, &format!("{prefix}.lambda"), yj.lambda);
            push(out, &format!("{prefix}.mean"), yj.fitted_mean);
            push(out, &format!("{prefix}.std"), yj.fitted_std);
        }
        ColumnTransform::Quantile(q) => push(out, &format!("{prefix}.reference"), floats(q.sorted_reference())),
        ColumnTransform::Identity => {}
    }
}

fn render_kernel(out: &mut String, spec: &KernelSpec) {
    push(out, "kernel.family", spec.family());
    let rbf = |out: &mut String, k: &Rbf| push(out, "kernel.rbf.lengthscale", k.lengthscale);
    let rq = |out: &mut String, k: &RationalQuadratic| {
        push(out, "kernel.rq.variance", k.variance);
        push(out, "kernel.rq.lengthscale", k.lengthscale);
        push(out, "kernel.rq.alpha", k.alpha);
    };
    let matern = |out: &mut String, k: &Matern| {
        push(out, "kernel.matern.variance", k.variance);
        push(out, "kernel.matern.lengthscale", k.lengthscale);
        push(out, "kernel.matern.nu", k.nu);
    };
    match spec {
        KernelSpec::Rbf(k) => rbf(out, k),
        KernelSpec::RationalQuadratic(k) => rq(out, k),
        KernelSpec::Matern(k) => matern(out, k),
        KernelSpec::Ensemble(e) => {
            push(out, "kernel.weights", floats(&e.weights.as_array()));
            rbf(out, &e.rbf);
            rq(out, &e.rq);
            matern(out, &e.matern);
        }
    }
}

/// Serializes a trained model.
pub fn render(model: &TrainedModel) -> String {
    let t = &model.transform;
    let gp = &model.gp;
    let mut out = String::new();
    out.push_str("# ensemble-gp model file\n");
    push(&mut out, "format", FORMAT_NAME);
    push(&mut out, "version", FORMAT_VERSION);
    push(&mut out, "transform", t.kind);
    push(&mut out, "features", t.feature_names.len());
    for (j, (name, ct)) in t.feature_names.iter().zip(&t.features).enumerate() {
        push(&mut out, &format!("feature.{j}.name"), name);
        render_transform(&mut out, &format!("feature.{j}"), ct);
    }
    push(&mut out, "target.name", &t.target_name);
    render_transform(&mut out, "target", &t.target);
    render_kernel(&mut out, gp.kernel());
    push(&mut out, "noise_variance", gp.noise_variance());
    push(&mut out, "y_offset", gp.y_offset());
    let x = gp.x_train();
    push(&mut out, "train.rows", x.nrows());
    for i in 0..x.nrows() {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        push(&mut out, &format!("train.x.{i}"), floats(&row));
    }
    push(&mut out, "train.y_centered", floats(gp.y_centered().as_slice()));
    let (sum, l1) = checksum(gp.alpha());
    push(&mut out, "alpha.sum", sum);
    push(&mut out, "alpha.l1", l1);
    out
}

fn checksum(alpha: &DVector<f64>) -> (f64, f64) {
    (alpha.iter().sum(), alpha.iter().map(|a| a.abs()).sum())
}

struct Entries<'a> {
    values: HashMap<&'a str, (usize, &'a str)>,
    used: HashSet<&'a str>,
}

impl<'a> Entries<'a> {
    fn parse(text: &'a str) -> Parsed<Self> {
        let mut values = HashMap::new();
        let mut order = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ModelFileError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ModelFileError::Syntax { line: i + 1 });
            }
            if values.insert(k, (i + 1, v)).is_some() {
                return Err(ModelFileError::DuplicateKey { line: i + 1, key: k.to_string() });
            }
            order.push(k);
        }
        if order.first() != Some(&"format") || values["format"].1 != FORMAT_NAME {
            return Err(ModelFileError::MissingHeader);
        }
        match values.get("version") {
            Some((_, v)) if *v == FORMAT_VERSION.to_string() => {}
            Some((_, v)) => return Err(ModelFileError::UnsupportedVersion(v.to_string())),
            None => return Err(ModelFileError::MissingKey("version".into())),
        }
        let mut used = HashSet::new();
        used.insert("format");
        used.insert("version");
        Ok(Self { values, used })
    }

    fn raw(&mut self, key: &str) -> Parsed<&'a str> {
        match self.values.get_key_value(key) {
            Some((k, (_, v))) => {
                self.used.insert(k);
                Ok(v)
            }
            None => Err(ModelFileError::MissingKey(key.to_string())),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Parsed<T> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| bad(key, v))
    }

    fn float(&mut self, key: &str) -> Parsed<f64> {
        let v = self.raw(key)?;
        parse_float(key, v)
    }

    fn floats(&mut self, key: &str) -> Parsed<Vec<f64>> {
        let v = self.raw(key)?;
        v.split_whitespace().map(|s| parse_float(key, s)).collect()
    }

    fn finish(self) -> Parsed<()> {
        let mut unknown: Vec<(usize, &str)> =
            self.values.iter().filter(|(k, _)| !self.used.contains(*k)).map(|(k, (line, _))| (*line, *k)).collect();
        unknown.sort();
        match unknown.first() {
            Some(&(line, key)) => Err(ModelFileError::UnknownKey { line, key: key.to_string() }),
            None => Ok(()),
        }
    }
}

fn bad(key: &str, value: &str) -> ModelFileError {
    ModelFileError::BadValue { key: key.to_string(), value: value.to_string() }
}

fn invalid(key: &str, reason: impl ToString) -> ModelFileError {
    ModelFileError::Invalid { key: key.to_string(), reason: reason.to_string() }
}

fn parse_float(key: &str, s: &str) -> Parsed<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(bad(key, s)),
    }
}

fn parse_transform(e: &mut Entries, prefix: &str) -> Parsed<ColumnTransform> {
    let key = format!("{prefix}.transform");
    let kind: TransformKind = e.get(&key)?;
    Ok(match kind {
        TransformKind::YeoJohnson => {
            let lambda = e.float(&format!("{prefix}.lambda"))?;
            let mean = e.float(&format!("{prefix}.mean"))?;
            let std = e.float(&format!("{prefix}.std"))?;
            ColumnTransform::YeoJohnson(YeoJohnsonTransform::new(lambda, mean, std).map_err(|r| invalid(&key, r))?)
        }
        TransformKind::Quantile => {
            let rkey = format!("{prefix}.reference");
            let reference = e.floats(&rkey)?;
            ColumnTransform::Quantile(QuantileMap::from_sorted(reference).map_err(|r| invalid(&rkey, r))?)
        }
        TransformKind::None => ColumnTransform::Identity,
    })
}

fn parse_kernel(e: &mut Entries) -> Parsed<KernelSpec> {
    let family: KernelFamily = e.get("kernel.family")?;
    let rbf = |e: &mut Entries| -> Parsed<Rbf> { Ok(Rbf { lengthscale: e.float("kernel.rbf.lengthscale")? }) };
    let rq = |e: &mut Entries| -> Parsed<RationalQuadratic> {
        Ok(RationalQuadratic {
            variance: e.float("kernel.rq.variance")?,
            lengthscale: e.float("kernel.rq.lengthscale")?,
            alpha: e.float("kernel.rq.alpha")?,
        })
    };
    let matern = |e: &mut Entries| -> Parsed<Matern> {
        Ok(Matern {
            variance: e.float("kernel.matern.variance")?,
            lengthscale: e.float("kernel.matern.lengthscale")?,
            nu: e.get::<MaternNu>("kernel.matern.nu")?,
        })
    };
    let spec = match family {
        KernelFamily::Rbf => KernelSpec::Rbf(rbf(e)?),
        KernelFamily::RationalQuadratic => KernelSpec::RationalQuadratic(rq(e)?),
        KernelFamily::Matern => KernelSpec::Matern(matern(e)?),
        KernelFamily::Ensemble => {
            let w = e.floats("kernel.weights")?;
            let weights = match w[..] {
                [a, b, c] => EnsembleWeights::new(a, b, c).map_err(|r| invalid("kernel.weights", r))?,
                _ => return Err(invalid("kernel.weights", "expected 3 values")),
            };
            KernelSpec::Ensemble(Ensemble { weights, rbf: rbf(e)?, rq: rq(e)?, matern: matern(e)? })
        }
    };
    spec.validate().map_err(|r| invalid("kernel.family", r))?;
    Ok(spec)
}

/// Parses a model file and rebuilds the GP.
pub fn parse(text: &str) -> Parsed<TrainedModel> {
    let mut e = Entries::parse(text)?;
    let kind: TransformKind = e.get("transform")?;
    let d: usize = e.get("features")?;
    if d == 0 {
        return Err(invalid("features", "need at least one feature"));
    }
    let mut feature_names = Vec::new();
    let mut features = Vec::new();
    let mut seen = HashSet::new();
    for j in 0..d {
        let key = format!("feature.{j}.name");
        let name = e.raw(&key)?.to_string();
        if name.is_empty() || !seen.insert(name.clone()) {
            return Err(bad(&key, &name));
        }
        feature_names.push(name);
        features.push(parse_transform(&mut e, &format!("feature.{j}"))?);
    }
    let target_name = e.raw("target.name")?.to_string();
    if target_name.is_empty() || seen.contains(&target_name) {
        return Err(bad("target.name", &target_name));
    }
    let target = parse_transform(&mut e, "target")?;
    if features.iter().chain([&target]).any(|t| t.kind() != kind) {
        return Err(invalid("transform", "column transforms disagree with the declared kind"));
    }

    let spec = parse_kernel(&mut e)?;
    let noise = e.float("noise_variance")?;
    if noise < 0.0 {
        return Err(bad("noise_variance", &noise.to_string()));
    }
    let y_offset = e.float("y_offset")?;
    let n: usize = e.get("train.rows")?;
    if n == 0 {
        return Err(invalid("train.rows", "need at least one training row"));
    }
    let mut x = Vec::new();
    for i in 0..n {
        let key = format!("train.x.{i}");
        let row = e.floats(&key)?;
        if row.len() != d {
            return Err(invalid(&key, format!("expected {d} values, found {}", row.len())));
        }
        x.extend(row);
    }
    let y = e.floats("train.y_centered")?;
    if y.len() != n {
        return Err(invalid("train.y_centered", format!("expected {n} values, found {}", y.len())));
    }
    let stored_sum = e.float("alpha.sum")?;
    let stored_l1 = e.float("alpha.l1")?;
    e.finish()?;

    let x = DMatrix::from_row_slice(n, d, &x);
    let gp = GpModel::fit_centered(&x, &DVector::from_vec(y), y_offset, spec, noise)?;
    let (sum, l1) = checksum(gp.alpha());
    let scale = stored_l1.abs().max(1.0);
    if (sum - stored_sum).abs() > CHECKSUM_RTOL * scale {
        return Err(ModelFileError::Checksum { what: "alpha.sum", stored: stored_sum, recomputed: sum });
    }
    if (l1 - stored_l1).abs() > CHECKSUM_RTOL * scale {
        return Err(ModelFileError::Checksum { what: "alpha.l1", stored: stored_l1, recomputed: l1 });
    }
    Ok(TrainedModel { transform: DataTransform { kind, feature_names, features, target_name, target }, gp })
}

pub fn save(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::Dataset;
    use crate::transforms::TransformKind;

    fn model(kind: TransformKind, spec: KernelSpec) -> TrainedModel {
        let x = DMatrix::from_fn(12, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.37 + j as f64);
        let y = DVector::from_fn(12, |i, _| (i as f64 * 0.9).sin() * 10.0 + 50.0);
        let data = Dataset::new(vec!["a".into(), "b".into()], x, "y".into(), y).unwrap();
        let t = DataTransform::fit(&data, kind).unwrap();
        let td = t.apply(&data).unwrap();
        TrainedModel::fit(&td, t, spec, 1e-3).unwrap()
    }

    fn specs() -> Vec<KernelSpec> {
        [KernelFamily::Rbf, KernelFamily::RationalQuadratic, KernelFamily::Matern, KernelFamily::Ensemble]
            .into_iter()
            .map(|f| KernelSpec::default_for(f, MaternNu::FiveHalves))
            .collect()
    }

    #[test]
    fn round_trip_is_exact() {
        for kind in [TransformKind::Quantile, TransformKind::YeoJohnson, TransformKind::None] {
            for spec in specs() {
                let m = model(kind, spec);
                let text = render(&m);
                let back = parse(&text).unwrap();
                assert_eq!(render(&back), text);
                assert_eq!(back.gp.alpha(), m.gp.alpha());
                assert_eq!(back.transform, m.transform);
                let q = DMatrix::from_fn(5, 2, |i, j| i as f64 * 0.8 - j as f64);
                assert_eq!(back.predict(&q).unwrap(), m.predict(&q).unwrap());
            }
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let text = render(&model(TransformKind::None, specs()[0])).replace("version = 1", "version = 2");
        assert_eq!(parse(&text).unwrap_err(), ModelFileError::UnsupportedVersion("2".into()));
    }

    #[test]
    fn rejects_missing_header() {
        assert_eq!(parse("").unwrap_err(), ModelFileError::MissingHeader);
        assert_eq!(parse("version = 1\nformat = ensemble-gp-model").unwrap_err(), ModelFileError::MissingHeader);
    }

    #[test]
    fn rejects_duplicate_and_unknown_keys() {
        let text = render(&model(TransformKind::None, specs()[0]));
        let dup = format!("{text}noise_variance = 0.5\n");
        assert!(matches!(parse(&dup), Err(ModelFileError::DuplicateKey { .. })));
        let extra = format!("{text}colour = blue\n");
        assert!(matches!(parse(&extra), Err(ModelFileError::UnknownKey { ref key, .. }) if key == "colour"));
    }

    #[test]
    fn detects_tampered_training_data() {
        let m = model(TransformKind::None, specs()[3]);
        let text = render(&m);
        let first = m.gp.y_centered()[0];
        let tampered =
            text.replacen(&format!("train.y_centered = {first}"), &format!("train.y_centered = {}", first + 1.0), 1);
        assert_ne!(text, tampered);
        assert!(matches!(parse(&tampered), Err(ModelFileError::Checksum { .. })));
    }

    #[test]
    fn rejects_bad_values() {
        let text = render(&model(TransformKind::None, specs()[3]));
        let cases = [
            text.replace("kernel.family = ensemble", "kernel.family = periodic"),
            text.replace("kernel.matern.nu = 2.5", "kernel.matern.nu = 2"),
            text.replace("noise_variance = 0.001", "noise_variance = NaN"),
            text.replace("train.rows = 12", "train.rows = 13"),
            text.replace("features = 2", "features = 0"),
        ];
        for c in cases {
            assert_ne!(c, text);
            assert!(parse(&c).is_err());
        }
    }
}
