//! Dataset ingestion, validation, standardization, and reproducible splits.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A numeric feature matrix with categorical labels.
///
/// Class ids are dense in `0..class_names.len()` and follow first-appearance
/// order when loaded from CSV. Categorical feature columns are one-hot
/// encoded at ingestion under names of the form `column=value`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Dataset { features, labels, feature_names, class_names };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn validate(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::invalid("fewer than 2 rows"));
        }
        if self.d() < 1 {
            return Err(Error::invalid("no feature columns"));
        }
        if self.class_names.is_empty() {
            return Err(Error::invalid("no classes"));
        }
        if self.labels.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: self.labels.len() });
        }
        if self.feature_names.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: self.feature_names.len(),
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes()) {
            return Err(Error::invalid(format!(
                "label id {bad} out of range for {} classes",
                self.n_classes()
            )));
        }
        for (i, row) in self.features.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite feature value in row {i}")));
            }
        }
        Ok(())
    }

    /// Rows of the feature matrix selected by index, as a new matrix.
    pub fn feature_rows(&self, indices: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), indices)
    }

    /// Labels selected by index.
    pub fn label_rows(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Train/test split request.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

/// Per-feature location/scale computed on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: x.ncols() });
        }
        let mut out = x.to_owned();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

enum ColumnKind {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

/// Load a CSV file with a mandatory header row.
///
/// Numeric columns become features, fully non-numeric columns are one-hot
/// encoded, and the label column becomes categorical ids in first-appearance
/// order. A column mixing numeric and non-numeric cells is an error, as is
/// any non-finite numeric value.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::invalid(format!("label column '{label_column}' not found")))?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::invalid(format!(
                "row {} has {} cells, expected {}",
                rows.len(),
                record.len(),
                headers.len()
            )));
        }
        rows.push(record.iter().map(|c| c.to_string()).collect());
    }
    if rows.len() < 2 {
        return Err(Error::invalid("fewer than 2 rows"));
    }

    // Label encoding in first-appearance order.
    let mut class_names: Vec<String> = Vec::new();
    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(rows.len());
    for row in &rows {
        let name = row[label_idx].trim().to_string();
        if name.is_empty() {
            return Err(Error::invalid(format!("empty label in row {}", labels.len())));
        }
        let id = *class_ids.entry(name.clone()).or_insert_with(|| {
            class_names.push(name);
            class_names.len() - 1
        });
        labels.push(id);
    }

    // Classify each feature column: all-numeric or all-categorical.
    let mut columns: Vec<(String, ColumnKind)> = Vec::new();
    for (c, header) in headers.iter().enumerate() {
        if c == label_idx {
            continue;
        }
        let parsed: Vec<Option<f64>> =
            rows.iter().map(|r| r[c].trim().parse::<f64>().ok()).collect();
        let numeric = parsed.iter().filter(|p| p.is_some()).count();
        if numeric == rows.len() {
            let mut vals = Vec::with_capacity(rows.len());
            for (i, p) in parsed.iter().enumerate() {
                let v = p.unwrap();
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite value in row {i}, column '{header}'; row rejected"
                    )));
                }
                vals.push(v);
            }
            columns.push((header.clone(), ColumnKind::Numeric(vals)));
        } else if numeric == 0 {
            let vals: Vec<String> = rows.iter().map(|r| r[c].trim().to_string()).collect();
            if let Some(i) = vals.iter().position(|v| v.is_empty()) {
                return Err(Error::invalid(format!(
                    "missing value in row {i}, column '{header}'"
                )));
            }
            columns.push((header.clone(), ColumnKind::Categorical(vals)));
        } else {
            let bad = parsed.iter().position(|p| p.is_none()).unwrap();
            return Err(Error::invalid(format!(
                "unparseable numeric cell in row {bad}, column '{header}'"
            )));
        }
    }
    if columns.is_empty() {
        return Err(Error::invalid("no feature columns"));
    }

    // Expand to the final feature matrix, one-hot encoding categoricals.
    let mut feature_names = Vec::new();
    let mut feature_cols: Vec<Vec<f64>> = Vec::new();
    for (name, kind) in columns {
        match kind {
            ColumnKind::Numeric(vals) => {
                feature_names.push(name);
                feature_cols.push(vals);
            }
            ColumnKind::Categorical(vals) => {
                let mut levels: Vec<String> = Vec::new();
                for v in &vals {
                    if !levels.contains(v) {
                        levels.push(v.clone());
                    }
                }
                for level in levels {
                    feature_names.push(format!("{name}={level}"));
                    feature_cols
                        .push(vals.iter().map(|v| if *v == level { 1.0 } else { 0.0 }).collect());
                }
            }
        }
    }

    let n = rows.len();
    let d = feature_cols.len();
    let mut features = Array2::zeros((n, d));
    for (j, col) in feature_cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            features[[i, j]] = v;
        }
    }

    Dataset::new(features, labels, feature_names, class_names)
}

/// Write a dataset back to CSV with the label as the last column.
///
/// Reloading the output with [`load_csv`] reproduces the dataset exactly,
/// provided class ids already follow first-appearance order (always true for
/// datasets produced by `load_csv`). One-hot columns are written as numeric
/// 0/1 columns under their expanded names.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ds.feature_names.clone();
    header.push(label_column.to_string());
    writer.write_record(&header)?;
    for (i, row) in ds.features.outer_iter().enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        record.push(ds.class_names[ds.labels[i]].clone());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Load a feature matrix aligned to a trained model's feature names.
///
/// Extra columns (including any label column) are ignored; no labels are
/// read. Names of the form `column=value` are matched against the raw
/// categorical column, reproducing the training-time one-hot encoding.
pub fn load_features_aligned(path: impl AsRef<Path>, feature_names: &[String]) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let col_index: HashMap<&str, usize> =
        headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();

    enum Source {
        Numeric(usize),
        OneHot(usize, String),
    }
    let mut sources = Vec::with_capacity(feature_names.len());
    for name in feature_names {
        if let Some(&c) = col_index.get(name.as_str()) {
            sources.push(Source::Numeric(c));
        } else if let Some((col, level)) = name.split_once('=') {
            let c = *col_index
                .get(col)
                .ok_or_else(|| Error::invalid(format!("missing feature column '{col}'")))?;
            sources.push(Source::OneHot(c, level.to_string()));
        } else {
            return Err(Error::invalid(format!("missing feature column '{name}'")));
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut row = Vec::with_capacity(sources.len());
        for src in &sources {
            match src {
                Source::Numeric(c) => {
                    let cell = record.get(*c).unwrap_or("").trim();
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::invalid(format!(
                            "unparseable numeric cell in row {}, column '{}'",
                            rows.len(),
                            headers[*c]
                        ))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::invalid(format!(
                            "non-finite value in row {}, column '{}'",
                            rows.len(),
                            headers[*c]
                        )));
                    }
                    row.push(v);
                }
                Source::OneHot(c, level) => {
                    let cell = record.get(*c).unwrap_or("").trim();
                    row.push(if cell == level { 1.0 } else { 0.0 });
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid("no data rows"));
    }
    let mut out = Array2::zeros((rows.len(), feature_names.len()));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// Split row indices into disjoint train/test sets.
///
/// `|train| = round(train_fraction * n)`, computed per class when
/// stratified. Deterministic under a fixed seed.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
        return Err(Error::invalid("train_fraction must be in (0, 1]"));
    }
    let n = ds.n();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();

    if spec.stratified {
        for class in 0..ds.n_classes() {
            let mut members: Vec<usize> =
                (0..n).filter(|&i| ds.labels[i] == class).collect();
            if members.len() < 2 {
                return Err(Error::invalid(format!(
                    "class '{}' has {} member(s); stratified split needs at least 2",
                    ds.class_names[class],
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            let k = (spec.train_fraction * members.len() as f64).round() as usize;
            train.extend_from_slice(&members[..k]);
            test.extend_from_slice(&members[k..]);
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let k = (spec.train_fraction * n as f64).round() as usize;
        train.extend_from_slice(&order[..k]);
        test.extend_from_slice(&order[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Center and scale every feature by statistics of the training rows only.
///
/// Zero-variance features are scaled by 1, so constant columns come out
/// all-zero after centering.
pub fn standardize(ds: &Dataset, train_indices: &[usize]) -> Result<(Dataset, Scaler)> {
    if train_indices.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let m = train_indices.len() as f64;
    let d = ds.d();
    let mut mean = vec![0.0; d];
    for &i in train_indices {
        for j in 0..d {
            mean[j] += ds.features[[i, j]];
        }
    }
    for v in mean.iter_mut() {
        *v /= m;
    }
    let mut var = vec![0.0; d];
    for &i in train_indices {
        for j in 0..d {
            let delta = ds.features[[i, j]] - mean[j];
            var[j] += delta * delta;
        }
    }
    let std: Vec<f64> =
        var.iter().map(|&v| { let s = (v / m).sqrt(); if s > 0.0 { s } else { 1.0 } }).collect();

    let scaler = Scaler { mean, std };
    let features = scaler.transform(ds.features.view())?;
    let out = Dataset {
        features,
        labels: ds.labels.clone(),
        feature_names: ds.feature_names.clone(),
        class_names: ds.class_names.clone(),
    };
    Ok((out, scaler))
}

/// Synthetic Gaussian blobs: `c` unit-variance classes with axis-aligned
/// centers `separation` apart, `n_per_class` points each.
pub fn gaussian_blobs(
    n_per_class: usize,
    d: usize,
    c: usize,
    separation: f64,
    seed: u64,
) -> Dataset {
    assert!(d >= 1 && c >= 1 && n_per_class >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr_standard_normal();
    let n = n_per_class * c;
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for class in 0..c {
        let axis = class % d;
        let level = (class / d + 1) as f64;
        for i in 0..n_per_class {
            let row = class * n_per_class + i;
            for j in 0..d {
                let center = if j == axis { separation * level } else { 0.0 };
                features[[row, j]] = center + normal(&mut rng);
            }
            labels.push(class);
        }
    }
    let feature_names = (0..d).map(|j| format!("x{j}")).collect();
    let class_names = (0..c).map(|k| format!("class_{k}")).collect();
    Dataset { features, labels, feature_names, class_names }
}

// Box-Muller keeps the generator dependency surface to plain uniforms.
fn rand_distr_standard_normal() -> impl Fn(&mut ChaCha8Rng) -> f64 {
    |rng| {
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Mean and population standard deviation per column.
pub fn column_stats(x: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let mut var: Array1<f64> = Array1::zeros(x.ncols());
    for row in x.outer_iter() {
        for j in 0..x.ncols() {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    var.mapv_inplace(|v| (v / n).sqrt());
    (mean, var)
}
