//! Datasets: CSV ingestion, synthetic Gaussian blobs and an S1-shaped set.

use std::collections::HashMap;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{init_centroids, stream_rng, streams};

/// Quantile at which each feature is clipped before min-max scaling.
pub const CLIP_QUANTILE: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// Row-major points.
    pub points: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
    pub preprocessing: String,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn d(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    /// Number of distinct labels, if labelled.
    pub fn label_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Largest absolute coordinate.
    pub fn max_abs(&self) -> f64 {
        self.points
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Adds `offset` to every coordinate.
    pub fn shift(&mut self, offset: f64) {
        for v in self.points.iter_mut().flatten() {
            *v += offset;
        }
        self.preprocessing.push_str(&format!("; shifted by {offset}"));
    }

    /// Column `j` of the data.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[j]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvOptions {
    pub has_header: bool,
    /// Column holding ground-truth labels, excluded from the features.
    pub label_column: Option<usize>,
    pub normalize: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            has_header: false,
            label_column: None,
            normalize: true,
        }
    }
}

/// Linear-interpolation quantile of unsorted `values`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Clips every feature at its [`CLIP_QUANTILE`] and scales it to `[0, 1]`.
/// Constant features become all zeros.
pub fn normalize_features(points: &mut [Vec<f64>]) {
    let d = points.first().map_or(0, |p| p.len());
    for j in 0..d {
        let col: Vec<f64> = points.iter().map(|p| p[j]).collect();
        let cap = quantile(&col, CLIP_QUANTILE);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min).min(cap);
        let range = cap - lo;
        for p in points.iter_mut() {
            p[j] = if range > 0.0 {
                (p[j].min(cap) - lo) / range
            } else {
                0.0
            };
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut points = Vec::new();
    let mut raw_labels = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1 + usize::from(opts.has_header);
        if record.iter().all(str::is_empty) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Data(format!(
                    "row {row}: {} fields, expected {w}",
                    record.len()
                )))
            }
            _ => {}
        }
        let mut p = Vec::with_capacity(record.len());
        for (c, field) in record.iter().enumerate() {
            if Some(c) == opts.label_column {
                raw_labels.push(field.to_string());
                continue;
            }
            let v: f64 = field.parse().map_err(|_| {
                Error::Data(format!("row {row}, column {}: non-numeric value {field:?}", c + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("row {row}, column {}: {v}", c + 1)));
            }
            p.push(v);
        }
        points.push(p);
    }
    if let (Some(l), Some(w)) = (opts.label_column, width) {
        if l >= w {
            return Err(Error::Data(format!("label column {l} out of range for {w} columns")));
        }
    }
    if points.is_empty() || points[0].is_empty() {
        return Err(Error::Data(format!("{}: no numeric data", path.display())));
    }
    let labels = opts.label_column.map(|_| {
        let mut ids: HashMap<String, usize> = HashMap::new();
        raw_labels
            .iter()
            .map(|s| {
                let next = ids.len();
                *ids.entry(s.clone()).or_insert(next)
            })
            .collect()
    });
    let mut preprocessing = String::from("raw");
    if opts.normalize {
        normalize_features(&mut points);
        preprocessing = format!("clipped at q{CLIP_QUANTILE}, min-max to [0, 1]");
    }
    Ok(Dataset {
        name: path
            .file_stem()
            .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
        points,
        labels,
        preprocessing,
    })
}

/// Writes points (and labels as a last column) without a header.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for (i, p) in data.points.iter().enumerate() {
        let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        if let Some(l) = &data.labels {
            row.push(l[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `n` points split evenly over `k` Gaussian blobs, clipped to `[-B, B]^d`.
/// Centers are drawn like initial centroids, from a generator independent of
/// the one a protocol run with the same seed uses.
pub fn gen_synthetic(n: usize, k: usize, d: usize, bound: f64, cluster_std: f64, seed: u64) -> Result<Dataset> {
    if n < k {
        return Err(Error::Config(format!("n = {n} must be at least k = {k}")));
    }
    let centers = init_centroids(k, d, bound, seed ^ 0x5eed_da7a)?.centers;
    blobs(&centers, n, bound, cluster_std, seed, format!("Synth-{n}-{k}-{d}"))
}

fn blobs(centers: &[Vec<f64>], n: usize, bound: f64, std: f64, seed: u64, name: String) -> Result<Dataset> {
    let k = centers.len();
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("cluster_std: {e}")))?;
    let mut rng = stream_rng(seed, streams::DATA);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let j = i * k / n;
        points.push(
            centers[j]
                .iter()
                .map(|c| (c + normal.sample(&mut rng)).clamp(-bound, bound))
                .collect(),
        );
        labels.push(j);
    }
    Ok(Dataset {
        name,
        points,
        labels: Some(labels),
        preprocessing: format!("gaussian blobs, std {std}, clipped to [-{bound}, {bound}]"),
    })
}

/// Centers of the S1-shaped stand-in, on the unit square.
#[allow(clippy::approx_constant)]
pub const S1_CENTERS: [[f64; 2]; 15] = [
    [0.604, 0.574],
    [0.802, 0.318],
    [0.416, 0.786],
    [0.823, 0.732],
    [0.851, 0.158],
    [0.339, 0.564],
    [0.169, 0.349],
    [0.619, 0.398],
    [0.241, 0.844],
    [0.322, 0.165],
    [0.139, 0.557],
    [0.509, 0.175],
    [0.399, 0.404],
    [0.860, 0.547],
    [0.676, 0.861],
];
pub const S1_N: usize = 5000;
pub const S1_STD: f64 = 0.03;

/// S1-shaped data: 5,000 points around 15 fixed centers, min-max scaled to
/// `[0, 1]` and then shifted to `[-0.5, 0.5]`, so `B = 0.5`.
pub fn s1_like(seed: u64) -> Dataset {
    let centers: Vec<Vec<f64>> = S1_CENTERS.iter().map(|c| c.to_vec()).collect();
    let mut data = blobs(&centers, S1_N, f64::INFINITY, S1_STD, seed, "S1-like".into())
        .expect("valid constants");
    for j in 0..2 {
        let col = data.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for p in data.points.iter_mut() {
            p[j] = (p[j] - lo) / (hi - lo) - 0.5;
        }
    }
    data.preprocessing = format!("15 blobs, std {S1_STD}, min-max to [0, 1], shifted by -0.5");
    data
}
