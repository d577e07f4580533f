//! Datasets: synthetic Gaussian blobs, IDX (MNIST-style) files, held-out
//! splits and non-IID client partitions.

pub mod idx;
mod partition;

pub use partition::{
    partition, partition_iid, partition_staircase, partition_two_client, PartitionScheme,
    PartitionSpec,
};

use std::collections::BTreeMap;
use std::io::{self, Write};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::complexity::LabelHistogram;
use crate::seed::{self, Purpose};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("IDX file truncated: {0}")]
    TruncatedFile(String),
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} needs {needed} samples but only {available} remain")]
    InsufficientSamples {
        label: usize,
        needed: usize,
        available: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Features in `[0, 1]`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self, DataError> {
        if labels.is_empty() {
            return Err(DataError::InvalidParams("dataset has no samples".into()));
        }
        if features.nrows() != labels.len() {
            return Err(DataError::InvalidParams(format!(
                "{} feature rows for {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::InvalidParams(format!(
                "label {l} outside {classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidParams("non-finite feature".into()));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn histogram(&self) -> LabelHistogram {
        LabelHistogram::from_labels(&self.labels).expect("dataset is non-empty")
    }

    pub fn label_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    /// Indices of every sample, grouped by label.
    pub fn label_pools(&self) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            pools[l].push(i);
        }
        pools
    }

    /// Writes `label,f0,...,f{d-1}` CSV.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((0..self.dim()).map(|j| format!("f{j}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (row, label) in self.features.axis_iter(Axis(0)).zip(&self.labels) {
            write!(w, "{label}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `classes` isotropic Gaussian blobs around seeded centers in `[0, 1]^dim`,
/// clamped to `[0, 1]`. Samples are grouped by class.
pub fn generate_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(DataError::InvalidParams(format!(
            "classes, per_class and dim must be positive (got {classes}, {per_class}, {dim})"
        )));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(DataError::InvalidParams(format!(
            "spread must be finite and >= 0, got {spread}"
        )));
    }
    let mut rng = seed::rng(seed, Purpose::Blobs, &[]);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let centers = Array2::from_shape_simple_fn((classes, dim), || unit.sample(&mut rng));
    let noise = Normal::new(0.0, spread).expect("finite non-negative spread");
    let mut features = Array2::zeros((classes * per_class, dim));
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for j in 0..per_class {
            let mut row = features.row_mut(c * per_class + j);
            for (k, v) in row.iter_mut().enumerate() {
                let x: f64 = if spread == 0.0 {
                    centers[[c, k]]
                } else {
                    centers[[c, k]] + noise.sample(&mut rng)
                };
                *v = x.clamp(0.0, 1.0);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, classes)
}

/// Per-class held-out split: `round(n_c · test_fraction)` samples of each
/// class go to the test set. Returns `(train, test)` index lists.
pub fn stratified_split(
    dataset: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DataError::InvalidParams(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut pool) in dataset.label_pools().into_iter().enumerate() {
        pool.shuffle(&mut seed::rng(seed, Purpose::TestSplit, &[label as u64]));
        let n_test = (pool.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&pool[..n_test]);
        train.extend_from_slice(&pool[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
