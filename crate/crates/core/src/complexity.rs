//! Per-participant data-complexity metrics.
//!
//! A participant contributes three numbers derived from its profiling run
//! and label histogram: the entropy of its mean-epoch loss trace, a
//! volume-weighted label entropy, and the Gini-Simpson index of its labels.
//! The log data volume rides along for the alternative metric
//! configurations. All logarithms are natural.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use thiserror::Error;

use crate::mcda::{DecisionMatrix, McdaError};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComplexityError {
    #[error("input contains a non-finite value at index {0}")]
    NonFiniteInput(usize),
    #[error("loss trace entry {0} is negative")]
    NegativeLoss(usize),
    #[error("loss trace needs at least 2 epochs, got {0}")]
    TraceTooShort(usize),
    #[error("label histogram has no samples")]
    EmptyHistogram,
    #[error("no complexity reports supplied")]
    NoReports,
    #[error("duplicate participant id {0:?}")]
    InconsistentReports(String),
    #[error(transparent)]
    Mcda(#[from] McdaError),
}

/// Mean batch loss of every profiling epoch, in epoch order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLossTrace<T> {
    mean_epoch_losses: Vec<T>,
}

impl<T: Scalar> EpochLossTrace<T> {
    pub fn new(mean_epoch_losses: Vec<T>) -> Result<Self, ComplexityError> {
        if mean_epoch_losses.len() < 2 {
            return Err(ComplexityError::TraceTooShort(mean_epoch_losses.len()));
        }
        for (e, &l) in mean_epoch_losses.iter().enumerate() {
            if !l.is_finite() {
                return Err(ComplexityError::NonFiniteInput(e));
            }
            if l < T::zero() {
                return Err(ComplexityError::NegativeLoss(e));
            }
        }
        Ok(Self { mean_epoch_losses })
    }

    pub fn losses(&self) -> &[T] {
        &self.mean_epoch_losses
    }

    pub fn epochs(&self) -> usize {
        self.mean_epoch_losses.len()
    }
}

/// Sample count per label. Labels with a zero count may be present and are
/// ignored by every metric.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelHistogram {
    counts: BTreeMap<usize, u64>,
}

impl LabelHistogram {
    pub fn new(counts: BTreeMap<usize, u64>) -> Result<Self, ComplexityError> {
        let hist = Self { counts };
        if hist.total() == 0 {
            return Err(ComplexityError::EmptyHistogram);
        }
        Ok(hist)
    }

    pub fn from_labels(labels: &[usize]) -> Result<Self, ComplexityError> {
        let mut counts = BTreeMap::new();
        for &l in labels {
            *counts.entry(l).or_insert(0u64) += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Number of labels with at least one sample.
    pub fn present_labels(&self) -> usize {
        self.counts.values().filter(|&&c| c > 0).count()
    }

    fn probabilities<T: Scalar>(&self) -> impl Iterator<Item = T> + '_ {
        let total = T::of(self.total() as f64);
        self.counts
            .values()
            .filter(|&&c| c > 0)
            .map(move |&c| T::of(c as f64) / total)
    }
}

/// Which columns the server scores participants on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricConfig {
    /// Label entropy, Gini-Simpson, and loss entropy × log data volume.
    FineGrain,
    /// Loss entropy × log data volume only.
    Alternative1,
    /// Loss entropy and log data volume as separate columns.
    Alternative2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport<T> {
    pub participant_id: String,
    pub loss_entropy: T,
    pub label_entropy: T,
    pub gini_simpson: T,
    pub log_data_volume: T,
}

impl<T: Scalar> ComplexityReport<T> {
    pub fn compute(
        participant_id: impl Into<String>,
        trace: &EpochLossTrace<T>,
        hist: &LabelHistogram,
    ) -> Result<Self, ComplexityError> {
        Ok(Self {
            participant_id: participant_id.into(),
            loss_entropy: loss_entropy(trace)?,
            label_entropy: label_entropy(hist)?,
            gini_simpson: gini_simpson(hist)?,
            log_data_volume: log_data_volume(hist)?,
        })
    }
}

/// Shannon entropy of the normalized loss trace. An all-zero trace carries no
/// loss information and yields 0 with a logged warning.
pub fn loss_entropy<T: Scalar>(trace: &EpochLossTrace<T>) -> Result<T, ComplexityError> {
    let total: T = trace.losses().iter().copied().sum();
    if total == T::zero() {
        log::warn!("all-zero loss trace; loss entropy set to 0");
        return Ok(T::zero());
    }
    let mut h = T::zero();
    for &l in trace.losses() {
        if l > T::zero() {
            let p = l / total;
            h = h - p * p.ln();
        }
    }
    Ok(h.max(T::zero()))
}

/// Label entropy scaled by the log of the sample count.
pub fn label_entropy<T: Scalar>(hist: &LabelHistogram) -> Result<T, ComplexityError> {
    let total = hist.total();
    if total == 0 {
        return Err(ComplexityError::EmptyHistogram);
    }
    let plogp: T = hist.probabilities::<T>().map(|p| p * p.ln()).sum();
    // `+ 0` turns the point-mass result -0.0 into 0.0
    Ok(-(T::of(total as f64).ln()) * plogp + T::zero())
}

pub fn gini_simpson<T: Scalar>(hist: &LabelHistogram) -> Result<T, ComplexityError> {
    if hist.total() == 0 {
        return Err(ComplexityError::EmptyHistogram);
    }
    let sq: T = hist.probabilities::<T>().map(|p| p * p).sum();
    Ok((T::one() - sq).max(T::zero()))
}

pub fn log_data_volume<T: Scalar>(hist: &LabelHistogram) -> Result<T, ComplexityError> {
    match hist.total() {
        0 => Err(ComplexityError::EmptyHistogram),
        n => Ok(T::of(n as f64).ln()),
    }
}

pub fn metric_names(config: MetricConfig) -> &'static [&'static str] {
    match config {
        MetricConfig::FineGrain => &["label_entropy", "gini_simpson", "loss_entropy_x_ldv"],
        MetricConfig::Alternative1 => &["loss_entropy_x_ldv"],
        MetricConfig::Alternative2 => &["loss_entropy", "log_data_volume"],
    }
}

/// Lays reports out as benefit-type TOPSIS columns, rows in input order.
pub fn build_decision_matrix<T: Scalar>(
    reports: &[ComplexityReport<T>],
    config: MetricConfig,
) -> Result<DecisionMatrix<T>, ComplexityError> {
    if reports.is_empty() {
        return Err(ComplexityError::NoReports);
    }
    let mut seen = HashSet::new();
    for r in reports {
        if !seen.insert(r.participant_id.as_str()) {
            return Err(ComplexityError::InconsistentReports(
                r.participant_id.clone(),
            ));
        }
    }
    let names = metric_names(config);
    let mut flat = Vec::with_capacity(reports.len() * names.len());
    for r in reports {
        let le_ldv = r.loss_entropy * r.log_data_volume;
        match config {
            MetricConfig::FineGrain => flat.extend([r.label_entropy, r.gini_simpson, le_ldv]),
            MetricConfig::Alternative1 => flat.push(le_ldv),
            MetricConfig::Alternative2 => flat.extend([r.loss_entropy, r.log_data_volume]),
        }
    }
    let values = Array2::from_shape_vec((reports.len(), names.len()), flat)
        .expect("row width matches metric count");
    Ok(DecisionMatrix::new(
        values,
        reports.iter().map(|r| r.participant_id.clone()).collect(),
        names.iter().map(|s| s.to_string()).collect(),
    )?)
}
