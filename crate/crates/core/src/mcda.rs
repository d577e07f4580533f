//! CRITIC objective weighting and TOPSIS closeness scoring.
//!
//! Both operate on a participants × metrics [`DecisionMatrix`] whose columns
//! are all benefit-type (larger means more complex). Cost-type metrics must
//! be negated by the caller.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum McdaError {
    #[error("decision matrix contains a non-finite value at ({row}, {col})")]
    NonFiniteInput { row: usize, col: usize },
    #[error("decision matrix is empty ({rows} x {cols})")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Raw participant × metric scores.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionMatrix<T> {
    values: Array2<T>,
    participant_ids: Vec<String>,
    metric_names: Vec<String>,
}

impl<T: Scalar> DecisionMatrix<T> {
    pub fn new(
        values: Array2<T>,
        participant_ids: Vec<String>,
        metric_names: Vec<String>,
    ) -> Result<Self, McdaError> {
        let (rows, cols) = values.dim();
        if rows == 0 || cols == 0 {
            return Err(McdaError::EmptyMatrix { rows, cols });
        }
        if participant_ids.len() != rows {
            return Err(McdaError::DimensionMismatch {
                expected: rows,
                found: participant_ids.len(),
            });
        }
        if metric_names.len() != cols {
            return Err(McdaError::DimensionMismatch {
                expected: cols,
                found: metric_names.len(),
            });
        }
        for ((row, col), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(McdaError::NonFiniteInput { row, col });
            }
        }
        Ok(Self {
            values,
            participant_ids,
            metric_names,
        })
    }

    /// Builds a matrix with generated ids (`p0`, `p1`, ...) and metric names
    /// (`m0`, `m1`, ...).
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, McdaError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if n_rows == 0 || n_cols == 0 {
            return Err(McdaError::EmptyMatrix {
                rows: n_rows,
                cols: n_cols,
            });
        }
        let mut flat = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(McdaError::DimensionMismatch {
                    expected: n_cols,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let values =
            Array2::from_shape_vec((n_rows, n_cols), flat).expect("shape matches flattened length");
        Self::new(
            values,
            (0..n_rows).map(|i| format!("p{i}")).collect(),
            (0..n_cols).map(|k| format!("m{k}")).collect(),
        )
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn participant_ids(&self) -> &[String] {
        &self.participant_ids
    }

    pub fn metric_names(&self) -> &[String] {
        &self.metric_names
    }

    pub fn participants(&self) -> usize {
        self.values.nrows()
    }

    pub fn metrics(&self) -> usize {
        self.values.ncols()
    }
}

/// CRITIC weights together with the intermediates that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricWeights<T> {
    pub weights: Array1<T>,
    pub information: Array1<T>,
    pub stddevs: Array1<T>,
    pub correlations: Array2<T>,
    /// Set when the information total was degenerate and equal weights were
    /// substituted.
    pub degenerate_fallback: bool,
}

impl<T: Scalar> MetricWeights<T> {
    /// Wraps externally chosen weights. Intermediates are left empty.
    pub fn from_weights(weights: Array1<T>) -> Self {
        let n = weights.len();
        Self {
            weights,
            information: Array1::zeros(n),
            stddevs: Array1::zeros(n),
            correlations: Array2::zeros((n, n)),
            degenerate_fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosenessScores<T> {
    pub scores: Array1<T>,
    pub sep_ideal: Array1<T>,
    pub sep_negative: Array1<T>,
}

const DEGENERATE_INFORMATION: f64 = 1e-12;

fn population_std<T: Scalar>(col: ArrayView1<T>, mean: T) -> T {
    let n = T::of(col.len() as f64);
    let ss: T = col.iter().map(|&x| (x - mean) * (x - mean)).sum();
    (ss / n).sqrt()
}

fn pearson<T: Scalar>(a: ArrayView1<T>, mean_a: T, b: ArrayView1<T>, mean_b: T) -> T {
    let mut cross = T::zero();
    let mut ss_a = T::zero();
    let mut ss_b = T::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cross = cross + dx * dy;
        ss_a = ss_a + dx * dx;
        ss_b = ss_b + dy * dy;
    }
    let denom = (ss_a * ss_b).sqrt();
    if denom == T::zero() {
        // zero-variance column: no measurable linear relationship
        return T::zero();
    }
    (cross / denom).max(-T::one()).min(T::one())
}

/// CRITIC weights from raw (un-normalized) metric values.
///
/// Standard deviations use population normalization. Zero-variance columns
/// get zero correlation with everything, hence zero information. When the
/// information total is at most `1e-12` (always the case for one
/// participant) equal weights are returned and `degenerate_fallback` is set.
pub fn critic_weights<T: Scalar>(
    matrix: &DecisionMatrix<T>,
) -> Result<MetricWeights<T>, McdaError> {
    let x = matrix.values();
    let (rows, n) = x.dim();
    if rows == 0 || n == 0 {
        return Err(McdaError::EmptyMatrix { rows, cols: n });
    }
    let count = T::of(rows as f64);
    let means: Vec<T> = x
        .axis_iter(Axis(1))
        .map(|c| c.iter().copied().sum::<T>() / count)
        .collect();
    let stddevs: Array1<T> = x
        .axis_iter(Axis(1))
        .zip(&means)
        .map(|(c, &m)| population_std(c, m))
        .collect();

    let mut correlations = Array2::<T>::zeros((n, n));
    for k in 0..n {
        for j in k..n {
            let r = if k == j {
                if stddevs[k] == T::zero() {
                    T::zero()
                } else {
                    T::one()
                }
            } else {
                pearson(x.column(k), means[k], x.column(j), means[j])
            };
            correlations[[k, j]] = r;
            correlations[[j, k]] = r;
        }
    }

    if n == 1 {
        return Ok(MetricWeights {
            weights: Array1::from_elem(1, T::one()),
            information: stddevs.clone(),
            stddevs,
            correlations,
            degenerate_fallback: false,
        });
    }

    let others = T::of((n - 1) as f64);
    let information: Array1<T> = (0..n)
        .map(|k| {
            let conflict: T = (0..n)
                .filter(|&j| j != k)
                .map(|j| correlations[[k, j]])
                .sum();
            stddevs[k] * (T::one() - conflict / others)
        })
        .collect();

    let total: T = information.iter().copied().sum();
    let degenerate = !total.is_finite()
        || information.iter().any(|v| !v.is_finite())
        || total <= T::of(DEGENERATE_INFORMATION);
    let weights = if degenerate {
        Array1::from_elem(n, T::one() / T::of(n as f64))
    } else {
        information.mapv(|i| i / total)
    };

    Ok(MetricWeights {
        weights,
        information,
        stddevs,
        correlations,
        degenerate_fallback: degenerate,
    })
}

/// TOPSIS relative closeness of every participant to the ideal solution.
///
/// Columns are vector-normalized (an all-zero column normalizes to zero),
/// weighted, and compared with the per-column maximum (ideal) and minimum
/// (negative ideal) by Euclidean distance. A participant that coincides with
/// both reference points scores 0.5; this only happens when every row is
/// identical in weighted space.
pub fn topsis_scores<T: Scalar>(
    matrix: &DecisionMatrix<T>,
    weights: &MetricWeights<T>,
) -> Result<ClosenessScores<T>, McdaError> {
    let x = matrix.values();
    let (rows, n) = x.dim();
    if weights.weights.len() != n {
        return Err(McdaError::DimensionMismatch {
            expected: n,
            found: weights.weights.len(),
        });
    }
    for (k, w) in weights.weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(McdaError::NonFiniteInput { row: 0, col: k });
        }
    }

    let mut v = Array2::<T>::zeros((rows, n));
    for k in 0..n {
        let col = x.column(k);
        let norm = col.iter().map(|&a| a * a).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let w = weights.weights[k];
        for i in 0..rows {
            v[[i, k]] = w * (col[i] / norm);
        }
    }

    let ideal: Vec<T> = v
        .axis_iter(Axis(1))
        .map(|c| c.iter().copied().fold(T::neg_infinity(), T::max))
        .collect();
    let negative: Vec<T> = v
        .axis_iter(Axis(1))
        .map(|c| c.iter().copied().fold(T::infinity(), T::min))
        .collect();

    let half = T::of(0.5);
    let mut scores = Array1::zeros(rows);
    let mut sep_ideal = Array1::zeros(rows);
    let mut sep_negative = Array1::zeros(rows);
    for (i, row) in v.axis_iter(Axis(0)).enumerate() {
        let mut plus = T::zero();
        let mut minus = T::zero();
        for k in 0..n {
            let dp = row[k] - ideal[k];
            let dm = row[k] - negative[k];
            plus = plus + dp * dp;
            minus = minus + dm * dm;
        }
        let (plus, minus) = (plus.sqrt(), minus.sqrt());
        sep_ideal[i] = plus;
        sep_negative[i] = minus;
        let denom = plus + minus;
        scores[i] = if denom == T::zero() {
            half
        } else {
            minus / denom
        };
    }

    Ok(ClosenessScores {
        scores,
        sep_ideal,
        sep_negative,
    })
}
