//! Server-side rank assignment: CRITIC weights, TOPSIS closeness, min-max
//! normalization with a floor, then integer LoRA ranks.

use ndarray::Array2;
use thiserror::Error;

use crate::mcda::{self, DecisionMatrix, McdaError};
use crate::Scalar;

pub const DEFAULT_FLOOR: f64 = 0.1;
const SIMILARITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankError {
    #[error("rank floor must lie in (0, 1], got {0}")]
    InvalidFloor(f64),
    #[error("global rank must be at least 1")]
    InvalidGlobalRank,
    #[error(transparent)]
    Mcda(#[from] McdaError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankAssignment<T> {
    pub participant_id: String,
    pub closeness: T,
    pub rank_ratio: T,
    pub rank: usize,
}

pub fn check_floor<T: Scalar>(floor: T) -> Result<(), RankError> {
    if !(floor > T::zero() && floor <= T::one()) {
        return Err(RankError::InvalidFloor(floor.as_f64()));
    }
    Ok(())
}

/// Min-max normalizes closeness scores and lifts them to at least `floor`.
/// Coinciding scores give every participant the full ratio 1.
pub fn rank_ratios<T: Scalar>(closeness: &[T], floor: T) -> Result<Vec<T>, RankError> {
    check_floor(floor)?;
    let max = closeness.iter().copied().fold(T::neg_infinity(), T::max);
    let min = closeness.iter().copied().fold(T::infinity(), T::min);
    if max == min {
        return Ok(vec![T::one(); closeness.len()]);
    }
    let span = max - min;
    Ok(closeness
        .iter()
        .map(|&c| ((c - min) / span).max(floor).min(T::one()))
        .collect())
}

/// `max(1, round_half_up(global_rank * ratio))`, capped at `global_rank`.
pub fn rank_for_ratio<T: Scalar>(global_rank: usize, ratio: T) -> usize {
    let scaled = T::of(global_rank as f64) * ratio;
    let rounded = (scaled + T::of(0.5)).floor().to_usize().unwrap_or(0);
    rounded.clamp(1, global_rank.max(1))
}

/// Builds assignments from already-computed closeness scores.
pub fn assign_from_closeness<T: Scalar>(
    participant_ids: &[String],
    closeness: &[T],
    global_rank: usize,
    floor: T,
) -> Result<Vec<RankAssignment<T>>, RankError> {
    if global_rank == 0 {
        return Err(RankError::InvalidGlobalRank);
    }
    let ratios = rank_ratios(closeness, floor)?;
    Ok(participant_ids
        .iter()
        .zip(closeness)
        .zip(ratios)
        .map(|((id, &c), r)| RankAssignment {
            participant_id: id.clone(),
            closeness: c,
            rank_ratio: r,
            rank: rank_for_ratio(global_rank, r),
        })
        .collect())
}

/// CRITIC → TOPSIS → floored min-max ratios → integer ranks, in input order.
pub fn assign_ranks<T: Scalar>(
    matrix: &DecisionMatrix<T>,
    global_rank: usize,
    floor: T,
) -> Result<Vec<RankAssignment<T>>, RankError> {
    check_floor(floor)?;
    if global_rank == 0 {
        return Err(RankError::InvalidGlobalRank);
    }
    let weights = mcda::critic_weights(matrix)?;
    if weights.degenerate_fallback {
        log::info!("CRITIC information degenerate; using equal metric weights");
    }
    let scores = mcda::topsis_scores(matrix, &weights)?;
    assign_from_closeness(
        matrix.participant_ids(),
        scores.scores.as_slice().expect("contiguous scores"),
        global_rank,
        floor,
    )
}

/// Pairwise similarity of rank ratios, `1 - |r_i - r_j| / range`.
pub fn rank_similarity_matrix<T: Scalar>(assignments: &[RankAssignment<T>]) -> Array2<T> {
    let n = assignments.len();
    let ratios: Vec<T> = assignments.iter().map(|a| a.rank_ratio).collect();
    let max = ratios.iter().copied().fold(T::neg_infinity(), T::max);
    let min = ratios.iter().copied().fold(T::infinity(), T::min);
    let range = (max - min).max(T::of(SIMILARITY_EPS));
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            T::one()
        } else {
            (T::one() - (ratios[i] - ratios[j]).abs() / range).max(T::zero())
        }
    })
}
