//! Data-complexity driven LoRA rank assignment for federated learning.
//!
//! Participants profile their local data (loss-trace entropy, label entropy,
//! Gini-Simpson diversity, data volume), the server weights those metrics
//! with CRITIC and scores participants with TOPSIS, and the resulting
//! closeness scores become per-participant LoRA ranks. The [`fedsim`] module
//! runs the whole pipeline as a deterministic in-process simulation with
//! heterogeneous-rank aggregation and the homogeneous / manual baselines.
//!
//! The numerical modules are generic over [`Scalar`]; the `*64` aliases at
//! the crate root fix the scalar to `f64`, which is what the simulator uses.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod complexity;
pub mod data;
pub mod fedsim;
pub mod lora;
pub mod mcda;
pub mod nn;
pub mod rank;
pub mod seed;
pub mod wire;

/// Real scalar type the numerical core is written against (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and sampled values.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type DecisionMatrix64 = mcda::DecisionMatrix<f64>;
pub type MetricWeights64 = mcda::MetricWeights<f64>;
pub type ClosenessScores64 = mcda::ClosenessScores<f64>;
pub type EpochLossTrace64 = complexity::EpochLossTrace<f64>;
pub type ComplexityReport64 = complexity::ComplexityReport<f64>;
pub type RankAssignment64 = rank::RankAssignment<f64>;
pub type DenseNet64 = nn::DenseNet<f64>;
pub type TrainingConfig64 = nn::TrainingConfig<f64>;
pub type LoraNet64 = lora::LoraNet<f64>;
pub type LoraDenseLayer64 = lora::LoraDenseLayer<f64>;
pub type GlobalLoraState64 = lora::GlobalLoraState<f64>;

pub use complexity::{ComplexityReport, LabelHistogram, MetricConfig};
pub use data::LabeledDataset;
pub use mcda::{ClosenessScores, DecisionMatrix, MetricWeights};
pub use rank::RankAssignment;
