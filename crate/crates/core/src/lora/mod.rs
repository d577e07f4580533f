//! Low-rank adaptation of dense layers.
//!
//! Every dense layer of a base [`DenseNet`] becomes
//! `W_eff = W0 + B·A` with `W0` frozen, `A` (`r × in`) and `B` (`out × r`)
//! trainable, and no `alpha / r` scaling. `A` starts Gaussian and `B` zero,
//! so a freshly adapted net computes exactly what its base computes.
//!
//! The travelling part of a net (adapters, bias and, with `train_base`, the
//! base weight) is a [`LoraState`]; clients of different rank are combined by
//! [`aggregate_hetero`] and served back with [`broadcast_truncate`].

mod aggregate;
pub mod snapshot;

pub use aggregate::{
    aggregate_hetero, broadcast_truncate, pad_to, weighted_average, AggregateError,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::nn::{self, DenseNet, LayerGrad, Network, NnError};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoraError {
    #[error("rank {rank} exceeds min(in, out) = {limit} of layer {layer}")]
    RankTooLarge {
        layer: usize,
        rank: usize,
        limit: usize,
    },
    #[error("rank must be at least 1 (layer {0})")]
    ZeroRank(usize),
    #[error("expected {expected} per-layer ranks, got {found}")]
    LayerCount { expected: usize, found: usize },
    #[error("state does not fit this net: {0}")]
    StateMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraDenseLayer<T> {
    /// Frozen `out × in` base weight.
    pub base_weight: Array2<T>,
    /// `A`, `rank × in`.
    pub lora_down: Array2<T>,
    /// `B`, `out × rank`.
    pub lora_up: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> LoraDenseLayer<T> {
    pub fn rank(&self) -> usize {
        self.lora_down.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.base_weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.base_weight.nrows()
    }

    pub fn effective_weight(&self) -> Array2<T> {
        &self.base_weight + &self.lora_up.dot(&self.lora_down)
    }
}

/// Trainable parameters of one LoRA layer: `r·(in + out) + out`.
pub fn lora_layer_params(input_dim: usize, output_dim: usize, rank: usize) -> usize {
    rank * (input_dim + output_dim) + output_dim
}

/// Rank at which a LoRA layer has as many weight parameters as the dense
/// layer it adapts: `ceil(in·out / (in + out))`.
pub fn break_even_rank(input_dim: usize, output_dim: usize) -> usize {
    (input_dim * output_dim).div_ceil(input_dim + output_dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraNet<T> {
    layers: Vec<LoraDenseLayer<T>>,
    train_base: bool,
}

/// Seeds `A ~ N(0, 1/in)` and zero `B` for every layer of `base`, all at
/// the same `rank`.
pub fn lora_init<T: Scalar>(
    base: &DenseNet<T>,
    rank: usize,
    seed: u64,
) -> Result<LoraNet<T>, LoraError> {
    lora_init_with_ranks(base, &vec![rank; base.layers().len()], seed)
}

pub fn lora_init_with_ranks<T: Scalar>(
    base: &DenseNet<T>,
    ranks: &[usize],
    seed: u64,
) -> Result<LoraNet<T>, LoraError> {
    if ranks.len() != base.layers().len() {
        return Err(LoraError::LayerCount {
            expected: base.layers().len(),
            found: ranks.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(ranks.len());
    for (i, (layer, &rank)) in base.layers().iter().zip(ranks).enumerate() {
        let (input_dim, output_dim) = (layer.input_dim(), layer.output_dim());
        check_rank(i, rank, input_dim, output_dim)?;
        let normal = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("positive std");
        let lora_down =
            Array2::from_shape_simple_fn((rank, input_dim), || T::of(normal.sample(&mut rng)));
        layers.push(LoraDenseLayer {
            base_weight: layer.weight.clone(),
            lora_down,
            lora_up: Array2::zeros((output_dim, rank)),
            bias: layer.bias.clone(),
        });
    }
    Ok(LoraNet {
        layers,
        train_base: false,
    })
}

fn check_rank(
    layer: usize,
    rank: usize,
    input_dim: usize,
    output_dim: usize,
) -> Result<(), LoraError> {
    if rank == 0 {
        return Err(LoraError::ZeroRank(layer));
    }
    let limit = input_dim.min(output_dim);
    if rank > limit {
        return Err(LoraError::RankTooLarge { layer, rank, limit });
    }
    Ok(())
}

/// Travelling parameters of one adapted layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterLayer<T> {
    pub down: Array2<T>,
    pub up: Array2<T>,
    pub bias: Array1<T>,
    /// Present only when the base weight is trained and shared.
    pub base: Option<Array2<T>>,
}

impl<T: Scalar> AdapterLayer<T> {
    pub fn rank(&self) -> usize {
        self.down.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.down.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.up.nrows()
    }
}

/// Adapters of a whole net, as sent between client and server.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraState<T> {
    pub layers: Vec<AdapterLayer<T>>,
}

impl<T: Scalar> LoraState<T> {
    pub fn ranks(&self) -> Vec<usize> {
        self.layers.iter().map(AdapterLayer::rank).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                lora_layer_params(l.input_dim(), l.output_dim(), l.rank())
                    + l.base.as_ref().map_or(0, |b| b.len())
            })
            .sum()
    }
}

/// Server-side state at the global per-layer ranks.
pub type GlobalLoraState<T> = LoraState<T>;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrad<T> {
    pub down: Array2<T>,
    pub up: Array2<T>,
    pub bias: Array1<T>,
    pub base: Option<Array2<T>>,
}

impl<T: Scalar> LoraNet<T> {
    pub fn layers(&self) -> &[LoraDenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LoraDenseLayer<T>] {
        &mut self.layers
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.layers.iter().map(LoraDenseLayer::rank).collect()
    }

    pub fn train_base(&self) -> bool {
        self.train_base
    }

    /// Lets SGD update the base weights too (they then travel in the state).
    pub fn set_train_base(&mut self, train_base: bool) {
        self.train_base = train_base;
    }

    /// Builds a client net from a shared base and a (client-rank) state.
    pub fn from_state(base: &DenseNet<T>, state: &LoraState<T>) -> Result<Self, LoraError> {
        if state.layers.len() != base.layers().len() {
            return Err(LoraError::LayerCount {
                expected: base.layers().len(),
                found: state.layers.len(),
            });
        }
        let layers = base
            .layers()
            .iter()
            .map(|l| LoraDenseLayer {
                base_weight: l.weight.clone(),
                lora_down: Array2::zeros((0, l.input_dim())),
                lora_up: Array2::zeros((l.output_dim(), 0)),
                bias: l.bias.clone(),
            })
            .collect();
        let mut net = Self {
            layers,
            train_base: state.layers.iter().any(|l| l.base.is_some()),
        };
        net.load_state(state)?;
        Ok(net)
    }

    pub fn state(&self) -> LoraState<T> {
        LoraState {
            layers: self
                .layers
                .iter()
                .map(|l| AdapterLayer {
                    down: l.lora_down.clone(),
                    up: l.lora_up.clone(),
                    bias: l.bias.clone(),
                    base: self.train_base.then(|| l.base_weight.clone()),
                })
                .collect(),
        }
    }

    pub fn load_state(&mut self, state: &LoraState<T>) -> Result<(), LoraError> {
        if state.layers.len() != self.layers.len() {
            return Err(LoraError::LayerCount {
                expected: self.layers.len(),
                found: state.layers.len(),
            });
        }
        for (i, (layer, s)) in self.layers.iter().zip(&state.layers).enumerate() {
            let (input_dim, output_dim) = (layer.input_dim(), layer.output_dim());
            check_rank(i, s.rank(), input_dim, output_dim)?;
            if s.down.dim() != (s.rank(), input_dim)
                || s.up.dim() != (output_dim, s.rank())
                || s.bias.len() != output_dim
                || s.base
                    .as_ref()
                    .is_some_and(|b| b.dim() != (output_dim, input_dim))
            {
                return Err(LoraError::StateMismatch(format!("layer {i} shapes")));
            }
        }
        for (layer, s) in self.layers.iter_mut().zip(&state.layers) {
            layer.lora_down = s.down.clone();
            layer.lora_up = s.up.clone();
            layer.bias = s.bias.clone();
            if let Some(b) = &s.base {
                layer.base_weight = b.clone();
            }
        }
        Ok(())
    }

    fn effective(&self) -> Vec<Array2<T>> {
        self.layers
            .iter()
            .map(LoraDenseLayer::effective_weight)
            .collect()
    }

    fn views<'a>(&'a self, eff: &'a [Array2<T>]) -> Vec<(ArrayView2<'a, T>, ArrayView1<'a, T>)> {
        eff.iter()
            .zip(&self.layers)
            .map(|(w, l)| (w.view(), l.bias.view()))
            .collect()
    }
}

impl<T: Scalar> Network<T> for LoraNet<T> {
    type Grad = Vec<LoraGrad<T>>;

    fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    fn classes(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    fn probabilities(&self, x: ArrayView2<T>) -> Result<Array2<T>, NnError> {
        nn::check_batch(x, None, self.input_dim(), self.classes())?;
        let eff = self.effective();
        Ok(nn::forward_probs(&self.views(&eff), x))
    }

    fn loss_and_grad(
        &self,
        x: ArrayView2<T>,
        labels: &[usize],
    ) -> Result<(T, Self::Grad), NnError> {
        nn::check_batch(x, Some(labels), self.input_dim(), self.classes())?;
        if labels.is_empty() {
            return Err(NnError::EmptyShard);
        }
        let eff = self.effective();
        let (loss, dense) = nn::backward_pass(&self.views(&eff), x, labels);
        let grads = dense
            .into_iter()
            .zip(&self.layers)
            .map(|(LayerGrad { weight, bias }, l)| LoraGrad {
                down: l.lora_up.t().dot(&weight),
                up: weight.dot(&l.lora_down.t()),
                bias,
                base: self.train_base.then_some(weight),
            })
            .collect();
        Ok((loss, grads))
    }

    fn sgd_step(&mut self, grad: &Self::Grad, learning_rate: T) {
        for (l, g) in self.layers.iter_mut().zip(grad) {
            l.lora_down.scaled_add(-learning_rate, &g.down);
            l.lora_up.scaled_add(-learning_rate, &g.up);
            l.bias.scaled_add(-learning_rate, &g.bias);
            if let (true, Some(gb)) = (self.train_base, &g.base) {
                l.base_weight.scaled_add(-learning_rate, gb);
            }
        }
    }

    fn trainable_vector(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.lora_down.iter().copied());
            out.extend(l.lora_up.iter().copied());
            out.extend(l.bias.iter().copied());
            if self.train_base {
                out.extend(l.base_weight.iter().copied());
            }
        }
        out
    }

    fn set_trainable_vector(&mut self, values: &[T]) {
        let mut at = 0;
        let train_base = self.train_base;
        for l in &mut self.layers {
            let mut refs: Vec<&mut T> = l
                .lora_down
                .iter_mut()
                .chain(l.lora_up.iter_mut())
                .chain(l.bias.iter_mut())
                .collect();
            if train_base {
                refs.extend(l.base_weight.iter_mut());
            }
            nn::unflatten_from(values, &mut at, &mut refs);
        }
        assert_eq!(at, values.len(), "parameter vector length mismatch");
    }

    fn grad_vector(grad: &Self::Grad) -> Vec<T> {
        let mut out = Vec::new();
        for g in grad {
            out.extend(g.down.iter().copied());
            out.extend(g.up.iter().copied());
            out.extend(g.bias.iter().copied());
            if let Some(b) = &g.base {
                out.extend(b.iter().copied());
            }
        }
        out
    }

    fn trainable_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                lora_layer_params(l.input_dim(), l.output_dim(), l.rank())
                    + if self.train_base {
                        l.base_weight.len()
                    } else {
                        0
                    }
            })
            .sum()
    }
}
