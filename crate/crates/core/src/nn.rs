//! Dense ReLU networks with a softmax cross-entropy head, trained by plain
//! mini-batch SGD with hand-written backpropagation.
//!
//! The [`Network`] trait is shared with the LoRA-adapted nets so training,
//! evaluation and gradient checking are written once.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use thiserror::Error;

use crate::seed::{self, Purpose};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("training shard is empty")]
    EmptyShard,
    #[error("evaluation dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `out × in`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Hidden layers use ReLU, the last layer feeds a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    layers: Vec<DenseLayer<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig<T> {
    pub learning_rate: T,
    pub batch_size: usize,
    pub epochs: usize,
    /// Shuffle seed. [`train_epoch`] uses it as is; [`train`] derives one
    /// stream per epoch from it.
    pub seed: u64,
}

impl<T: Scalar> TrainingConfig<T> {
    pub fn validate(&self) -> Result<(), NnError> {
        if !self.learning_rate.is_finite() || self.learning_rate < T::zero() {
            return Err(NnError::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig(
                "batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn check_dims(dims: &[usize]) -> Result<(), NnError> {
    if dims.len() < 2 {
        return Err(NnError::InvalidSpec(format!(
            "need at least input and output dims, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(NnError::InvalidSpec(format!(
            "zero-width layer in {dims:?}"
        )));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases. Identical `(dims, seed)` give
/// bit-identical nets.
pub fn init_net<T: Scalar>(dims: &[usize], seed: u64) -> Result<DenseNet<T>, NnError> {
    check_dims(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            let weight =
                Array2::from_shape_simple_fn((fan_out, fan_in), || T::of(dist.sample(&mut rng)));
            DenseLayer {
                weight,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(DenseNet { layers })
}

impl<T: Scalar> DenseNet<T> {
    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidSpec("no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(NnError::InvalidSpec(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(NnError::InvalidSpec(format!(
                    "layer {i} bias length mismatch"
                )));
            }
        }
        Ok(Self { layers })
    }

    /// A net whose every parameter is zero; it predicts the uniform
    /// distribution.
    pub fn zeros(dims: &[usize]) -> Result<Self, NnError> {
        check_dims(dims)?;
        Ok(Self {
            layers: dims
                .windows(2)
                .map(|w| DenseLayer {
                    weight: Array2::zeros((w[1], w[0])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
        })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].input_dim()];
        d.extend(self.layers.iter().map(DenseLayer::output_dim));
        d
    }

    fn views(&self) -> Vec<(ArrayView2<'_, T>, ArrayView1<'_, T>)> {
        self.layers
            .iter()
            .map(|l| (l.weight.view(), l.bias.view()))
            .collect()
    }
}

/// Cached activations of one forward pass.
pub(crate) struct ForwardCache<T> {
    /// Input fed to each layer (`inputs[0]` is the batch itself).
    inputs: Vec<Array2<T>>,
    /// Pre-activations of every layer; the last one holds the logits.
    pre: Vec<Array2<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    fn logits(&self) -> &Array2<T> {
        self.pre.last().expect("at least one layer")
    }
}

fn relu<T: Scalar>(z: &Array2<T>) -> Array2<T> {
    z.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

pub(crate) fn check_batch<T: Scalar>(
    x: ArrayView2<T>,
    labels: Option<&[usize]>,
    input_dim: usize,
    classes: usize,
) -> Result<(), NnError> {
    if x.ncols() != input_dim {
        return Err(NnError::DimensionMismatch {
            expected: input_dim,
            found: x.ncols(),
        });
    }
    if let Some(labels) = labels {
        if labels.len() != x.nrows() {
            return Err(NnError::DimensionMismatch {
                expected: x.nrows(),
                found: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
    }
    Ok(())
}

pub(crate) fn forward_pass<T: Scalar>(
    layers: &[(ArrayView2<T>, ArrayView1<T>)],
    x: ArrayView2<T>,
) -> ForwardCache<T> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut a = x.to_owned();
    for (i, (w, b)) in layers.iter().enumerate() {
        let z = a.dot(&w.t()) + b;
        let next = if i + 1 < layers.len() {
            relu(&z)
        } else {
            Array2::zeros((0, 0))
        };
        inputs.push(a);
        pre.push(z);
        a = next;
    }
    ForwardCache { inputs, pre }
}

/// Row-wise max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy of integer labels under the softmax of `logits`.
pub fn cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[usize]) -> T {
    let total: T = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            lse - row[y]
        })
        .sum();
    total / T::of(labels.len() as f64)
}

/// Loss and per-layer gradients of the mean cross-entropy.
pub(crate) fn backward_pass<T: Scalar>(
    layers: &[(ArrayView2<T>, ArrayView1<T>)],
    x: ArrayView2<T>,
    labels: &[usize],
) -> (T, Vec<LayerGrad<T>>) {
    let cache = forward_pass(layers, x);
    let loss = cross_entropy(cache.logits(), labels);
    let batch = T::of(labels.len() as f64);

    let mut delta = softmax(cache.logits());
    for (mut row, &y) in delta.axis_iter_mut(Axis(0)).zip(labels) {
        row[y] = row[y] - T::one();
    }
    delta.mapv_inplace(|v| v / batch);

    let mut grads = Vec::with_capacity(layers.len());
    for i in (0..layers.len()).rev() {
        let weight = delta.t().dot(&cache.inputs[i]);
        let bias = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut prev = delta.dot(&layers[i].0);
            ndarray::Zip::from(&mut prev)
                .and(&cache.pre[i - 1])
                .for_each(|d, &z| {
                    if z <= T::zero() {
                        *d = T::zero();
                    }
                });
            delta = prev;
        }
        grads.push(LayerGrad { weight, bias });
    }
    grads.reverse();
    (loss, grads)
}

pub(crate) fn forward_probs<T: Scalar>(
    layers: &[(ArrayView2<T>, ArrayView1<T>)],
    x: ArrayView2<T>,
) -> Array2<T> {
    softmax(forward_pass(layers, x).logits())
}

/// A classifier trainable by [`train_epoch`].
pub trait Network<T: Scalar>: Clone + Send + Sync {
    type Grad;

    fn input_dim(&self) -> usize;
    fn classes(&self) -> usize;

    fn probabilities(&self, x: ArrayView2<T>) -> Result<Array2<T>, NnError>;

    /// Mean cross-entropy over the batch and its gradient w.r.t. every
    /// trainable parameter.
    fn loss_and_grad(&self, x: ArrayView2<T>, labels: &[usize])
        -> Result<(T, Self::Grad), NnError>;

    fn loss(&self, x: ArrayView2<T>, labels: &[usize]) -> Result<T, NnError> {
        self.loss_and_grad(x, labels).map(|(l, _)| l)
    }

    fn sgd_step(&mut self, grad: &Self::Grad, learning_rate: T);

    /// Trainable parameters flattened in a fixed order.
    fn trainable_vector(&self) -> Vec<T>;
    fn set_trainable_vector(&mut self, values: &[T]);
    /// Gradient flattened in the same order as [`Network::trainable_vector`].
    fn grad_vector(grad: &Self::Grad) -> Vec<T>;

    fn trainable_count(&self) -> usize {
        self.trainable_vector().len()
    }
}

pub(crate) fn flatten_into<T: Scalar>(out: &mut Vec<T>, w: &Array2<T>, b: &Array1<T>) {
    out.extend(w.iter().copied());
    out.extend(b.iter().copied());
}

pub(crate) fn unflatten_from<T: Scalar>(values: &[T], at: &mut usize, target: &mut [&mut T]) {
    for t in target.iter_mut() {
        **t = values[*at];
        *at += 1;
    }
}

impl<T: Scalar> Network<T> for DenseNet<T> {
    type Grad = Vec<LayerGrad<T>>;

    fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    fn classes(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    fn probabilities(&self, x: ArrayView2<T>) -> Result<Array2<T>, NnError> {
        check_batch(x, None, self.input_dim(), self.classes())?;
        Ok(forward_probs(&self.views(), x))
    }

    fn loss_and_grad(
        &self,
        x: ArrayView2<T>,
        labels: &[usize],
    ) -> Result<(T, Self::Grad), NnError> {
        check_batch(x, Some(labels), self.input_dim(), self.classes())?;
        if labels.is_empty() {
            return Err(NnError::EmptyShard);
        }
        Ok(backward_pass(&self.views(), x, labels))
    }

    fn sgd_step(&mut self, grad: &Self::Grad, learning_rate: T) {
        for (layer, g) in self.layers.iter_mut().zip(grad) {
            layer.weight.scaled_add(-learning_rate, &g.weight);
            layer.bias.scaled_add(-learning_rate, &g.bias);
        }
    }

    fn trainable_vector(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            flatten_into(&mut out, &l.weight, &l.bias);
        }
        out
    }

    fn set_trainable_vector(&mut self, values: &[T]) {
        let mut at = 0;
        for l in &mut self.layers {
            let mut refs: Vec<&mut T> = l.weight.iter_mut().chain(l.bias.iter_mut()).collect();
            unflatten_from(values, &mut at, &mut refs);
        }
        assert_eq!(at, values.len(), "parameter vector length mismatch");
    }

    fn grad_vector(grad: &Self::Grad) -> Vec<T> {
        let mut out = Vec::new();
        for g in grad {
            flatten_into(&mut out, &g.weight, &g.bias);
        }
        out
    }

    fn trainable_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }
}

/// One pass over `features`/`labels` in seeded Fisher-Yates order, one SGD
/// step per mini-batch. Returns the mean of the per-batch losses.
pub fn train_epoch<T: Scalar, N: Network<T>>(
    net: &mut N,
    features: ArrayView2<T>,
    labels: &[usize],
    config: &TrainingConfig<T>,
) -> Result<T, NnError> {
    config.validate()?;
    if labels.is_empty() || features.nrows() == 0 {
        return Err(NnError::EmptyShard);
    }
    check_batch(features, Some(labels), net.input_dim(), net.classes())?;

    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    let mut loss_sum = T::zero();
    let mut batches = 0usize;
    for chunk in order.chunks(config.batch_size) {
        let x = features.select(Axis(0), chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let (loss, grad) = net.loss_and_grad(x.view(), &y)?;
        net.sgd_step(&grad, config.learning_rate);
        loss_sum = loss_sum + loss;
        batches += 1;
    }
    Ok(loss_sum / T::of(batches as f64))
}

/// Runs `config.epochs` epochs, epoch `e` shuffling with a stream derived
/// from `(config.seed, e)`. Returns the mean loss of every epoch.
pub fn train<T: Scalar, N: Network<T>>(
    net: &mut N,
    features: ArrayView2<T>,
    labels: &[usize],
    config: &TrainingConfig<T>,
) -> Result<Vec<T>, NnError> {
    (0..config.epochs)
        .map(|e| {
            let epoch_cfg =
                config.with_seed(seed::derive(config.seed, Purpose::Shuffle, &[e as u64]));
            train_epoch(net, features, labels, &epoch_cfg)
        })
        .collect()
}

const EVAL_CHUNK: usize = 1024;

/// Accuracy and mean cross-entropy. Ties in the argmax go to the lowest
/// class index.
pub fn evaluate<T: Scalar, N: Network<T>>(
    net: &N,
    features: ArrayView2<T>,
    labels: &[usize],
) -> Result<(f64, f64), NnError> {
    if labels.is_empty() || features.nrows() == 0 {
        return Err(NnError::EmptyDataset);
    }
    check_batch(features, Some(labels), net.input_dim(), net.classes())?;
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    for (start, y) in (0..labels.len())
        .step_by(EVAL_CHUNK)
        .zip(labels.chunks(EVAL_CHUNK))
    {
        let x = features.slice(ndarray::s![start..start + y.len(), ..]);
        let probs = net.probabilities(x)?;
        for (row, &label) in probs.axis_iter(Axis(0)).zip(y) {
            if argmax(row) == label {
                correct += 1;
            }
        }
        loss_sum += net.loss(x, y)?.as_f64() * y.len() as f64;
    }
    let n = labels.len() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}

pub fn argmax<T: Scalar>(row: ArrayView1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub const GRADIENT_CHECK_STEP: f64 = 1e-5;
pub const GRADIENT_CHECK_TOLERANCE: f64 = 1e-4;
const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Central finite-difference gradient of the batch loss.
pub fn numeric_gradient<T: Scalar, N: Network<T>>(
    net: &N,
    x: ArrayView2<T>,
    labels: &[usize],
    step: T,
) -> Result<Vec<T>, NnError> {
    let base = net.trainable_vector();
    let mut probe = net.clone();
    let mut params = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        params[i] = base[i] + step;
        probe.set_trainable_vector(&params);
        let up = probe.loss(x, labels)?;
        params[i] = base[i] - step;
        probe.set_trainable_vector(&params);
        let down = probe.loss(x, labels)?;
        params[i] = base[i];
        out.push((up - down) / (step + step));
    }
    Ok(out)
}

/// `max_i |a_i - n_i| / max(|a_i| + |n_i|, 1e-6)`.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let (a, n) = (a.as_f64(), n.as_f64());
            (a - n).abs() / (a.abs() + n.abs()).max(RELATIVE_ERROR_FLOOR)
        })
        .fold(0.0, f64::max)
}

/// Maximum relative error between backprop and central differences
/// (step `1e-5`) over every trainable parameter. Meant for small nets
/// (dims ≤ 16, batch ≤ 8); passes when below [`GRADIENT_CHECK_TOLERANCE`].
pub fn gradient_check<T: Scalar, N: Network<T>>(
    net: &N,
    x: ArrayView2<T>,
    labels: &[usize],
) -> Result<f64, NnError> {
    let (_, grad) = net.loss_and_grad(x, labels)?;
    let analytic = N::grad_vector(&grad);
    let numeric = numeric_gradient(net, x, labels, T::of(GRADIENT_CHECK_STEP))?;
    Ok(max_relative_error(&analytic, &numeric))
}
