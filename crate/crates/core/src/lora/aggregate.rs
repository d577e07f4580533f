use ndarray::{s, Array, Array2, Dimension};
use thiserror::Error;

use super::{AdapterLayer, LoraState};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("client {client} layer {layer} has rank {rank} above the global rank {global}")]
    RankExceedsGlobal {
        client: usize,
        layer: usize,
        rank: usize,
        global: usize,
    },
    #[error("total data volume is zero")]
    ZeroTotalVolume,
    #[error("client {0} has a negative or non-finite data volume")]
    InvalidVolume(usize),
    #[error("no client states to aggregate")]
    NoClients,
    #[error("client {client} does not match the layer layout: {reason}")]
    LayoutMismatch { client: usize, reason: String },
}

/// `Σ w_i x_i / Σ w_i` over equally shaped arrays.
pub fn weighted_average<T: Scalar, D: Dimension>(items: &[(&Array<T, D>, T)]) -> Array<T, D> {
    let total: T = items.iter().map(|&(_, w)| w).sum();
    let mut out = Array::zeros(items[0].0.raw_dim());
    for &(x, w) in items {
        out.scaled_add(w / total, x);
    }
    out
}

fn check_layout<T: Scalar>(
    clients: &[(&LoraState<T>, T)],
    global_ranks: &[usize],
) -> Result<(), AggregateError> {
    let (first, _) = clients.first().ok_or(AggregateError::NoClients)?;
    let n_layers = global_ranks.len();
    for (c, (state, volume)) in clients.iter().enumerate() {
        if !volume.is_finite() || *volume < T::zero() {
            return Err(AggregateError::InvalidVolume(c));
        }
        if state.layers.len() != n_layers {
            return Err(AggregateError::LayoutMismatch {
                client: c,
                reason: format!("{} layers, expected {n_layers}", state.layers.len()),
            });
        }
        for (l, (layer, ref_layer)) in state.layers.iter().zip(&first.layers).enumerate() {
            if layer.input_dim() != ref_layer.input_dim()
                || layer.output_dim() != ref_layer.output_dim()
                || layer.bias.len() != layer.output_dim()
                || layer.up.ncols() != layer.rank()
            {
                return Err(AggregateError::LayoutMismatch {
                    client: c,
                    reason: format!("layer {l} shape"),
                });
            }
            if layer.base.is_some() != ref_layer.base.is_some() {
                return Err(AggregateError::LayoutMismatch {
                    client: c,
                    reason: format!("layer {l} base presence"),
                });
            }
            if layer.rank() > global_ranks[l] {
                return Err(AggregateError::RankExceedsGlobal {
                    client: c,
                    layer: l,
                    rank: layer.rank(),
                    global: global_ranks[l],
                });
            }
        }
    }
    let total: T = clients.iter().map(|&(_, v)| v).sum();
    if total <= T::zero() {
        return Err(AggregateError::ZeroTotalVolume);
    }
    Ok(())
}

/// Lossless aggregation of adapters with unequal ranks.
///
/// Row `k` of the global `A` (and column `k` of the global `B`) is the
/// volume-weighted mean over the clients whose rank exceeds `k`, with the
/// weights renormalized over those owners. Slices no client owns stay zero.
/// Biases (and shared base weights, when trained) are plain volume-weighted
/// means over all clients.
pub fn aggregate_hetero<T: Scalar>(
    clients: &[(&LoraState<T>, T)],
    global_ranks: &[usize],
) -> Result<LoraState<T>, AggregateError> {
    check_layout(clients, global_ranks)?;
    let layers = global_ranks
        .iter()
        .enumerate()
        .map(|(l, &global)| {
            let first = &clients[0].0.layers[l];
            let (input_dim, output_dim) = (first.input_dim(), first.output_dim());
            let mut down = Array2::zeros((global, input_dim));
            let mut up = Array2::zeros((output_dim, global));
            for k in 0..global {
                let owners: Vec<(&AdapterLayer<T>, T)> = clients
                    .iter()
                    .map(|(s, v)| (&s.layers[l], *v))
                    .filter(|(layer, _)| layer.rank() > k)
                    .collect();
                let mass: T = owners.iter().map(|&(_, v)| v).sum();
                if owners.is_empty() || mass <= T::zero() {
                    continue;
                }
                for (layer, v) in &owners {
                    let w = *v / mass;
                    down.row_mut(k).scaled_add(w, &layer.down.row(k));
                    up.column_mut(k).scaled_add(w, &layer.up.column(k));
                }
            }
            let bias = weighted_average(
                &clients
                    .iter()
                    .map(|(s, v)| (&s.layers[l].bias, *v))
                    .collect::<Vec<_>>(),
            );
            let base = first.base.as_ref().map(|_| {
                weighted_average(
                    &clients
                        .iter()
                        .map(|(s, v)| (s.layers[l].base.as_ref().expect("checked presence"), *v))
                        .collect::<Vec<_>>(),
                )
            });
            AdapterLayer {
                down,
                up,
                bias,
                base,
            }
        })
        .collect();
    Ok(LoraState { layers })
}

/// First `ranks[l]` rows of `A` and columns of `B` for every layer.
pub fn broadcast_truncate<T: Scalar>(
    global: &LoraState<T>,
    ranks: &[usize],
) -> Result<LoraState<T>, AggregateError> {
    if ranks.len() != global.layers.len() {
        return Err(AggregateError::LayoutMismatch {
            client: 0,
            reason: format!("{} ranks for {} layers", ranks.len(), global.layers.len()),
        });
    }
    let layers = global
        .layers
        .iter()
        .zip(ranks)
        .enumerate()
        .map(|(l, (g, &r))| {
            if r > g.rank() {
                return Err(AggregateError::RankExceedsGlobal {
                    client: 0,
                    layer: l,
                    rank: r,
                    global: g.rank(),
                });
            }
            Ok(AdapterLayer {
                down: g.down.slice(s![..r, ..]).to_owned(),
                up: g.up.slice(s![.., ..r]).to_owned(),
                bias: g.bias.clone(),
                base: g.base.clone(),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(LoraState { layers })
}

/// Zero-pads every layer of `state` up to `ranks`.
pub fn pad_to<T: Scalar>(
    state: &LoraState<T>,
    ranks: &[usize],
) -> Result<LoraState<T>, AggregateError> {
    aggregate_hetero(&[(state, T::one())], ranks)
}
