//! In-process federated simulation: profiling, rank negotiation, LoRA rounds
//! with heterogeneous aggregation, and per-round evaluation.
//!
//! Every random draw is keyed by the global seed (see [`crate::seed`]), and
//! client work inside a round is independent of scheduling, so a run is a
//! pure function of its [`ExperimentConfig`] regardless of thread count.

mod artifacts;
mod config;

pub use artifacts::{write_artifacts, ARTIFACT_FILES};
pub use config::{
    ConfigError, DatasetSource, ExperimentConfig, GlobalRank, RankMode, KEYS, KEY_HELP,
};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::complexity::{self, ComplexityError, ComplexityReport, EpochLossTrace, MetricConfig};
use crate::data::{self, DataError, LabeledDataset};
use crate::lora::{
    self, aggregate_hetero, broadcast_truncate, AggregateError, GlobalLoraState, LoraError, LoraNet,
};
use crate::nn::{self, DenseNet, NnError, TrainingConfig};
use crate::rank::{self, RankAssignment, RankError};
use crate::seed::{self, Purpose};
use crate::wire::{self, WireError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Lora(#[from] LoraError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// One participant. `ranks` holds its per-layer LoRA ranks once negotiated.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: String,
    pub shard: LabeledDataset,
    pub report: Option<ComplexityReport<f64>>,
    pub assignment: Option<RankAssignment<f64>>,
    pub ranks: Vec<usize>,
    /// The net as left by the client's latest local training.
    pub lora_net: Option<LoraNet<f64>>,
}

impl ClientState {
    pub fn new(id: impl Into<String>, shard: LabeledDataset) -> Self {
        Self {
            id: id.into(),
            shard,
            report: None,
            assignment: None,
            ranks: Vec::new(),
            lora_net: None,
        }
    }

    /// `p_i`, the aggregation weight.
    pub fn data_volume(&self) -> usize {
        self.shard.len()
    }

    pub fn labels_owned(&self) -> usize {
        self.shard.label_counts().len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Mean local training loss of the round's last epoch, per client.
    pub client_losses: Vec<f64>,
}

impl RoundRecord {
    pub fn mean_client_loss(&self) -> f64 {
        self.client_losses.iter().sum::<f64>() / self.client_losses.len().max(1) as f64
    }
}

/// Loads the configured dataset (before the test split).
pub fn load_dataset(config: &ExperimentConfig) -> Result<LabeledDataset, ExperimentError> {
    match &config.dataset {
        DatasetSource::Blobs {
            classes,
            per_class,
            dim,
            spread,
        } => Ok(data::generate_blobs(
            *classes,
            *per_class,
            *dim,
            *spread,
            config.seed,
        )?),
        DatasetSource::Idx {
            images,
            labels,
            subset,
        } => {
            let full = data::idx::read_idx(images, labels)?;
            if *subset == 0 || *subset >= full.len() {
                return Ok(full);
            }
            let mut idx: Vec<usize> = (0..full.len()).collect();
            idx.shuffle(&mut seed::rng(config.seed, Purpose::Subset, &[]));
            idx.truncate(*subset);
            idx.sort_unstable();
            let mut sub = full.subset(&idx);
            sub.classes = full.classes;
            Ok(sub)
        }
    }
}

/// Global LoRA rank of every layer of a net with layer widths `dims`.
pub fn global_ranks(dims: &[usize], global: GlobalRank) -> Vec<usize> {
    dims.windows(2)
        .map(|w| {
            let limit = w[0].min(w[1]);
            match global {
                GlobalRank::Auto => lora::break_even_rank(w[0], w[1]).min(limit),
                GlobalRank::Fixed(r) => r.min(limit),
            }
            .max(1)
        })
        .collect()
}

fn training_config(config: &ExperimentConfig, epochs: usize) -> TrainingConfig<f64> {
    TrainingConfig {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        epochs,
        seed: config.seed,
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ExperimentError::ThreadPool(e.to_string()))
}

/// Data, clients and the shared base net of one experiment.
pub struct Federation {
    pub config: ExperimentConfig,
    /// Layer widths: input, hidden..., classes.
    pub dims: Vec<usize>,
    pub global_ranks: Vec<usize>,
    pub clients: Vec<ClientState>,
    pub test: LabeledDataset,
    pub base: DenseNet<f64>,
    pool: rayon::ThreadPool,
}

impl Federation {
    /// Loads and splits the data and creates one client per shard.
    /// `threads = 0` lets the pool pick the core count.
    pub fn new(config: ExperimentConfig, threads: usize) -> Result<Self, ExperimentError> {
        config.validate()?;
        let dataset = load_dataset(&config)?;
        let (train_idx, test_idx) =
            data::stratified_split(&dataset, config.test_fraction, config.seed)?;
        if test_idx.is_empty() {
            return Err(DataError::InvalidParams("test split is empty".into()).into());
        }
        let train = dataset.subset(&train_idx);
        let test = dataset.subset(&test_idx);
        let shards = data::partition(&train, &config.partition_spec(config.seed))?;
        let clients = shards
            .iter()
            .enumerate()
            .map(|(i, idx)| ClientState::new(format!("client_{i}"), train.subset(idx)))
            .collect();
        Self::from_clients(config, clients, test, threads)
    }

    /// Builds a federation over caller-supplied shards.
    pub fn from_clients(
        config: ExperimentConfig,
        clients: Vec<ClientState>,
        test: LabeledDataset,
        threads: usize,
    ) -> Result<Self, ExperimentError> {
        if clients.is_empty() {
            return Err(DataError::InvalidParams("no clients".into()).into());
        }
        let dims: Vec<usize> = std::iter::once(test.dim())
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(test.classes))
            .collect();
        let base = nn::init_net(&dims, seed::derive(config.seed, Purpose::BaseInit, &[]))?;
        Ok(Self {
            global_ranks: global_ranks(&dims, config.global_rank),
            dims,
            clients,
            test,
            base,
            pool: pool(threads)?,
            config,
        })
    }

    /// Largest per-layer global rank; the `R_g` that ranks.csv refers to.
    pub fn reference_rank(&self) -> usize {
        self.global_ranks.iter().copied().max().unwrap_or(1)
    }

    /// Each client trains a fresh full-parameter net for the profiling
    /// epochs, then reports its complexity metrics. The nets are dropped.
    pub fn profile_clients(&mut self) -> Result<Vec<ComplexityReport<f64>>, ExperimentError> {
        let config = &self.config;
        let dims = &self.dims;
        let reports: Vec<Result<ComplexityReport<f64>, ExperimentError>> =
            self.pool.install(|| {
                self.clients
                    .par_iter()
                    .map(|c| profile_one(c, dims, config))
                    .collect()
            });
        let reports = reports.into_iter().collect::<Result<Vec<_>, _>>()?;
        for (c, r) in self.clients.iter_mut().zip(&reports) {
            c.report = Some(r.clone());
        }
        Ok(reports)
    }

    /// Turns reports into rank ratios per the configured mode and fixes every
    /// client's per-layer ranks. Called once, before the first round.
    pub fn negotiate_ranks(
        &mut self,
        reports: &[ComplexityReport<f64>],
    ) -> Result<Vec<RankAssignment<f64>>, ExperimentError> {
        let labels: Vec<usize> = self.clients.iter().map(ClientState::labels_owned).collect();
        let assignments = negotiate_ranks(reports, &labels, &self.config, self.reference_rank())?;
        for (c, a) in self.clients.iter_mut().zip(&assignments) {
            c.ranks = self
                .global_ranks
                .iter()
                .map(|&g| rank::rank_for_ratio(g, a.rank_ratio))
                .collect();
            c.assignment = Some(a.clone());
        }
        Ok(assignments)
    }

    /// Fresh global adapters at the global ranks over the shared base.
    pub fn initial_state(&self) -> Result<GlobalLoraState<f64>, ExperimentError> {
        let mut net = lora::lora_init_with_ranks(
            &self.base,
            &self.global_ranks,
            seed::derive(self.config.seed, Purpose::LoraInit, &[]),
        )?;
        net.set_train_base(self.config.train_base);
        Ok(net.state())
    }

    /// Broadcast, local training on every client, heterogeneous aggregation
    /// weighted by data volume, and evaluation of the new global model.
    pub fn run_round(
        &mut self,
        global: &GlobalLoraState<f64>,
        round: usize,
    ) -> Result<(GlobalLoraState<f64>, RoundRecord), ExperimentError> {
        if let Some(c) = self
            .clients
            .iter()
            .find(|c| c.ranks.len() != self.global_ranks.len())
        {
            return Err(ConfigError::Invalid(format!("{} has no negotiated ranks", c.id)).into());
        }
        let config = &self.config;
        let base = &self.base;
        let results: Vec<Result<f64, ExperimentError>> = self.pool.install(|| {
            self.clients
                .par_iter_mut()
                .map(|c| train_local(c, base, global, config, round))
                .collect()
        });
        let client_losses = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let states: Vec<_> = self
            .clients
            .iter()
            .map(|c| c.lora_net.as_ref().expect("trained this round").state())
            .collect();
        let weighted: Vec<_> = states
            .iter()
            .zip(&self.clients)
            .map(|(s, c)| (s, c.data_volume() as f64))
            .collect();
        let next = aggregate_hetero(&weighted, &self.global_ranks)?;
        let (test_accuracy, test_loss) = self.evaluate(&next)?;
        Ok((
            next,
            RoundRecord {
                round,
                test_accuracy,
                test_loss,
                client_losses,
            },
        ))
    }

    /// Test accuracy and loss of the base net carrying `state`.
    pub fn evaluate(&self, state: &GlobalLoraState<f64>) -> Result<(f64, f64), ExperimentError> {
        let net = LoraNet::from_state(&self.base, state)?;
        Ok(nn::evaluate(&net, self.test.features(), &self.test.labels)?)
    }

    /// Trainable parameters summed over clients at their negotiated ranks.
    pub fn total_trainable_params(&self) -> usize {
        let base_per_client: usize = if self.config.train_base {
            self.dims.windows(2).map(|w| w[0] * w[1]).sum()
        } else {
            0
        };
        self.clients
            .iter()
            .map(|c| {
                self.dims
                    .windows(2)
                    .zip(&c.ranks)
                    .map(|(w, &r)| lora::lora_layer_params(w[0], w[1], r))
                    .sum::<usize>()
                    + base_per_client
            })
            .sum()
    }
}

fn profile_one(
    client: &ClientState,
    dims: &[usize],
    config: &ExperimentConfig,
) -> Result<ComplexityReport<f64>, ExperimentError> {
    let mut net = nn::init_net::<f64>(dims, seed::derive(config.seed, Purpose::ProfileInit, &[]))?;
    let cfg = training_config(config, 1);
    let losses = (0..config.profiling_epochs)
        .map(|e| {
            let epoch_cfg = cfg.with_seed(seed::derive(
                config.seed,
                Purpose::ProfileShuffle,
                &[e as u64],
            ));
            nn::train_epoch(
                &mut net,
                client.shard.features(),
                &client.shard.labels,
                &epoch_cfg,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let trace = EpochLossTrace::new(losses)?;
    Ok(ComplexityReport::compute(
        client.id.clone(),
        &trace,
        &client.shard.histogram(),
    )?)
}

fn train_local(
    client: &mut ClientState,
    base: &DenseNet<f64>,
    global: &GlobalLoraState<f64>,
    config: &ExperimentConfig,
    round: usize,
) -> Result<f64, ExperimentError> {
    let local = broadcast_truncate(global, &client.ranks)?;
    let mut net = LoraNet::from_state(base, &local)?;
    let cfg = training_config(config, 1);
    let mut loss = 0.0;
    for e in 0..config.local_epochs {
        let epoch_cfg = cfg.with_seed(seed::derive(
            config.seed,
            Purpose::Shuffle,
            &[round as u64, e as u64],
        ));
        loss = nn::train_epoch(
            &mut net,
            client.shard.features(),
            &client.shard.labels,
            &epoch_cfg,
        )?;
    }
    client.lora_net = Some(net);
    Ok(loss)
}

/// Server side of rank negotiation. Reports pass through the complexity CSV
/// encoding first, so the result equals what `assign-ranks` computes from
/// the written `complexity.csv`.
///
/// * AutoRank: metric matrix → CRITIC → TOPSIS → floored ratios.
/// * Homogeneous: every client gets `rank_ratio`.
/// * Manual: `0.1 ×` labels owned, clamped to `[floor, 1]`.
///
/// The baselines still carry fine-grain TOPSIS closeness for reporting.
pub fn negotiate_ranks(
    reports: &[ComplexityReport<f64>],
    labels_owned: &[usize],
    config: &ExperimentConfig,
    reference_rank: usize,
) -> Result<Vec<RankAssignment<f64>>, ExperimentError> {
    let reports = wire_round_trip(reports)?;
    let metric = match config.mode {
        RankMode::AutoRank(m) => m,
        _ => MetricConfig::FineGrain,
    };
    let matrix = complexity::build_decision_matrix(&reports, metric)?;
    let mut assignments = rank::assign_ranks(&matrix, reference_rank, config.floor)?;
    let fixed: Option<Vec<f64>> = match config.mode {
        RankMode::AutoRank(_) => None,
        RankMode::Homogeneous => Some(vec![config.rank_ratio; reports.len()]),
        RankMode::ManualPerLabel => {
            if labels_owned.len() != reports.len() {
                return Err(
                    ConfigError::Invalid("label counts do not match reports".into()).into(),
                );
            }
            Some(
                labels_owned
                    .iter()
                    .map(|&l| (l as f64 / 10.0).clamp(config.floor, 1.0))
                    .collect(),
            )
        }
    };
    if let Some(ratios) = fixed {
        for (a, r) in assignments.iter_mut().zip(ratios) {
            a.rank_ratio = r;
            a.rank = rank::rank_for_ratio(reference_rank, r);
        }
    }
    Ok(assignments)
}

fn wire_round_trip(
    reports: &[ComplexityReport<f64>],
) -> Result<Vec<ComplexityReport<f64>>, WireError> {
    let mut buf = Vec::new();
    wire::write_complexity_csv(&mut buf, reports)?;
    wire::read_complexity_csv(buf.as_slice())
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub dims: Vec<usize>,
    pub global_ranks: Vec<usize>,
    pub reference_rank: usize,
    pub reports: Vec<ComplexityReport<f64>>,
    pub assignments: Vec<RankAssignment<f64>>,
    /// Per-layer ranks of every client.
    pub client_ranks: Vec<Vec<usize>>,
    pub data_volumes: Vec<usize>,
    pub similarity: Array2<f64>,
    pub records: Vec<RoundRecord>,
    pub total_trainable_params: usize,
    pub final_state: GlobalLoraState<f64>,
}

impl ExperimentOutcome {
    pub fn test_accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.test_accuracy).collect()
    }

    pub fn smoothed_accuracies(&self) -> Vec<f64> {
        wire::smooth(&self.test_accuracies(), wire::SMOOTHING_WINDOW)
    }

    pub fn best_smoothed_accuracy(&self) -> f64 {
        self.smoothed_accuracies().into_iter().fold(0.0, f64::max)
    }

    /// Highest raw accuracy and the first round reaching it.
    pub fn best_accuracy(&self) -> (f64, usize) {
        best_of(&self.test_accuracies())
    }
}

/// Maximum and its 1-based position (first occurrence).
pub fn best_of(values: &[f64]) -> (f64, usize) {
    values
        .iter()
        .enumerate()
        .fold((f64::NEG_INFINITY, 0), |(bv, br), (i, &v)| {
            if v > bv {
                (v, i + 1)
            } else {
                (bv, br)
            }
        })
}

/// Ranks from an existing set of reports, as the `profile` → `assign-ranks`
/// pipeline would produce them.
pub fn profile(
    config: &ExperimentConfig,
    threads: usize,
) -> Result<Vec<ComplexityReport<f64>>, ExperimentError> {
    Federation::new(config.clone(), threads)?.profile_clients()
}

/// Profile → negotiate → `rounds` federated rounds.
pub fn run_experiment(
    config: &ExperimentConfig,
    threads: usize,
) -> Result<ExperimentOutcome, ExperimentError> {
    let mut fed = Federation::new(config.clone(), threads)?;
    let reports = fed.profile_clients()?;
    let assignments = fed.negotiate_ranks(&reports)?;
    let mut state = fed.initial_state()?;
    let mut records = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let (next, record) = fed.run_round(&state, round)?;
        log::debug!(
            "round {round}: accuracy {:.4}, loss {:.4}",
            record.test_accuracy,
            record.test_loss
        );
        state = next;
        records.push(record);
    }
    Ok(ExperimentOutcome {
        config: config.clone(),
        dims: fed.dims.clone(),
        global_ranks: fed.global_ranks.clone(),
        reference_rank: fed.reference_rank(),
        similarity: rank::rank_similarity_matrix(&assignments),
        client_ranks: fed.clients.iter().map(|c| c.ranks.clone()).collect(),
        data_volumes: fed.clients.iter().map(ClientState::data_volume).collect(),
        total_trainable_params: fed.total_trainable_params(),
        reports,
        assignments,
        records,
        final_state: state,
    })
}
