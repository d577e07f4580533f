//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, and
//! [`ExperimentConfig::to_pairs`] echoes the fully resolved set in canonical
//! order.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::complexity::MetricConfig;
use crate::data::{PartitionScheme, PartitionSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {0:?} given twice")]
    DuplicateKey(String),
    #[error("invalid value {value:?} for {key}: {message}")]
    InvalidValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Seeded random subset size; 0 keeps every sample.
        subset: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankMode {
    AutoRank(MetricConfig),
    Homogeneous,
    ManualPerLabel,
}

impl RankMode {
    pub fn name(self) -> &'static str {
        match self {
            RankMode::AutoRank(MetricConfig::FineGrain) => "autorank_finegrain",
            RankMode::AutoRank(MetricConfig::Alternative1) => "autorank_alt1",
            RankMode::AutoRank(MetricConfig::Alternative2) => "autorank_alt2",
            RankMode::Homogeneous => "homogeneous",
            RankMode::ManualPerLabel => "manual_per_label",
        }
    }
}

impl FromStr for RankMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "autorank_finegrain" | "autorank" => RankMode::AutoRank(MetricConfig::FineGrain),
            "autorank_alt1" => RankMode::AutoRank(MetricConfig::Alternative1),
            "autorank_alt2" => RankMode::AutoRank(MetricConfig::Alternative2),
            "homogeneous" => RankMode::Homogeneous,
            "manual_per_label" => RankMode::ManualPerLabel,
            other => return Err(format!("unknown rank mode {other:?}")),
        })
    }
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Global LoRA rank per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalRank {
    /// `ceil(in·out / (in + out))`, the parameter break-even rank.
    Auto,
    /// The same rank for every layer, capped at `min(in, out)`.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub test_fraction: f64,
    pub partition: PartitionScheme,
    pub clients: usize,
    pub per_label_quota: usize,
    pub anchor_multiplier: usize,
    pub mode: RankMode,
    pub rank_ratio: f64,
    pub global_rank: GlobalRank,
    pub floor: f64,
    pub hidden: Vec<usize>,
    pub profiling_epochs: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_base: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Blobs {
                classes: 10,
                per_class: 400,
                dim: 16,
                spread: 0.15,
            },
            test_fraction: 0.2,
            partition: PartitionScheme::Staircase,
            clients: 10,
            per_label_quota: 20,
            anchor_multiplier: 5,
            mode: RankMode::AutoRank(MetricConfig::FineGrain),
            rank_ratio: 1.0,
            global_rank: GlobalRank::Auto,
            floor: 0.1,
            hidden: vec![32, 32],
            profiling_epochs: 5,
            rounds: 100,
            local_epochs: 1,
            learning_rate: 0.05,
            batch_size: 16,
            train_base: false,
            seed: 42,
        }
    }
}

/// Canonical keys, in manifest order.
pub const KEYS: &[&str] = &[
    "dataset",
    "blob_classes",
    "blob_per_class",
    "blob_dim",
    "blob_spread",
    "idx_images",
    "idx_labels",
    "idx_subset",
    "test_fraction",
    "partition",
    "clients",
    "per_label_quota",
    "anchor_multiplier",
    "mode",
    "rank_ratio",
    "global_rank",
    "floor",
    "hidden",
    "profiling_epochs",
    "rounds",
    "local_epochs",
    "learning_rate",
    "batch_size",
    "train_base",
    "seed",
];

/// One line of help per key, shown by `--help`.
pub const KEY_HELP: &str = "\
config keys (key = value, # comments):
  dataset           blobs | idx                                  [blobs]
  blob_classes      classes of the synthetic blobs                [10]
  blob_per_class    samples per class                             [400]
  blob_dim          feature dimension                             [16]
  blob_spread       Gaussian spread around each center            [0.15]
  idx_images        IDX image file (dataset = idx)
  idx_labels        IDX label file (dataset = idx)
  idx_subset        random subset size, 0 = all                   [0]
  test_fraction     held-out stratified test share                [0.2]
  partition         staircase | two_client | iid                  [staircase]
  clients           number of clients                             [10]
  per_label_quota   samples per (client, label)                   [20]
  anchor_multiplier volume multiplier of the last stair-case client [5]
  mode              autorank_finegrain | autorank_alt1 | autorank_alt2 |
                    homogeneous | manual_per_label                [autorank_finegrain]
  rank_ratio        ratio for homogeneous mode                    [1.0]
  global_rank       auto | integer                                [auto]
  floor             minimum rank ratio                            [0.1]
  hidden            hidden layer widths, comma separated          [32,32]
  profiling_epochs  epochs of the profiling run                   [5]
  rounds            federated rounds                              [100]
  local_epochs      client epochs per round                       [1]
  learning_rate     SGD step size                                 [0.05]
  batch_size        mini-batch size                               [16]
  train_base        also train the shared base weights            [false]
  seed              global seed                                   [42]";

fn invalid(key: &str, value: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        message: message.into(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| invalid(key, value, e.to_string()))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey(key.into()));
            }
            config.set(key, value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies one `key = value` assignment (also used for CLI overrides).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "dataset" => match value {
                "blobs" => {
                    if !matches!(self.dataset, DatasetSource::Blobs { .. }) {
                        self.dataset = Self::default().dataset;
                    }
                }
                "idx" => {
                    if !matches!(self.dataset, DatasetSource::Idx { .. }) {
                        self.dataset = DatasetSource::Idx {
                            images: PathBuf::new(),
                            labels: PathBuf::new(),
                            subset: 0,
                        };
                    }
                }
                _ => return Err(invalid(key, value, "expected blobs or idx")),
            },
            "blob_classes" | "blob_per_class" | "blob_dim" | "blob_spread" => {
                let DatasetSource::Blobs {
                    classes,
                    per_class,
                    dim,
                    spread,
                } = &mut self.dataset
                else {
                    return Err(invalid(
                        key,
                        value,
                        "only valid with dataset = blobs (set dataset first)",
                    ));
                };
                match key {
                    "blob_classes" => *classes = parse(key, value)?,
                    "blob_per_class" => *per_class = parse(key, value)?,
                    "blob_dim" => *dim = parse(key, value)?,
                    _ => *spread = parse(key, value)?,
                }
            }
            "idx_images" | "idx_labels" | "idx_subset" => {
                let DatasetSource::Idx {
                    images,
                    labels,
                    subset,
                } = &mut self.dataset
                else {
                    return Err(invalid(
                        key,
                        value,
                        "only valid with dataset = idx (set dataset first)",
                    ));
                };
                match key {
                    "idx_images" => *images = PathBuf::from(value),
                    "idx_labels" => *labels = PathBuf::from(value),
                    _ => *subset = parse(key, value)?,
                }
            }
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "partition" => {
                self.partition = match value {
                    "staircase" => PartitionScheme::Staircase,
                    "two_client" => PartitionScheme::TwoClient,
                    "iid" => PartitionScheme::Iid,
                    _ => return Err(invalid(key, value, "expected staircase, two_client or iid")),
                }
            }
            "clients" => self.clients = parse(key, value)?,
            "per_label_quota" => self.per_label_quota = parse(key, value)?,
            "anchor_multiplier" => self.anchor_multiplier = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "rank_ratio" => self.rank_ratio = parse(key, value)?,
            "global_rank" => {
                self.global_rank = match value {
                    "auto" => GlobalRank::Auto,
                    v => GlobalRank::Fixed(parse(key, v)?),
                }
            }
            "floor" => self.floor = parse(key, value)?,
            "hidden" => {
                self.hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|w| parse(key, w.trim()))
                        .collect::<Result<_, _>>()?
                }
            }
            "profiling_epochs" => self.profiling_epochs = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "local_epochs" => self.local_epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "train_base" => self.train_base = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        match &self.dataset {
            DatasetSource::Blobs {
                classes,
                per_class,
                dim,
                spread,
            } => {
                if *classes < 2 || *per_class == 0 || *dim == 0 {
                    return bad(
                        "blobs need >= 2 classes, >= 1 sample per class and dim >= 1".into(),
                    );
                }
                if !(spread.is_finite() && *spread >= 0.0) {
                    return bad(format!("blob_spread must be finite and >= 0, got {spread}"));
                }
            }
            DatasetSource::Idx { images, labels, .. } => {
                if images.as_os_str().is_empty() || labels.as_os_str().is_empty() {
                    return bad("dataset = idx needs idx_images and idx_labels".into());
                }
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) || self.test_fraction == 0.0 {
            return bad(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            ));
        }
        let clients_ok = match self.partition {
            PartitionScheme::Staircase => self.clients >= 2,
            PartitionScheme::TwoClient => self.clients == 2,
            PartitionScheme::Iid => self.clients >= 1,
        };
        if !clients_ok {
            return bad(format!(
                "{} clients is invalid for partition {:?}",
                self.clients, self.partition
            ));
        }
        if self.per_label_quota == 0 || self.anchor_multiplier == 0 {
            return bad("per_label_quota and anchor_multiplier must be >= 1".into());
        }
        if self.mode == RankMode::Homogeneous && !(self.rank_ratio > 0.0 && self.rank_ratio <= 1.0)
        {
            return bad(format!(
                "rank_ratio must lie in (0, 1], got {}",
                self.rank_ratio
            ));
        }
        if !(self.floor > 0.0 && self.floor <= 1.0) {
            return bad(format!("floor must lie in (0, 1], got {}", self.floor));
        }
        if self.global_rank == GlobalRank::Fixed(0) {
            return bad("global_rank must be >= 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1".into());
        }
        if self.profiling_epochs < 2 {
            return bad("profiling_epochs must be >= 2".into());
        }
        if self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return bad("rounds, local_epochs and batch_size must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }

    pub fn partition_spec(&self, seed: u64) -> PartitionSpec {
        PartitionSpec {
            scheme: self.partition,
            clients: self.clients,
            per_label_quota: self.per_label_quota,
            anchor_multiplier: self.anchor_multiplier,
            seed,
        }
    }

    /// Every key with its resolved value, in [`KEYS`] order. Keys that do
    /// not apply to the chosen dataset are reported as `-`.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let (blobs, idx) = match &self.dataset {
            DatasetSource::Blobs {
                classes,
                per_class,
                dim,
                spread,
            } => (
                Some([
                    classes.to_string(),
                    per_class.to_string(),
                    dim.to_string(),
                    spread.to_string(),
                ]),
                None,
            ),
            DatasetSource::Idx {
                images,
                labels,
                subset,
            } => (
                None,
                Some([
                    images.display().to_string(),
                    labels.display().to_string(),
                    subset.to_string(),
                ]),
            ),
        };
        let dash = || "-".to_string();
        let blob = |i: usize| blobs.as_ref().map_or_else(dash, |b| b[i].clone());
        let idx = |i: usize| idx.as_ref().map_or_else(dash, |b| b[i].clone());
        let values = vec![
            if blobs.is_some() { "blobs" } else { "idx" }.to_string(),
            blob(0),
            blob(1),
            blob(2),
            blob(3),
            idx(0),
            idx(1),
            idx(2),
            self.test_fraction.to_string(),
            match self.partition {
                PartitionScheme::Staircase => "staircase",
                PartitionScheme::TwoClient => "two_client",
                PartitionScheme::Iid => "iid",
            }
            .to_string(),
            self.clients.to_string(),
            self.per_label_quota.to_string(),
            self.anchor_multiplier.to_string(),
            self.mode.to_string(),
            self.rank_ratio.to_string(),
            match self.global_rank {
                GlobalRank::Auto => "auto".to_string(),
                GlobalRank::Fixed(r) => r.to_string(),
            },
            self.floor.to_string(),
            self.hidden
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
            self.profiling_epochs.to_string(),
            self.rounds.to_string(),
            self.local_epochs.to_string(),
            self.learning_rate.to_string(),
            self.batch_size.to_string(),
            self.train_base.to_string(),
            self.seed.to_string(),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }
}
