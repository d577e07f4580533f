use rand::seq::SliceRandom;

use super::{DataError, LabeledDataset};
use crate::seed::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartitionScheme {
    /// Client `i` owns labels `0..=i`; the last client owns every label with
    /// `anchor_multiplier` times the per-label quota.
    Staircase,
    /// One client with `quota` samples of every label, one with
    /// `classes · quota` samples of label 0.
    TwoClient,
    /// Every client gets `quota` samples of every label.
    Iid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub clients: usize,
    pub per_label_quota: usize,
    pub anchor_multiplier: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.per_label_quota == 0 {
            return Err(DataError::InvalidParams(
                "per-label quota must be at least 1".into(),
            ));
        }
        match self.scheme {
            PartitionScheme::Staircase if self.clients < 2 => Err(DataError::InvalidParams(
                "stair-case partition needs at least 2 clients".into(),
            )),
            PartitionScheme::Staircase if self.anchor_multiplier == 0 => Err(
                DataError::InvalidParams("anchor multiplier must be at least 1".into()),
            ),
            PartitionScheme::TwoClient if self.clients != 2 => {
                Err(DataError::InvalidParams(format!(
                    "two-client partition needs exactly 2 clients, got {}",
                    self.clients
                )))
            }
            PartitionScheme::Iid if self.clients == 0 => {
                Err(DataError::InvalidParams("need at least one client".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Per-label pools in seeded order, consumed front to back.
struct Pools {
    pools: Vec<Vec<usize>>,
    next: Vec<usize>,
}

impl Pools {
    fn new(dataset: &LabeledDataset, seed: u64) -> Self {
        let mut pools = dataset.label_pools();
        for (label, pool) in pools.iter_mut().enumerate() {
            pool.shuffle(&mut seed::rng(seed, Purpose::Partition, &[label as u64]));
        }
        let next = vec![0; pools.len()];
        Self { pools, next }
    }

    fn take(&mut self, label: usize, count: usize, into: &mut Vec<usize>) -> Result<(), DataError> {
        let available = self
            .pools
            .get(label)
            .map_or(0, |p| p.len() - self.next[label]);
        if available < count {
            return Err(DataError::InsufficientSamples {
                label,
                needed: count,
                available,
            });
        }
        let start = self.next[label];
        into.extend_from_slice(&self.pools[label][start..start + count]);
        self.next[label] += count;
        Ok(())
    }
}

/// Double-imbalance stair-case split. Returns one index list per client.
pub fn partition_staircase(
    dataset: &LabeledDataset,
    spec: &PartitionSpec,
) -> Result<Vec<Vec<usize>>, DataError> {
    spec.validate()?;
    let mut pools = Pools::new(dataset, spec.seed);
    let k = spec.clients;
    let mut shards = Vec::with_capacity(k);
    for i in 0..k - 1 {
        let mut shard = Vec::new();
        for label in 0..=i.min(dataset.classes - 1) {
            pools.take(label, spec.per_label_quota, &mut shard)?;
        }
        shards.push(shard);
    }
    let mut anchor = Vec::new();
    for label in 0..dataset.classes {
        pools.take(
            label,
            spec.anchor_multiplier * spec.per_label_quota,
            &mut anchor,
        )?;
    }
    shards.push(anchor);
    Ok(shards)
}

/// Equal-volume pair: all labels with `quota` each vs label 0 only.
pub fn partition_two_client(
    dataset: &LabeledDataset,
    spec: &PartitionSpec,
) -> Result<Vec<Vec<usize>>, DataError> {
    spec.validate()?;
    let mut pools = Pools::new(dataset, spec.seed);
    let mut broad = Vec::new();
    for label in 0..dataset.classes {
        pools.take(label, spec.per_label_quota, &mut broad)?;
    }
    let mut narrow = Vec::new();
    pools.take(0, dataset.classes * spec.per_label_quota, &mut narrow)?;
    Ok(vec![broad, narrow])
}

pub fn partition_iid(
    dataset: &LabeledDataset,
    spec: &PartitionSpec,
) -> Result<Vec<Vec<usize>>, DataError> {
    spec.validate()?;
    let mut pools = Pools::new(dataset, spec.seed);
    (0..spec.clients)
        .map(|_| {
            let mut shard = Vec::new();
            for label in 0..dataset.classes {
                pools.take(label, spec.per_label_quota, &mut shard)?;
            }
            Ok(shard)
        })
        .collect()
}

pub fn partition(
    dataset: &LabeledDataset,
    spec: &PartitionSpec,
) -> Result<Vec<Vec<usize>>, DataError> {
    match spec.scheme {
        PartitionScheme::Staircase => partition_staircase(dataset, spec),
        PartitionScheme::TwoClient => partition_two_client(dataset, spec),
        PartitionScheme::Iid => partition_iid(dataset, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use std::collections::HashSet;

    fn spec(scheme: PartitionScheme, clients: usize, quota: usize, mult: usize) -> PartitionSpec {
        PartitionSpec {
            scheme,
            clients,
            per_label_quota: quota,
            anchor_multiplier: mult,
            seed: 42,
        }
    }

    #[test]
    fn staircase_layout() {
        let d = generate_blobs(10, 300, 4, 0.1, 1).unwrap();
        let shards = partition_staircase(&d, &spec(PartitionScheme::Staircase, 10, 20, 5)).unwrap();
        assert_eq!(shards.len(), 10);
        for (i, s) in shards.iter().enumerate().take(9) {
            let counts = d.subset(s).label_counts();
            assert_eq!(
                counts.keys().copied().collect::<Vec<_>>(),
                (0..=i).collect::<Vec<_>>()
            );
            assert!(counts.values().all(|&c| c == 20));
        }
        let anchor = d.subset(&shards[9]).label_counts();
        assert_eq!(anchor.len(), 10);
        assert!(anchor.values().all(|&c| c == 100));
        let mut seen = HashSet::new();
        for s in &shards {
            for &i in s {
                assert!(seen.insert(i), "index {i} assigned twice");
            }
        }
    }

    #[test]
    fn staircase_underflow() {
        let d = generate_blobs(3, 10, 2, 0.1, 1).unwrap();
        let err = partition_staircase(&d, &spec(PartitionScheme::Staircase, 3, 5, 5)).unwrap_err();
        assert!(matches!(
            err,
            DataError::InsufficientSamples {
                label: 0,
                needed: 25,
                available: 0
            }
        ));
    }

    #[test]
    fn two_client_layout() {
        let d = generate_blobs(10, 400, 4, 0.1, 1).unwrap();
        let shards = partition_two_client(&d, &spec(PartitionScheme::TwoClient, 2, 30, 1)).unwrap();
        assert_eq!((shards[0].len(), shards[1].len()), (300, 300));
        let a = d.subset(&shards[0]).label_counts();
        assert_eq!(a.len(), 10);
        assert!(a.values().all(|&c| c == 30));
        let b = d.subset(&shards[1]).label_counts();
        assert_eq!(b.keys().copied().collect::<Vec<_>>(), vec![0]);
        let sa: HashSet<_> = shards[0].iter().collect();
        assert!(shards[1].iter().all(|i| !sa.contains(i)));
    }

    #[test]
    fn deterministic() {
        let d = generate_blobs(4, 50, 2, 0.1, 1).unwrap();
        let s = spec(PartitionScheme::Iid, 3, 5, 1);
        assert_eq!(partition(&d, &s).unwrap(), partition(&d, &s).unwrap());
    }

    #[test]
    fn spec_validation() {
        let d = generate_blobs(4, 50, 2, 0.1, 1).unwrap();
        assert!(partition(&d, &spec(PartitionScheme::Staircase, 1, 5, 2)).is_err());
        assert!(partition(&d, &spec(PartitionScheme::TwoClient, 3, 5, 2)).is_err());
        assert!(partition(&d, &spec(PartitionScheme::Iid, 2, 0, 2)).is_err());
    }
}
