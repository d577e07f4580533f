mod support {
    pub mod oracle;
}

use autorank::data::{generate_blobs, LabeledDataset, PartitionScheme};
use autorank::fedsim::{
    run_experiment, write_artifacts, ClientState, ExperimentConfig, Federation, RankMode,
    ARTIFACT_FILES,
};
use autorank::lora::pad_to;
use autorank::nn::{self, Network, TrainingConfig};
use autorank::MetricConfig;
use support::oracle;

fn staircase(mode: RankMode, rounds: usize) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        rounds,
        ..ExperimentConfig::default()
    }
}

fn blobs(classes: usize, per_class: usize, seed: u64) -> LabeledDataset {
    generate_blobs(classes, per_class, 8, 0.1, seed).unwrap()
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        hidden: vec![12],
        rounds: 3,
        ..ExperimentConfig::default()
    }
}

fn negotiated(config: ExperimentConfig) -> Federation {
    let mut fed = Federation::new(config, 2).unwrap();
    let reports = fed.profile_clients().unwrap();
    fed.negotiate_ranks(&reports).unwrap();
    fed
}

#[test]
fn identical_shards_give_identical_reports() {
    let shard = blobs(4, 30, 1);
    let clients = vec![
        ClientState::new("a", shard.clone()),
        ClientState::new("b", shard.clone()),
    ];
    let mut fed = Federation::from_clients(small_config(), clients, blobs(4, 10, 2), 2).unwrap();
    let reports = fed.profile_clients().unwrap();
    assert_eq!(reports[0].loss_entropy, reports[1].loss_entropy);
    assert_eq!(reports[0].label_entropy, reports[1].label_entropy);
}

#[test]
fn broader_label_coverage_scores_higher() {
    let d = blobs(10, 40, 3);
    let one_label: Vec<usize> = (0..40).collect();
    let ten_labels: Vec<usize> = (0..10)
        .flat_map(|c| (0..4).map(move |j| c * 40 + j))
        .collect();
    let clients = vec![
        ClientState::new("narrow", d.subset(&one_label)),
        ClientState::new("broad", d.subset(&ten_labels)),
    ];
    let mut fed = Federation::from_clients(small_config(), clients, blobs(10, 5, 4), 1).unwrap();
    let r = fed.profile_clients().unwrap();
    assert!(r[1].gini_simpson > r[0].gini_simpson);
    assert!(r[1].label_entropy > r[0].label_entropy);
}

#[test]
fn staircase_profile_and_autorank() {
    let fed = negotiated(staircase(RankMode::AutoRank(MetricConfig::FineGrain), 1));
    let reports: Vec<_> = fed
        .clients
        .iter()
        .map(|c| c.report.clone().unwrap())
        .collect();
    let ldv_max = reports
        .iter()
        .map(|r| r.log_data_volume)
        .fold(f64::MIN, f64::max);
    assert_eq!(reports[9].log_data_volume, ldv_max);
    let a: Vec<_> = fed
        .clients
        .iter()
        .map(|c| c.assignment.clone().unwrap())
        .collect();
    let best = a.iter().map(|x| x.closeness).fold(f64::MIN, f64::max);
    assert_eq!(a[9].closeness, best);
    assert_eq!(a[9].rank_ratio, 1.0);
    assert_eq!(a[0].rank_ratio, 0.1);
    assert!(a.windows(2).all(|w| w[0].rank_ratio <= w[1].rank_ratio));
}

#[test]
fn manual_mode_ladder() {
    let fed = negotiated(staircase(RankMode::ManualPerLabel, 1));
    let ratios: Vec<f64> = fed
        .clients
        .iter()
        .map(|c| c.assignment.as_ref().unwrap().rank_ratio)
        .collect();
    let expected: Vec<f64> = (1..=10).map(|l| l as f64 / 10.0).collect();
    assert_eq!(ratios, expected);
}

#[test]
fn homogeneous_full_ratio_uses_global_ranks() {
    let fed = negotiated(staircase(RankMode::Homogeneous, 1));
    for c in &fed.clients {
        assert_eq!(c.ranks, fed.global_ranks);
        assert_eq!(c.assignment.as_ref().unwrap().rank, fed.reference_rank());
    }
}

#[test]
fn single_client_round_returns_its_padded_state() {
    let config = ExperimentConfig {
        mode: RankMode::Homogeneous,
        rank_ratio: 0.5,
        ..small_config()
    };
    let clients = vec![ClientState::new("only", blobs(3, 30, 5))];
    let mut fed = Federation::from_clients(config, clients, blobs(3, 10, 6), 1).unwrap();
    let reports = fed.profile_clients().unwrap();
    fed.negotiate_ranks(&reports).unwrap();
    let global = fed.initial_state().unwrap();
    let (next, record) = fed.run_round(&global, 1).unwrap();
    let local = fed.clients[0].lora_net.as_ref().unwrap().state();
    assert_eq!(next, pad_to(&local, &fed.global_ranks).unwrap());
    assert!((0.0..=1.0).contains(&record.test_accuracy));
}

#[test]
fn identical_clients_aggregate_to_their_common_state() {
    let shard = blobs(3, 30, 7);
    let clients = (0..3)
        .map(|i| ClientState::new(format!("c{i}"), shard.clone()))
        .collect();
    let mut fed = Federation::from_clients(small_config(), clients, blobs(3, 10, 8), 3).unwrap();
    let reports = fed.profile_clients().unwrap();
    fed.negotiate_ranks(&reports).unwrap();
    let global = fed.initial_state().unwrap();
    let (next, _) = fed.run_round(&global, 1).unwrap();
    let local = pad_to(
        &fed.clients[0].lora_net.as_ref().unwrap().state(),
        &fed.global_ranks,
    )
    .unwrap();
    let flat = |s: &autorank::GlobalLoraState64| -> Vec<f64> {
        s.layers
            .iter()
            .flat_map(|l| {
                l.down
                    .iter()
                    .chain(l.up.iter())
                    .chain(l.bias.iter())
                    .copied()
            })
            .collect()
    };
    assert!(oracle::max_abs_diff(&flat(&next), &flat(&local)) <= 1e-12);
}

#[test]
fn homogeneous_round_equals_plain_fedavg() {
    let mut fed = negotiated(ExperimentConfig {
        mode: RankMode::Homogeneous,
        ..small_config()
    });
    let global = fed.initial_state().unwrap();
    let (next, _) = fed.run_round(&global, 1).unwrap();
    let vectors: Vec<Vec<f64>> = fed
        .clients
        .iter()
        .map(|c| c.lora_net.as_ref().unwrap().trainable_vector())
        .collect();
    let volumes: Vec<f64> = fed.clients.iter().map(|c| c.data_volume() as f64).collect();
    let mut net = fed.clients[0].lora_net.clone().unwrap();
    net.load_state(&next).unwrap();
    assert!(
        oracle::max_abs_diff(&net.trainable_vector(), &oracle::fedavg(&vectors, &volumes)) <= 1e-12
    );
}

#[test]
fn ranks_are_fixed_across_rounds() {
    let mut fed = negotiated(small_config());
    let ranks: Vec<_> = fed.clients.iter().map(|c| c.ranks.clone()).collect();
    let mut state = fed.initial_state().unwrap();
    for round in 1..=3 {
        state = fed.run_round(&state, round).unwrap().0;
        for (c, r) in fed.clients.iter().zip(&ranks) {
            assert_eq!(&c.lora_net.as_ref().unwrap().ranks(), r);
        }
    }
}

#[test]
fn two_client_blobs_converge() {
    let config = ExperimentConfig {
        partition: PartitionScheme::Iid,
        clients: 2,
        per_label_quota: 100,
        mode: RankMode::Homogeneous,
        rounds: 30,
        ..ExperimentConfig::default()
    };
    // centralized reference on the union of both shards
    let fed = Federation::new(config.clone(), 1).unwrap();
    let views: Vec<_> = fed.clients.iter().map(|c| c.shard.features()).collect();
    let labels: Vec<usize> = fed
        .clients
        .iter()
        .flat_map(|c| c.shard.labels.iter().copied())
        .collect();
    let x = ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
    let mut central = fed.base.clone();
    let cfg = TrainingConfig {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        epochs: 30,
        seed: 1,
    };
    nn::train(&mut central, x.view(), &labels, &cfg).unwrap();
    let (central_acc, _) = nn::evaluate(&central, fed.test.features(), &fed.test.labels).unwrap();
    assert!(central_acc > 0.95, "centralized {central_acc}");

    let outcome = run_experiment(&config, 2).unwrap();
    let last = outcome.records.last().unwrap().test_accuracy;
    assert!(last > 0.9, "federated {last}");
}

#[test]
fn autorank_trains_fewer_parameters_than_homogeneous() {
    let auto = run_experiment(
        &staircase(RankMode::AutoRank(MetricConfig::FineGrain), 1),
        0,
    )
    .unwrap();
    let homo = run_experiment(&staircase(RankMode::Homogeneous, 1), 0).unwrap();
    assert!(auto.total_trainable_params < homo.total_trainable_params);
    let expected: usize = auto
        .client_ranks
        .iter()
        .map(|ranks| {
            auto.dims
                .windows(2)
                .zip(ranks)
                .map(|(w, &r)| oracle::lora_params(w[0], w[1], r))
                .sum::<usize>()
        })
        .sum();
    assert_eq!(auto.total_trainable_params, expected);
}

#[test]
fn runs_are_reproducible_and_thread_independent() {
    let config = ExperimentConfig {
        rounds: 4,
        ..small_config()
    };
    let dirs: Vec<_> = [1, 4, 1]
        .iter()
        .map(|&threads| {
            let dir = tempfile::tempdir().unwrap();
            let outcome = run_experiment(&config, threads).unwrap();
            write_artifacts(&outcome, dir.path(), &[]).unwrap();
            dir
        })
        .collect();
    for name in ARTIFACT_FILES {
        let first = std::fs::read(dirs[0].path().join(name)).unwrap();
        for d in &dirs[1..] {
            assert_eq!(first, std::fs::read(d.path().join(name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn invalid_mode_combinations_are_config_errors() {
    let config = ExperimentConfig {
        partition: PartitionScheme::TwoClient,
        clients: 3,
        ..ExperimentConfig::default()
    };
    assert!(matches!(
        run_experiment(&config, 1),
        Err(autorank::fedsim::ExperimentError::Config(_))
    ));
}
