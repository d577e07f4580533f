mod support {
    pub mod oracle;
}

use autorank::lora::{
    aggregate_hetero, broadcast_truncate, lora_init_with_ranks, pad_to, AdapterLayer, LoraState,
};
use autorank::nn::init_net;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracle;

fn random_state(
    dims: &[usize],
    ranks: &[usize],
    with_base: bool,
    rng: &mut ChaCha8Rng,
) -> LoraState<f64> {
    let mut m =
        |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0));
    LoraState {
        layers: dims
            .windows(2)
            .zip(ranks)
            .map(|(w, &r)| AdapterLayer {
                down: m(r, w[0]),
                up: m(w[1], r),
                bias: m(1, w[1]).row(0).to_owned(),
                base: with_base.then(|| m(w[1], w[0])),
            })
            .collect(),
    }
}

fn flatten(state: &LoraState<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for l in &state.layers {
        out.extend(l.down.iter());
        out.extend(l.up.iter());
        out.extend(l.bias.iter());
        if let Some(b) = &l.base {
            out.extend(b.iter());
        }
    }
    out
}

#[test]
fn equal_ranks_reduce_to_fedavg() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..50 {
        let dims = [
            rng.random_range(2..9),
            rng.random_range(2..9),
            rng.random_range(2..9),
        ];
        let ranks: Vec<usize> = dims
            .windows(2)
            .map(|w| rng.random_range(1..=w[0].min(w[1])))
            .collect();
        let k = rng.random_range(1..6);
        let with_base = trial % 3 == 0;
        let states: Vec<_> = (0..k)
            .map(|_| random_state(&dims, &ranks, with_base, &mut rng))
            .collect();
        let volumes: Vec<f64> = (0..k)
            .map(|_| f64::from(rng.random_range(1u32..500)))
            .collect();
        let pairs: Vec<_> = states.iter().zip(&volumes).map(|(s, &v)| (s, v)).collect();
        let got = flatten(&aggregate_hetero(&pairs, &ranks).unwrap());
        let expected = oracle::fedavg(&states.iter().map(flatten).collect::<Vec<_>>(), &volumes);
        assert!(oracle::max_abs_diff(&got, &expected) <= 1e-12);
    }
}

#[test]
fn hand_computed_heterogeneous_example() {
    let client = |down: Array2<f64>| LoraState {
        layers: vec![AdapterLayer {
            up: Array2::zeros((1, down.nrows())),
            down,
            bias: Array1::zeros(1),
            base: None,
        }],
    };
    let a = client(array![[1.0, 1.0]]);
    let b = client(array![[3.0, 3.0], [5.0, 5.0]]);
    let global = aggregate_hetero(&[(&a, 1.0), (&b, 1.0)], &[2]).unwrap();
    assert_eq!(global.layers[0].down, array![[2.0, 2.0], [5.0, 5.0]]);
    assert_eq!(
        broadcast_truncate(&global, &[1]).unwrap().layers[0].down,
        array![[2.0, 2.0]]
    );
}

#[test]
fn unowned_slices_stay_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = random_state(&[5, 4], &[1], false, &mut rng);
    let g = aggregate_hetero(&[(&s, 2.0)], &[3]).unwrap();
    assert!(g.layers[0]
        .down
        .rows()
        .into_iter()
        .skip(1)
        .all(|r| r.iter().all(|&v| v == 0.0)));
    assert!(g.layers[0]
        .up
        .columns()
        .into_iter()
        .skip(1)
        .all(|c| c.iter().all(|&v| v == 0.0)));
}

#[test]
fn single_client_round_trip_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let dims = [
            rng.random_range(2..9),
            rng.random_range(2..9),
            rng.random_range(2..9),
        ];
        let limits: Vec<usize> = dims.windows(2).map(|w| w[0].min(w[1])).collect();
        let ranks: Vec<usize> = limits.iter().map(|&l| rng.random_range(1..=l)).collect();
        let global: Vec<usize> = ranks
            .iter()
            .zip(&limits)
            .map(|(&r, &l)| rng.random_range(r..=l))
            .collect();
        let s = random_state(&dims, &ranks, rng.random_bool(0.3), &mut rng);
        let volume = rng.random_range(0.5..100.0);
        let g = aggregate_hetero(&[(&s, volume)], &global).unwrap();
        assert_eq!(broadcast_truncate(&g, &ranks).unwrap(), s);
        assert_eq!(
            broadcast_truncate(&pad_to(&s, &global).unwrap(), &ranks).unwrap(),
            s
        );
    }
}

#[test]
fn every_owned_slice_contributes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dims = [6, 5];
    let states: Vec<_> = [1usize, 3, 5]
        .iter()
        .map(|&r| random_state(&dims, &[r], false, &mut rng))
        .collect();
    let pairs: Vec<_> = states.iter().map(|s| (s, 10.0)).collect();
    let before = aggregate_hetero(&pairs, &[5]).unwrap();
    for (c, s) in states.iter().enumerate() {
        for k in 0..s.layers[0].down.nrows() {
            let mut bumped = states.clone();
            bumped[c].layers[0].down[[k, 0]] += 1.0;
            let pairs: Vec<_> = bumped.iter().map(|s| (s, 10.0)).collect();
            let after = aggregate_hetero(&pairs, &[5]).unwrap();
            assert!(
                after.layers[0].down[[k, 0]] > before.layers[0].down[[k, 0]],
                "client {c} slice {k}"
            );
        }
    }
}

#[test]
fn fresh_global_state_truncates_to_client_nets() {
    let base = init_net::<f64>(&[8, 6, 3], 1).unwrap();
    let global = lora_init_with_ranks(&base, &[6, 3], 2).unwrap().state();
    let client = broadcast_truncate(&global, &[2, 1]).unwrap();
    assert_eq!(client.ranks(), vec![2, 1]);
    assert_eq!(
        client.layers[0].down,
        global.layers[0].down.slice(ndarray::s![..2, ..])
    );
    assert!(client.layers.iter().all(|l| l.up.iter().all(|&v| v == 0.0)));
}
