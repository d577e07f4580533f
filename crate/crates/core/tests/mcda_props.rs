mod support {
    pub mod oracle;
}

use autorank::mcda::{critic_weights, topsis_scores, DecisionMatrix, MetricWeights};
use ndarray::Array1;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracle::{self, Rows};

fn matrix(rows: &Rows) -> DecisionMatrix<f64> {
    DecisionMatrix::from_rows(rows).unwrap()
}

fn scores(rows: &Rows, weights: &[f64]) -> Vec<f64> {
    let w = MetricWeights::from_weights(Array1::from(weights.to_vec()));
    topsis_scores(&matrix(rows), &w).unwrap().scores.to_vec()
}

fn entry() -> impl Strategy<Value = f64> {
    prop_oneof![-100.0..100.0f64, (0u8..5).prop_map(f64::from)]
}

fn rows_strategy(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Rows> {
    (1..=max_rows, 1..=max_cols)
        .prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(entry(), c), r))
}

fn weights_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

#[test]
fn small_integer_grid_matches_oracle() {
    for (n_rows, n_cols) in [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2)] {
        for rows in oracle::integer_grid(n_rows, n_cols, 4) {
            let w = critic_weights(&matrix(&rows)).unwrap();
            let expected_w = oracle::critic(&rows);
            assert!(
                oracle::max_abs_diff(w.weights.as_slice().unwrap(), &expected_w) <= 1e-12,
                "{rows:?}"
            );
            let s = topsis_scores(&matrix(&rows), &w).unwrap();
            assert!(
                oracle::max_abs_diff(
                    s.scores.as_slice().unwrap(),
                    &oracle::topsis(&rows, &expected_w)
                ) <= 1e-12
            );
        }
    }
}

#[test]
fn scaling_by_powers_of_two_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        let (r, c) = (rng.random_range(2..10), rng.random_range(1..6));
        let rows: Rows = (0..r)
            .map(|_| (0..c).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let weights: Vec<f64> = vec![1.0 / c as f64; c];
        let mut scaled = rows.clone();
        let col = rng.random_range(0..c);
        let lambda = 2f64.powi(rng.random_range(-20..20));
        for row in &mut scaled {
            row[col] *= lambda;
        }
        assert_eq!(scores(&rows, &weights), scores(&scaled, &weights));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn critic_weights_are_a_distribution(rows in rows_strategy(32, 8)) {
        let w = critic_weights(&matrix(&rows)).unwrap().weights;
        prop_assert!((w.sum() - 1.0).abs() <= 1e-9);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn critic_and_topsis_match_oracle(rows in rows_strategy(12, 5)) {
        let expected = oracle::critic(&rows);
        let w = critic_weights(&matrix(&rows)).unwrap();
        prop_assert!(oracle::max_abs_diff(w.weights.as_slice().unwrap(), &expected) <= 1e-12);
        let s = topsis_scores(&matrix(&rows), &w).unwrap().scores;
        prop_assert!(oracle::max_abs_diff(s.as_slice().unwrap(), &oracle::topsis(&rows, &expected)) <= 1e-12);
    }

    #[test]
    fn topsis_scores_in_unit_interval(rows in rows_strategy(32, 8)) {
        let w = critic_weights(&matrix(&rows)).unwrap();
        let s = topsis_scores(&matrix(&rows), &w).unwrap().scores;
        prop_assert!(s.iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn arbitrary_positive_scaling_is_within_rounding(
        rows in rows_strategy(12, 5),
        lambda in 1e-3..1e3f64,
        col_seed in any::<usize>(),
    ) {
        let n = rows[0].len();
        let weights = vec![1.0 / n as f64; n];
        let col = col_seed % n;
        let mut scaled = rows.clone();
        for row in &mut scaled {
            row[col] *= lambda;
        }
        prop_assert!(oracle::max_abs_diff(&scores(&rows, &weights), &scores(&scaled, &weights)) <= 1e-12);
    }

    #[test]
    fn dominating_row_scores_at_least_as_high(
        (rows, weights, deltas, strict) in rows_strategy(10, 5).prop_flat_map(|rows| {
            let n = rows[0].len();
            (Just(rows), weights_strategy(n), prop::collection::vec(0.0..5.0f64, n), 0..n)
        }),
        pick in any::<(usize, usize)>(),
    ) {
        let mut rows = rows;
        let b = pick.0 % rows.len();
        let mut dominant: Vec<f64> = rows[b].iter().zip(&deltas).map(|(x, d)| x + d).collect();
        dominant[strict] += 1.0;
        rows.push(dominant);
        let s = scores(&rows, &weights);
        prop_assert!(s[rows.len() - 1] >= s[b], "{s:?}");
    }

    #[test]
    fn row_permutation_permutes_scores(rows in rows_strategy(12, 5), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Rows = order.iter().map(|&i| rows[i].clone()).collect();
        let w = critic_weights(&matrix(&rows)).unwrap();
        let base = topsis_scores(&matrix(&rows), &w).unwrap().scores;
        let perm = topsis_scores(&matrix(&permuted), &w).unwrap().scores;
        // column norms are summed in a different order, so allow rounding
        for (pos, &i) in order.iter().enumerate() {
            prop_assert!((perm[pos] - base[i]).abs() <= 1e-12);
        }
    }
}
