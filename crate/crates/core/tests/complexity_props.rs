mod support {
    pub mod oracle;
}

use std::collections::BTreeMap;

use autorank::complexity::{
    gini_simpson, label_entropy, log_data_volume, loss_entropy, EpochLossTrace, LabelHistogram,
};
use proptest::prelude::*;
use support::oracle;

fn hist(counts: &[u64]) -> LabelHistogram {
    LabelHistogram::new(counts.iter().copied().enumerate().collect()).unwrap()
}

fn trace(losses: &[f64]) -> EpochLossTrace<f64> {
    EpochLossTrace::new(losses.to_vec()).unwrap()
}

fn counts() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0u64..500, 1..12).prop_filter("non-empty", |c| c.iter().sum::<u64>() > 0)
}

fn losses() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 1e-6..10.0f64], 2..40)
}

#[test]
fn hand_examples() {
    assert_eq!(
        loss_entropy(&trace(&[1.0, 1.0, 1.0, 1.0])).unwrap(),
        4f64.ln()
    );
    assert!((loss_entropy(&trace(&[2.0, 1.0, 1.0])).unwrap() - 1.0397207708399179).abs() < 1e-15);
    assert_eq!(loss_entropy(&trace(&[5.0, 0.0, 0.0])).unwrap(), 0.0);

    assert_eq!(label_entropy::<f64>(&hist(&[17])).unwrap(), 0.0);
    assert_eq!(
        label_entropy::<f64>(&hist(&[10, 10])).unwrap(),
        20f64.ln() * 2f64.ln()
    );
    let h: f64 = label_entropy(&hist(&[50, 49, 1])).unwrap();
    assert!((h - oracle::label_entropy(&[50, 49, 1])).abs() <= 1e-12);
    assert!((h - 3.4178041).abs() < 1e-6);

    assert_eq!(gini_simpson::<f64>(&hist(&[10, 10])).unwrap(), 0.5);
    assert!((gini_simpson::<f64>(&hist(&[50, 49, 1])).unwrap() - 0.5098).abs() < 1e-15);
    assert_eq!(gini_simpson::<f64>(&hist(&[7])).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_oracle(c in counts(), l in losses()) {
        let h = hist(&c);
        prop_assert!((label_entropy::<f64>(&h).unwrap() - oracle::label_entropy(&c)).abs() <= 1e-12);
        prop_assert!((gini_simpson::<f64>(&h).unwrap() - oracle::gini_simpson(&c)).abs() <= 1e-12);
        prop_assert!((loss_entropy(&trace(&l)).unwrap() - oracle::loss_entropy(&l)).abs() <= 1e-12);
    }

    #[test]
    fn loss_entropy_scale_and_permutation_invariant(l in losses(), c in 1e-3..1e3f64, rot in 0usize..40) {
        let base = loss_entropy(&trace(&l)).unwrap();
        let scaled: Vec<f64> = l.iter().map(|x| x * c).collect();
        prop_assert!((loss_entropy(&trace(&scaled)).unwrap() - base).abs() <= 1e-12);
        let mut rotated = l.clone();
        rotated.rotate_left(rot % l.len());
        prop_assert!((loss_entropy(&trace(&rotated)).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn label_entropy_factorizes_under_count_scaling(c in counts(), m in 2u64..20) {
        let total: u64 = c.iter().sum();
        prop_assume!(total > 1);
        let scaled: Vec<u64> = c.iter().map(|x| x * m).collect();
        let expected = ((m * total) as f64).ln() / (total as f64).ln() * label_entropy::<f64>(&hist(&c)).unwrap();
        prop_assert!((label_entropy::<f64>(&hist(&scaled)).unwrap() - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn gini_scale_invariant_and_bounded(c in counts(), m in 2u64..20) {
        let g = gini_simpson::<f64>(&hist(&c)).unwrap();
        let scaled: Vec<u64> = c.iter().map(|x| x * m).collect();
        prop_assert!((gini_simpson::<f64>(&hist(&scaled)).unwrap() - g).abs() <= 1e-12);
        let k = c.iter().filter(|&&x| x > 0).count() as f64;
        prop_assert!(g <= 1.0 - 1.0 / k + 1e-12);
    }

    #[test]
    fn zero_count_labels_change_nothing(c in counts(), extra in 100usize..200) {
        let h = hist(&c);
        let mut map: BTreeMap<usize, u64> = h.counts().clone();
        map.insert(extra, 0);
        let padded = LabelHistogram::new(map).unwrap();
        prop_assert_eq!(label_entropy::<f64>(&padded).unwrap(), label_entropy::<f64>(&h).unwrap());
        prop_assert_eq!(gini_simpson::<f64>(&padded).unwrap(), gini_simpson::<f64>(&h).unwrap());
        prop_assert_eq!(log_data_volume::<f64>(&padded).unwrap(), log_data_volume::<f64>(&h).unwrap());
    }
}
