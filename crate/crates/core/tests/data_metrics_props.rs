use std::collections::BTreeSet;

use fedmcsa_core::data::{generate_synthetic, read_federation_csv, write_federation_csv, ClientDataset};
use fedmcsa_core::metrics::{bmta, evaluate_cohort};
use fedmcsa_core::nn::{self, Matrix, Model, ModelSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn split_is_stratified_and_stable(labels in prop::collection::vec(0usize..4, 8..200), seed in any::<u64>()) {
        let n = labels.len();
        let x = Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let a = ClientDataset::split(0, &x, &labels, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = ClientDataset::split(0, &x, &labels, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.train_len() + a.test_len(), n);
        prop_assert!((a.test_len() as f64 - 0.25 * n as f64).abs() <= 1.0 + a.classes.len() as f64);
        let train: BTreeSet<_> = a.train_y.iter().collect();
        prop_assert!(a.test_y.iter().all(|l| train.contains(l)));
        // every sample lands in exactly one split
        let mut ids: Vec<usize> = a.train_x.iter_rows().chain(a.test_x.iter_rows()).map(|r| r[0] as usize).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn bmta_ignores_worse_tail(series in prop::collection::vec(0.0f64..1.0, 1..40), tail in prop::collection::vec(0.0f64..1.0, 0..10)) {
        let (best, at) = bmta(&series).unwrap();
        let mut longer = series.clone();
        longer.extend(tail.iter().map(|t| t * best));
        prop_assert_eq!(bmta(&longer).unwrap(), (best, at));
    }
}

#[test]
fn synthetic_labels_follow_stored_ground_truth() {
    let fed = generate_synthetic(5, 0.5, 0.5, 21).unwrap();
    for c in &fed.clients {
        let truth = c.ground_truth.as_ref().unwrap();
        for (x, y) in [(&c.train_x, &c.train_y), (&c.test_x, &c.test_y)] {
            let p = nn::forward(truth, x).unwrap();
            let relabelled: Vec<usize> = p.iter_rows().map(nn::argmax).collect();
            assert_eq!(&relabelled, y);
        }
        let test: BTreeSet<_> = c.test_y.iter().collect();
        assert!(test.iter().all(|l| c.classes.contains(l)));
    }
}

#[test]
fn exported_federation_round_trips() {
    let fed = generate_synthetic(3, 0.5, 0.5, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fed.csv");
    write_federation_csv(&path, &fed).unwrap();
    let back = read_federation_csv(&path).unwrap();
    assert_eq!(back.clients.len(), 3);
    for (a, b) in fed.clients.iter().zip(&back.clients) {
        assert_eq!(a.train_x, b.train_x);
        assert_eq!(a.test_x, b.test_x);
        assert_eq!(a.train_y, b.train_y);
        assert_eq!(a.test_y, b.test_y);
    }
}

#[test]
fn mean_accuracy_counts_clients_not_samples() {
    let fed = generate_synthetic(2, 0.5, 0.5, 9).unwrap();
    let model = Model::zeros(ModelSpec::mlr(60, 10)).unwrap();
    let one = evaluate_cohort(&[&model], &fed.clients[..1], 0.0).unwrap();
    // a duplicated client keeps the same mean even though it doubles the samples
    let twice = vec![fed.clients[0].clone(), fed.clients[0].clone()];
    let two = evaluate_cohort(&[&model, &model], &twice, 0.0).unwrap();
    assert_eq!(one.mean_test_accuracy, two.mean_test_accuracy);

    let mixed = evaluate_cohort(&[&model, &model], &fed.clients, 0.0).unwrap();
    let oracle: Vec<f64> = fed
        .clients
        .iter()
        .map(|c| {
            let hits = c
                .test_x
                .iter_rows()
                .zip(&c.test_y)
                .filter(|(row, &y)| {
                    let p = nn::forward(&model, &Matrix::from_rows(&[row.to_vec()]).unwrap()).unwrap();
                    nn::argmax(p.row(0)) == y
                })
                .count();
            hits as f64 / c.test_len() as f64
        })
        .collect();
    assert_eq!(mixed.client_accuracy, oracle);
    assert_eq!(mixed.mean_test_accuracy, (oracle[0] + oracle[1]) / 2.0);
}
