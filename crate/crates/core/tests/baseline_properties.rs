use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scarf::baselines::{
    mixup_with_lambda, sample_mixup_lambda, self_train, tri_train, Classifier, LabelSource, SelfTrainConfig,
    TrainingSet,
};
use scarf::eval::{fnv1a, splitmix64};
use scarf::nn::Matrix;
use scarf::Result;

/// Predictions are a hash of (training set, row id); confidence too.
struct HashModel {
    key: u64,
}

impl HashModel {
    fn train(set: &TrainingSet, salt: u64) -> Self {
        let bytes: Vec<u8> = set.rows.iter().flat_map(|r| (*r as u64).to_le_bytes()).collect();
        Self { key: fnv1a(&bytes) ^ salt }
    }

    fn class(&self, row: usize) -> usize {
        (splitmix64(self.key ^ row as u64) % 3) as usize
    }
}

impl Classifier for HashModel {
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let mut p = Matrix::zeros(x.rows(), 3);
        for i in 0..x.rows() {
            let row = x.get(i, 0) as usize;
            let conf = 0.5 + (splitmix64(self.key.rotate_left(7) ^ row as u64) % 1000) as f64 / 2000.0;
            let k = self.class(row);
            for c in 0..3 {
                p.set(i, c, if c == k { conf } else { (1.0 - conf) / 2.0 });
            }
        }
        Ok(p)
    }
}

fn ids(n: usize) -> Matrix {
    Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn self_train_pool_only_grows(n_lab in 1usize..10, n_unl in 0usize..40, threshold in 0.5f64..1.0, salt in any::<u64>()) {
        let n = n_lab + n_unl;
        let x = ids(n);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let labeled: Vec<usize> = (0..n_lab).collect();
        let unlabeled: Vec<usize> = (n_lab..n).collect();
        let mut sizes = Vec::new();
        let cfg = SelfTrainConfig { threshold, iterations: 10 };
        let out = self_train(&x, &labels, &labeled, &unlabeled, &cfg, |set| {
            sizes.push(set.len());
            Ok(HashModel::train(set, salt))
        }).unwrap();
        prop_assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
        let rows: Vec<usize> = out.pool.entries().iter().map(|e| e.row).collect();
        let distinct: BTreeSet<usize> = rows.iter().copied().collect();
        prop_assert_eq!(distinct.len(), rows.len());
        prop_assert_eq!(rows.len(), n_lab + out.pool.additions.iter().sum::<usize>());
        prop_assert!(out.pool.additions.len() <= 10);
    }

    #[test]
    fn tri_train_labels_come_from_the_other_two_models(n_lab in 2usize..10, n_unl in 1usize..30, salt in any::<u64>(), seed in any::<u64>()) {
        let n = n_lab + n_unl;
        let x = ids(n);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let labeled: Vec<usize> = (0..n_lab).collect();
        let unlabeled: Vec<usize> = (n_lab..n).collect();
        let mut models = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = tri_train(&x, &labels, &labeled, &unlabeled, 5, &mut rng, |set| {
            let m = HashModel::train(set, salt);
            models.push(m.key);
            Ok(m)
        }).unwrap();
        // three models per iteration in pool order, then the final one
        let rounds = (models.len() - 1) / 3;
        for (k, pool) in out.pools.iter().enumerate() {
            let others: Vec<usize> = (0..3).filter(|&o| o != k).collect();
            for e in pool.entries().iter().filter(|e| e.source == LabelSource::Pseudo) {
                let agreed = (0..rounds).any(|t| {
                    others.iter().all(|&o| HashModel { key: models[3 * t + o] }.class(e.row) == e.label)
                });
                prop_assert!(agreed, "pool {} row {} label {}", k, e.row, e.label);
            }
        }
    }

    #[test]
    fn mixup_interpolates_pairs(lambda in 0.0f64..=1.0, perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [-1.0, 3.0]]).unwrap();
        let y = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let (mx, my) = mixup_with_lambda(&x, &y, lambda, &perm).unwrap();
        for i in 0..4 {
            for c in 0..2 {
                let want = lambda * x.get(i, c) + (1.0 - lambda) * x.get(perm[i], c);
                prop_assert!((mx.get(i, c) - want).abs() < 1e-12);
            }
            prop_assert!((my.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn small_alpha_concentrates_lambda_at_the_ends() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 100_000;
    let outside = (0..n)
        .filter(|_| {
            let l = sample_mixup_lambda(0.2, &mut rng).unwrap();
            !(0.1..=0.9).contains(&l)
        })
        .count();
    assert!(outside as f64 / n as f64 >= 0.6, "{outside}");
}
