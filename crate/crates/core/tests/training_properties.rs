mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scarf::corruption::{CorruptionConfig, Corruptor};
use scarf::data::{make_splits, ProcessedDataset, Splits};
use scarf::eval::synthetic::{gaussian_mixture, MixtureSpec};
use scarf::training::{
    finetune, patience_stop_epoch, pretrain_scarf, ArchConfig, FinetuneConfig, ModelBundle, PretrainConfig,
    StopReason, TrainOutcome,
};

fn small_arch() -> ArchConfig {
    ArchConfig {
        hidden_width: 16,
        encoder_layers: 2,
        head_layers: 1,
        embedding_width: 8,
    }
}

fn setup(seed: u64) -> (ProcessedDataset, Splits, ModelBundle) {
    let ds = gaussian_mixture(&MixtureSpec {
        rows: 150,
        features: 6,
        seed,
        ..MixtureSpec::default()
    })
    .unwrap();
    let splits = make_splits(ds.num_rows(), seed).unwrap();
    let bundle = ModelBundle::init(ds.encoded_width(), 2, &small_arch(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (ds, splits, bundle)
}

fn pre_cfg() -> PretrainConfig {
    PretrainConfig {
        batch_size: 16,
        max_epochs: 6,
        val_build_epochs: 2,
        ..PretrainConfig::default()
    }
}

fn ft_cfg() -> FinetuneConfig {
    FinetuneConfig {
        batch_size: 16,
        max_epochs: 6,
        ..FinetuneConfig::default()
    }
}

fn pretrain(ds: &ProcessedDataset, splits: &Splits, bundle: &mut ModelBundle, seed: u64) -> TrainOutcome {
    pretrain_scarf(ds, splits, bundle, &pre_cfg(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Brute force: first epoch whose `patience` most recent metrics are all
/// no better than the best before them.
fn oracle_stop(metrics: &[f64], patience: usize) -> Option<usize> {
    let mut best = f64::INFINITY;
    let mut best_at = 0;
    for (e, &m) in metrics.iter().enumerate() {
        if m < best {
            best = m;
            best_at = e + 1;
        }
        if e + 1 - best_at >= patience {
            return Some(e + 1);
        }
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn patience_matches_brute_force(metrics in prop::collection::vec(0u8..6, 0..40), patience in 1usize..6) {
        let m: Vec<f64> = metrics.iter().map(|&v| f64::from(v)).collect();
        prop_assert_eq!(patience_stop_epoch(&m, patience).unwrap(), oracle_stop(&m, patience));
    }
}

#[test]
fn pretraining_is_deterministic_and_counts_steps() {
    let (ds, splits, bundle) = setup(1);
    let (mut a, mut b) = (bundle.clone(), bundle);
    let oa = pretrain(&ds, &splits, &mut a, 5);
    let ob = pretrain(&ds, &splits, &mut b, 5);
    assert_eq!(oa, ob);
    assert_eq!(a, b);
    let per_epoch = splits.train.len().div_ceil(16);
    assert_eq!(oa.optimizer_steps + oa.skipped_batches, oa.epochs_used * per_epoch);
}

#[test]
fn pretraining_never_reads_labels() {
    let (ds, splits, bundle) = setup(2);
    let mut relabeled = ds.clone();
    relabeled.y.iter_mut().for_each(|y| *y = 1 - *y);
    let (mut a, mut b) = (bundle.clone(), bundle);
    assert_eq!(pretrain(&ds, &splits, &mut a, 3), pretrain(&relabeled, &splits, &mut b, 3));
    assert_eq!(a, b);
}

#[test]
fn finetuning_never_reads_test_rows_before_evaluation() {
    let (ds, splits, bundle) = setup(3);
    let mut altered = ds.clone();
    for &r in &splits.test {
        altered.y[r] = 1 - altered.y[r];
        for v in altered.x.row_mut(r) {
            *v = 1e6;
        }
    }
    let (mut a, mut b) = (bundle.clone(), bundle);
    let oa = finetune(&ds, &splits, &ds.y, &splits.train, &mut a, &ft_cfg(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let ob = finetune(&altered, &splits, &altered.y, &splits.train, &mut b, &ft_cfg(), &mut ChaCha8Rng::seed_from_u64(4))
        .unwrap();
    assert_eq!(oa.outcome, ob.outcome);
    assert_eq!(a, b);
}

#[test]
fn restored_weights_are_the_best_epoch() {
    let (ds, splits, mut bundle) = setup(4);
    let cfg = PretrainConfig {
        max_epochs: 20,
        patience: 2,
        ..pre_cfg()
    };
    let out = pretrain_scarf(&ds, &splits, &mut bundle, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let min = out.curves.validation.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_metric, Some(min));
    let best = out.best_epoch.unwrap();
    assert_eq!(out.curves.validation[best - 1], min);
    if out.stop_reason == StopReason::Patience {
        assert_eq!(out.epochs_used, best + 2);
    }
}

#[test]
fn corrupt_one_keeps_the_first_view_bit_identical() {
    let (ds, splits, _) = setup(5);
    let cfg = CorruptionConfig::default();
    let corruptor = Corruptor::new(&ds, &splits.train, cfg.marginal_support).unwrap();
    let batch = ds.x.select_rows(&splits.train[..16]);
    let views = corruptor.make_views(&batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0), None).unwrap();
    let bits = |m: &scarf::nn::Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&views.a), bits(&batch));
    assert_ne!(views.b, batch);
}
