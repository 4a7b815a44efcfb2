//! Single trials and benchmark sweeps.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::method::{Cotraining, Method, Pretraining, Wrapper};
use super::record::{derive_seed, trial_seed, MethodRun, RunFailure, RunKey, Setting};
use super::store::ResultsStore;
use crate::baselines::{Classifier, self_distill, self_train, tri_train, SelfTrainConfig, Targets, TrainingSet};
use crate::data::{corrupt_labels, mask_labels, prepare_trial, ProcessedDataset, Splits};
use crate::error::{Result, ScarfError};
use crate::nn::Matrix;
use crate::training::{
    cotrain, finetune_soft, pretrain_autoencoder, pretrain_discriminative, pretrain_scarf, CotrainObjective,
    FinetuneOutcome, ModelBundle, SupervisedTargets, TrainOutcome,
};

/// Labels and labeled rows of one trial after the setting is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialLabels {
    /// Indexed by dataset row; training rows may carry noise.
    pub labels: Vec<usize>,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    /// Training rows whose label was redrawn (noise setting).
    pub redrawn: Vec<usize>,
}

/// Applies `setting` to the training split. Depends only on the trial seed,
/// so every method sees the same labels.
pub fn trial_labels(
    dataset: &ProcessedDataset,
    splits: &Splits,
    setting: Setting,
    seed: u64,
    config: &ExperimentConfig,
) -> Result<TrialLabels> {
    let mut labels = dataset.y.clone();
    let mut out = TrialLabels {
        labels: Vec::new(),
        labeled: splits.train.clone(),
        unlabeled: Vec::new(),
        redrawn: Vec::new(),
    };
    match setting {
        Setting::Full => {}
        Setting::Noise30 => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "label-noise"));
            let y_train = dataset.labels_of(&splits.train);
            let noisy = corrupt_labels(&y_train, config.label_noise, dataset.num_classes(), &mut rng)?;
            for (pos, &row) in splits.train.iter().enumerate() {
                labels[row] = noisy.labels[pos];
            }
            out.redrawn = noisy.selected.iter().map(|&p| splits.train[p]).collect();
        }
        Setting::Semi25 => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "label-mask"));
            let (labeled, unlabeled) = mask_labels(&splits.train, config.labeled_fraction, &mut rng)?;
            out.labeled = labeled;
            out.unlabeled = unlabeled;
        }
    }
    out.labels = labels;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub record: MethodRun,
    pub wall_time: f64,
    pub pretrain: Option<TrainOutcome>,
    pub finetune: TrainOutcome,
    pub splits: Splits,
    pub trial_labels: TrialLabels,
}

/// Runs one (dataset, method, setting, trial).
pub fn run_trial(
    dataset_id: &str,
    dataset: &ProcessedDataset,
    method: &Method,
    setting: Setting,
    trial: usize,
    config: &ExperimentConfig,
) -> Result<TrialOutput> {
    let start = Instant::now();
    let seed = trial_seed(config.seed, dataset_id, trial);
    let data = prepare_trial(dataset, derive_seed(seed, "splits"), config.scaling)?;
    let ds = &data.dataset;
    let splits = &data.splits;
    let tl = trial_labels(ds, splits, setting, seed, config)?;
    let arch = config.arch();
    let mut bundle = ModelBundle::init(
        ds.encoded_width(),
        ds.num_classes(),
        &arch,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "init")),
    )?;
    let mut heads_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "extra-heads"));
    if method.needs_decoder() {
        bundle = bundle.with_decoder(ds.encoded_width(), &arch, &mut heads_rng)?;
    }
    if method.needs_discriminator() {
        bundle = bundle.with_discriminator(&mut heads_rng)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "train"));
    let pre_cfg = config.pretrain();
    let pretrain = match method.pretraining {
        None => None,
        Some(Pretraining::Scarf) => Some(pretrain_scarf(ds, splits, &mut bundle, &pre_cfg, &mut rng)?),
        Some(Pretraining::Autoencoder(v)) => {
            Some(pretrain_autoencoder(ds, splits, &mut bundle, v, &pre_cfg, &mut rng)?)
        }
        Some(Pretraining::Discriminative) => Some(pretrain_discriminative(ds, splits, &mut bundle, &pre_cfg, &mut rng)?),
    };
    let ft_cfg = config.finetune(method);
    let base = bundle;
    let mut train_fn = |set: &TrainingSet| -> Result<Trained> {
        let mut b = base.clone();
        let (labels, soft) = match &set.targets {
            Targets::Hard(ys) => {
                let mut labels = tl.labels.clone();
                for (&r, &y) in set.rows.iter().zip(ys) {
                    labels[r] = y;
                }
                (labels, None)
            }
            Targets::Soft(m) => (tl.labels.clone(), Some(m)),
        };
        let targets = SupervisedTargets {
            rows: &set.rows,
            labels: &labels,
            soft,
        };
        let outcome = finetune_soft(ds, splits, targets, &mut b, &ft_cfg, &mut rng)?;
        Ok(Trained { bundle: b, outcome })
    };
    let initial = TrainingSet::hard(tl.labeled.clone(), tl.labeled.iter().map(|&r| tl.labels[r]).collect());
    let final_run: FinetuneOutcome = match (method.wrapper, method.cotraining) {
        (_, Some(c)) => {
            let objective = match c {
                Cotraining::Contrastive => CotrainObjective::Contrastive,
                Cotraining::Autoencoder => CotrainObjective::Autoencoder {
                    variant: config.cotrain_ae_variant,
                },
            };
            let mut b = base.clone();
            cotrain(
                ds,
                splits,
                &tl.labels,
                &tl.labeled,
                &mut b,
                &config.cotrain(objective),
                &pre_cfg,
                &ft_cfg,
                &mut rng,
            )?
        }
        (None, None) => train_fn(&initial)?.outcome,
        (Some(Wrapper::SelfTrain), None) => {
            let st = SelfTrainConfig {
                threshold: config.self_train_threshold,
                iterations: config.self_train_iterations,
            };
            self_train(&ds.x, &tl.labels, &tl.labeled, &tl.unlabeled, &st, &mut train_fn)?
                .model
                .outcome
        }
        (Some(Wrapper::TriTrain), None) => {
            let mut boot_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "bootstrap"));
            tri_train(
                &ds.x,
                &tl.labels,
                &tl.labeled,
                &tl.unlabeled,
                config.tri_train_iterations,
                &mut boot_rng,
                &mut train_fn,
            )?
            .model
            .outcome
        }
        (Some(Wrapper::Distill), None) => {
            self_distill(&ds.x, &tl.labels, &tl.labeled, &tl.unlabeled, &mut train_fn)?
                .student
                .outcome
        }
    };
    let record = MethodRun {
        dataset_id: dataset_id.to_string(),
        method: method.name.clone(),
        setting,
        trial,
        seed,
        test_accuracy: final_run.test_accuracy,
        epochs_used: final_run.outcome.epochs_used,
        stop_reason: final_run.outcome.stop_reason,
        pretrain_epochs: pretrain.as_ref().map(|p| p.epochs_used),
        pretrain_stop_reason: pretrain.as_ref().map(|p| p.stop_reason),
    };
    Ok(TrialOutput {
        record,
        wall_time: start.elapsed().as_secs_f64(),
        pretrain,
        finetune: final_run.outcome,
        splits: data.splits.clone(),
        trial_labels: tl,
    })
}

/// A trained model together with its fine-tuning outcome.
struct Trained {
    bundle: ModelBundle,
    outcome: FinetuneOutcome,
}

impl Classifier for Trained {
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        self.bundle.predict_proba(x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Job {
    pub dataset: usize,
    pub method: usize,
    pub setting: Setting,
    pub trial: usize,
}

#[derive(Clone, Debug, Default)]
pub struct BenchmarkOutput {
    pub runs: Vec<MethodRun>,
    pub failures: Vec<RunFailure>,
    /// Jobs skipped because the store already had them.
    pub resumed: usize,
}

/// Every (dataset, method, setting, trial) combination, executed up to
/// `config.jobs` at a time. Outputs are handed to `on_done` and the store in
/// job order regardless of completion order. A failing run is recorded and
/// the sweep continues.
pub fn run_benchmark(
    datasets: &[(String, ProcessedDataset)],
    methods: &[Method],
    settings: &[Setting],
    trials: usize,
    config: &ExperimentConfig,
    mut store: Option<&mut ResultsStore>,
    mut on_done: impl FnMut(&TrialOutput) -> Result<()>,
) -> Result<BenchmarkOutput> {
    let mut jobs = Vec::new();
    for d in 0..datasets.len() {
        for &setting in settings {
            for trial in 0..trials {
                for m in 0..methods.len() {
                    jobs.push(Job {
                        dataset: d,
                        method: m,
                        setting,
                        trial,
                    });
                }
            }
        }
    }
    let key = |j: &Job| RunKey {
        dataset_id: datasets[j.dataset].0.clone(),
        method: methods[j.method].name.clone(),
        setting: j.setting,
        trial: j.trial,
    };
    let mut out = BenchmarkOutput::default();
    let pending: Vec<Job> = jobs
        .into_iter()
        .filter(|j| {
            let done = store.as_ref().is_some_and(|s| s.is_complete(&key(j)));
            out.resumed += done as usize;
            !done
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| ScarfError::Config(format!("thread pool: {e}")))?;
    for chunk in pending.chunks(config.jobs.max(1)) {
        let results: Vec<Result<TrialOutput>> = pool.install(|| {
            use rayon::prelude::*;
            chunk
                .par_iter()
                .map(|j| {
                    let (id, ds) = &datasets[j.dataset];
                    run_trial(id, ds, &methods[j.method], j.setting, j.trial, config)
                })
                .collect()
        });
        for (j, r) in chunk.iter().zip(results) {
            match r {
                Ok(t) => {
                    if let Some(s) = store.as_deref_mut() {
                        s.append_run(&t.record, t.wall_time)?;
                    }
                    on_done(&t)?;
                    out.runs.push(t.record);
                }
                Err(e) => {
                    let k = key(j);
                    let failure = RunFailure {
                        seed: trial_seed(config.seed, &k.dataset_id, k.trial),
                        key: k,
                        error: e.to_string(),
                    };
                    if let Some(s) = store.as_deref_mut() {
                        s.append_failure(&failure)?;
                    }
                    out.failures.push(failure);
                }
            }
        }
    }
    Ok(out)
}

/// Mean test accuracy per method name.
pub fn mean_accuracy(runs: &[MethodRun]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in runs {
        let e = acc.entry(r.method.clone()).or_default();
        e.0 += r.test_accuracy;
        e.1 += 1;
    }
    acc.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect()
}
