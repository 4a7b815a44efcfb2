//! Pre-training loops (contrastive, autoencoder, discriminative), supervised
//! fine-tuning and co-training, all sharing one early-stopping driver.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::mixup_batch;
use crate::corruption::{
    CorruptionConfig, CorruptionStrategy, Corruptor, LearnableMissingValues, ViewPolicy,
};
use crate::data::{ProcessedDataset, Splits};
use crate::error::{Result, ScarfError};
use crate::losses::{
    align_uniform, barlow_twins, binary_logistic, infonce, infonce_error, similarity_backward,
};
use crate::nn::{
    dropout_mask, l2_normalize_rows, l2_normalize_rows_backward, mse, one_hot, smooth_labels,
    softmax_cross_entropy, softmax_rows, Activation, AdamConfig, AdamState, Matrix, Mlp,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub hidden_width: usize,
    pub encoder_layers: usize,
    pub head_layers: usize,
    pub embedding_width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden_width: 256,
            encoder_layers: 4,
            head_layers: 2,
            embedding_width: 256,
        }
    }
}

impl ArchConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.embedding_width == 0 {
            return Err(ScarfError::Config("layer widths must be positive".into()));
        }
        if self.encoder_layers == 0 || self.head_layers == 0 {
            return Err(ScarfError::Config("networks need at least one layer".into()));
        }
        Ok(())
    }

    fn widths(&self, input: usize, layers: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(self.hidden_width, layers - 1));
        w.push(output);
        w
    }
}

/// Encoder `f`, pre-training head `g`, classification head `h`, plus the
/// optional heads used by the autoencoder and discriminative variants.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub f: Mlp,
    pub g: Mlp,
    pub h: Mlp,
    pub decoder: Option<Mlp>,
    pub discriminator: Option<Mlp>,
    pub missing_values: Option<Vec<f64>>,
}

impl ModelBundle {
    pub fn init(
        input_width: usize,
        num_classes: usize,
        arch: &ArchConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        arch.validate()?;
        if input_width == 0 || num_classes == 0 {
            return Err(ScarfError::Config(
                "input width and class count must be positive".into(),
            ));
        }
        let hidden = arch.hidden_width;
        let f = Mlp::init(
            &arch.widths(input_width, arch.encoder_layers, hidden),
            Activation::Relu,
            rng,
        )?;
        let g = Mlp::init(
            &arch.widths(hidden, arch.head_layers, arch.embedding_width),
            Activation::Identity,
            rng,
        )?;
        let h = Mlp::init(
            &arch.widths(hidden, arch.head_layers, num_classes),
            Activation::Identity,
            rng,
        )?;
        Ok(Self {
            f,
            g,
            h,
            decoder: None,
            discriminator: None,
            missing_values: None,
        })
    }

    /// Adds a decoder from the encoder output back to `output_width`.
    pub fn with_decoder(mut self, output_width: usize, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let widths = arch.widths(self.f.output_width(), arch.head_layers, output_width);
        self.decoder = Some(Mlp::init(&widths, Activation::Identity, rng)?);
        Ok(self)
    }

    /// Adds a linear projection from the normalized `g` output to one logit.
    pub fn with_discriminator(mut self, rng: &mut ChaCha8Rng) -> Result<Self> {
        let widths = [self.g.output_width(), 1];
        self.discriminator = Some(Mlp::init(&widths, Activation::Identity, rng)?);
        Ok(self)
    }

    /// Named networks in a fixed order.
    pub fn networks(&self) -> Vec<(&'static str, &Mlp)> {
        let mut out = vec![("f", &self.f), ("g", &self.g), ("h", &self.h)];
        if let Some(d) = &self.decoder {
            out.push(("decoder", d));
        }
        if let Some(d) = &self.discriminator {
            out.push(("discriminator", d));
        }
        out
    }

    /// ℓ2-normalized `g(f(x))`.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        Ok(l2_normalize_rows(&self.g.predict(&self.f.predict(x)?)?).matrix)
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.h.predict(&self.f.predict(x)?)?))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.h.predict(&self.f.predict(x)?)?.argmax_rows())
    }

    /// Accuracy of `h∘f` on `rows` against `labels` (indexed by dataset row).
    pub fn accuracy(&self, dataset: &ProcessedDataset, rows: &[usize], labels: &[usize]) -> Result<f64> {
        if rows.is_empty() {
            return Err(ScarfError::Validation("accuracy over zero rows".into()));
        }
        let pred = self.predict(&dataset.x.select_rows(rows))?;
        let hits = rows.iter().zip(&pred).filter(|(&r, &p)| labels[r] == p).count();
        Ok(hits as f64 / rows.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PretrainLoss {
    #[default]
    Infonce,
    Barlow,
    AlignUniform,
}

/// Early-stopping metric for contrastive pre-training: the pre-training loss
/// itself on the static pairs, or the InfoNCE error rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    #[default]
    Loss,
    InfonceError,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub temperature: f64,
    pub corruption: CorruptionConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_build_epochs: usize,
    pub loss: PretrainLoss,
    pub validation_metric: ValidationMetric,
    pub barlow_lambda: f64,
    pub align_weight: f64,
    pub uniform_weight: f64,
    pub uniform_cross_pairs: bool,
    pub adam: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            temperature: 1.0,
            corruption: CorruptionConfig::default(),
            max_epochs: 1000,
            patience: 3,
            val_build_epochs: 10,
            loss: PretrainLoss::Infonce,
            validation_metric: ValidationMetric::Loss,
            barlow_lambda: 5e-3,
            align_weight: 1.0,
            uniform_weight: 1.0,
            uniform_cross_pairs: false,
            adam: AdamConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(ScarfError::Config(format!(
                "contrastive batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(ScarfError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.patience == 0 {
            return Err(ScarfError::Config("patience must be at least 1".into()));
        }
        if self.val_build_epochs == 0 {
            return Err(ScarfError::Config("val_build_epochs must be at least 1".into()));
        }
        self.adam.validate()?;
        self.corruption.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub label_smoothing: f64,
    pub dropout: f64,
    pub mixup_alpha: Option<f64>,
    pub scarf_augmentation: bool,
    pub augmentation: CorruptionConfig,
    pub adam: AdamConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 200,
            patience: 3,
            label_smoothing: 0.0,
            dropout: 0.0,
            mixup_alpha: None,
            scarf_augmentation: false,
            augmentation: CorruptionConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ScarfError::Config("batch size must be positive".into()));
        }
        if self.patience == 0 {
            return Err(ScarfError::Config("patience must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(ScarfError::Config(format!(
                "label smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ScarfError::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if let Some(a) = self.mixup_alpha {
            if !(a > 0.0) {
                return Err(ScarfError::Config(format!("mixup alpha must be positive, got {a}")));
            }
        }
        self.adam.validate()?;
        if self.scarf_augmentation {
            if self.augmentation.strategy == CorruptionStrategy::MissingLearnable {
                return Err(ScarfError::Config(
                    "learnable missing values are only trained during pre-training".into(),
                ));
            }
            self.augmentation.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AutoencoderVariant {
    #[default]
    NoNoise,
    AdditiveNoise,
    ScarfCorruption,
}

impl AutoencoderVariant {
    /// Corruption applied to the network input.
    pub fn corruption(&self, base: &CorruptionConfig) -> CorruptionConfig {
        let strategy = match self {
            AutoencoderVariant::NoNoise => CorruptionStrategy::None,
            AutoencoderVariant::AdditiveNoise => CorruptionStrategy::Gaussian,
            AutoencoderVariant::ScarfCorruption => base.strategy,
        };
        CorruptionConfig {
            strategy,
            view_policy: ViewPolicy::CorruptOne,
            ..*base
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CotrainObjective {
    Contrastive,
    Autoencoder { variant: AutoencoderVariant },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CotrainConfig {
    pub lambda: f64,
    pub objective: CotrainObjective,
}

impl Default for CotrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            objective: CotrainObjective::Contrastive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

impl Curves {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,train,validation\n");
        for (e, (t, v)) in self.train.iter().zip(&self.validation).enumerate() {
            out.push_str(&format!("{},{},{}\n", e + 1, t, v));
        }
        out
    }
}

/// Patience counter: an epoch improves when its metric is strictly below the
/// best seen so far.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: Option<usize>,
    since_best: usize,
    epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(ScarfError::Config("patience must be at least 1".into()));
        }
        Ok(Self {
            patience,
            best: None,
            best_epoch: None,
            since_best: 0,
            epochs: 0,
        })
    }

    /// Records one epoch's metric; returns whether it improved.
    pub fn observe(&mut self, metric: f64) -> bool {
        self.epochs += 1;
        let improved = !metric.is_nan() && self.best.is_none_or(|b| metric < b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = Some(self.epochs);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// 1-based epoch of the best metric.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

/// 1-based epoch at which a run over `metrics` would stop on patience, if any.
pub fn patience_stop_epoch(metrics: &[f64], patience: usize) -> Result<Option<usize>> {
    let mut es = EarlyStopping::new(patience)?;
    for (e, &m) in metrics.iter().enumerate() {
        es.observe(m);
        if es.should_stop() {
            return Ok(Some(e + 1));
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub curves: Curves,
    pub epochs_used: usize,
    pub stop_reason: StopReason,
    /// 1-based; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    /// Weights after the last epoch, before the best ones were restored.
    pub final_weights: Vec<(String, Mlp)>,
    pub optimizer_steps: usize,
    pub skipped_batches: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOutcome {
    pub outcome: TrainOutcome,
    pub test_accuracy: f64,
}

struct EpochStats {
    train: f64,
    validation: f64,
}

#[derive(Default)]
struct StepCounter {
    steps: usize,
    skipped: usize,
}

trait Snapshot: Clone {
    fn named(&self) -> Vec<(String, Mlp)>;
}

fn drive<S: Snapshot>(
    state: &mut S,
    max_epochs: usize,
    patience: usize,
    mut epoch: impl FnMut(&mut S) -> Result<EpochStats>,
) -> Result<TrainOutcome> {
    let mut stopper = EarlyStopping::new(patience)?;
    let mut curves = Curves::default();
    let mut best = state.clone();
    let mut stop_reason = StopReason::MaxEpochs;
    for _ in 0..max_epochs {
        let stats = epoch(state)?;
        curves.train.push(stats.train);
        curves.validation.push(stats.validation);
        if stopper.observe(stats.validation) {
            best = state.clone();
        }
        if stopper.should_stop() {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    let final_weights = state.named();
    *state = best;
    Ok(TrainOutcome {
        epochs_used: curves.train.len(),
        curves,
        stop_reason,
        best_epoch: stopper.best_epoch(),
        best_metric: stopper.best(),
        final_weights,
        optimizer_steps: 0,
        skipped_batches: 0,
    })
}

fn shuffled(rows: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order = rows.to_vec();
    order.shuffle(rng);
    order
}

/// One stored validation batch: originals, corrupted partners, and the
/// feature indices that were corrupted in each.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationBatch {
    pub original: Matrix,
    pub corrupted: Matrix,
    pub original_indices: Vec<Vec<usize>>,
    pub corrupted_indices: Vec<Vec<usize>>,
}

/// Corrupted validation views generated once and reused every epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticValidationPairs {
    pub batches: Vec<ValidationBatch>,
}

impl StaticValidationPairs {
    pub fn num_pairs(&self) -> usize {
        self.batches.iter().map(|b| b.original.rows()).sum()
    }
}

/// Shuffles the validation rows `passes` times; each pass is cut into
/// batches of `batch_size` and every example gets one corrupted partner.
pub fn build_static_validation(
    corruptor: &Corruptor<'_>,
    val_rows: &[usize],
    config: &CorruptionConfig,
    passes: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StaticValidationPairs> {
    if val_rows.is_empty() {
        return Err(ScarfError::Validation("empty validation split".into()));
    }
    if batch_size == 0 {
        return Err(ScarfError::Config("batch size must be positive".into()));
    }
    let learnable = (config.strategy == CorruptionStrategy::MissingLearnable)
        .then(|| vec![0.0; corruptor.dataset().encoded_width()]);
    let x = &corruptor.dataset().x;
    let mut batches = Vec::new();
    for _ in 0..passes {
        for chunk in shuffled(val_rows, rng).chunks(batch_size) {
            let batch = x.select_rows(chunk);
            let v = corruptor.make_views(&batch, config, rng, learnable.as_deref())?;
            batches.push(ValidationBatch {
                original: v.a,
                corrupted: v.b,
                original_indices: v.a_indices,
                corrupted_indices: v.b_indices,
            });
        }
    }
    Ok(StaticValidationPairs { batches })
}

fn refill(batch: &Matrix, indices: &[Vec<usize>], dataset: &ProcessedDataset, values: &[f64]) -> Matrix {
    let mut out = batch.clone();
    for (i, set) in indices.iter().enumerate() {
        let row = out.row_mut(i);
        for &j in set {
            for c in dataset.blocks[j].range() {
                row[c] = values[c];
            }
        }
    }
    out
}

fn check_rows(rows: &[usize], what: &str, min: usize) -> Result<()> {
    if rows.len() < min {
        return Err(ScarfError::Validation(format!(
            "{what} needs at least {min} rows, got {}",
            rows.len()
        )));
    }
    Ok(())
}

/// Loss and gradients with respect to both normalized embeddings.
fn contrastive_objective(za: &Matrix, zb: &Matrix, config: &PretrainConfig) -> Result<(f64, Matrix, Matrix)> {
    match config.loss {
        PretrainLoss::Infonce => {
            let s = za.matmul_nt(zb)?;
            let (loss, gs) = infonce(&s, config.temperature)?;
            let (da, db) = similarity_backward(&gs, za, zb)?;
            Ok((loss, da, db))
        }
        PretrainLoss::Barlow => {
            let out = barlow_twins(za, zb, config.barlow_lambda)?;
            Ok((out.loss, out.grad_a, out.grad_b))
        }
        PretrainLoss::AlignUniform => {
            let out = align_uniform(
                za,
                zb,
                config.align_weight,
                config.uniform_weight,
                config.uniform_cross_pairs,
            )?;
            Ok((out.loss, out.grad_z, out.grad_z_tilde))
        }
    }
}

#[derive(Clone)]
struct ContrastiveState {
    f: Mlp,
    g: Mlp,
    missing: Option<LearnableMissingValues>,
}

impl Snapshot for ContrastiveState {
    fn named(&self) -> Vec<(String, Mlp)> {
        vec![("f".into(), self.f.clone()), ("g".into(), self.g.clone())]
    }
}

/// Contrastive validation metric of `f`, `g` over the static pairs. Batches
/// with fewer than two pairs carry no negatives and are skipped.
pub fn contrastive_validation_metric(
    bundle: &ModelBundle,
    dataset: &ProcessedDataset,
    pairs: &StaticValidationPairs,
    config: &PretrainConfig,
) -> Result<f64> {
    contrastive_metric(&bundle.f, &bundle.g, bundle.missing_values.as_deref(), dataset, pairs, config)
}

fn contrastive_metric(
    f: &Mlp,
    g: &Mlp,
    missing: Option<&[f64]>,
    dataset: &ProcessedDataset,
    pairs: &StaticValidationPairs,
    config: &PretrainConfig,
) -> Result<f64> {
    let embed = |x: &Matrix| -> Result<Matrix> { Ok(l2_normalize_rows(&g.predict(&f.predict(x)?)?).matrix) };
    let mut total = 0.0;
    let mut count = 0usize;
    for b in pairs.batches.iter().filter(|b| b.original.rows() >= 2) {
        let (orig, corr) = match missing {
            Some(values) => (
                refill(&b.original, &b.original_indices, dataset, values),
                refill(&b.corrupted, &b.corrupted_indices, dataset, values),
            ),
            None => (b.original.clone(), b.corrupted.clone()),
        };
        let za = embed(&orig)?;
        let zb = embed(&corr)?;
        let value = match config.validation_metric {
            ValidationMetric::Loss => contrastive_objective(&za, &zb, config)?.0,
            ValidationMetric::InfonceError => infonce_error(&za.matmul_nt(&zb)?)?,
        };
        total += value * za.rows() as f64;
        count += za.rows();
    }
    if count == 0 {
        return Err(ScarfError::Validation(
            "no validation batch has two or more pairs".into(),
        ));
    }
    Ok(total / count as f64)
}

/// Builds the static pairs from `splits.validation` and runs
/// [`pretrain_scarf_with`].
pub fn pretrain_scarf(
    dataset: &ProcessedDataset,
    splits: &Splits,
    bundle: &mut ModelBundle,
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    let corruptor = Corruptor::new(dataset, &splits.train, config.corruption.marginal_support)?;
    let pairs = build_static_validation(
        &corruptor,
        &splits.validation,
        &config.corruption,
        config.val_build_epochs,
        config.batch_size,
        rng,
    )?;
    pretrain_scarf_with(dataset, &splits.train, &pairs, bundle, config, rng)
}

/// Contrastive pre-training of `f` and `g` on `train_rows` with early
/// stopping on `pairs`. Labels are never read.
pub fn pretrain_scarf_with(
    dataset: &ProcessedDataset,
    train_rows: &[usize],
    pairs: &StaticValidationPairs,
    bundle: &mut ModelBundle,
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_rows(train_rows, "contrastive pre-training", 2)?;
    let corruptor = Corruptor::new(dataset, train_rows, config.corruption.marginal_support)?;
    let learnable = config.corruption.strategy == CorruptionStrategy::MissingLearnable;
    let mut state = ContrastiveState {
        f: bundle.f.clone(),
        g: bundle.g.clone(),
        missing: learnable.then(|| LearnableMissingValues::zeros(dataset.encoded_width(), config.adam)),
    };
    let mut adam_f = AdamState::for_mlp(config.adam, &state.f);
    let mut adam_g = AdamState::for_mlp(config.adam, &state.g);
    let mut counter = StepCounter::default();
    let bs = config.batch_size;
    let mut outcome = drive(&mut state, config.max_epochs, config.patience, |s: &mut ContrastiveState| {
            let mut total = 0.0;
            let mut seen = 0usize;
            for chunk in shuffled(train_rows, rng).chunks(bs) {
                if chunk.len() < 2 {
                    counter.skipped += 1;
                    continue;
                }
                let n = chunk.len();
                let batch = dataset.x.select_rows(chunk);
                let values = s.missing.as_ref().map(|m| m.values.clone());
                let views = corruptor.make_views(&batch, &config.corruption, rng, values.as_deref())?;
                let stacked = Matrix::vstack(&[&views.a, &views.b])?;
                let e = s.f.forward(&stacked)?;
                let p = s.g.forward(&e)?;
                let norm = l2_normalize_rows(&p);
                let za = norm.matrix.slice_rows(0, n);
                let zb = norm.matrix.slice_rows(n, 2 * n);
                let (loss, da, db) = contrastive_objective(&za, &zb, config)?;
                let dz = Matrix::vstack(&[&da, &db])?;
                let dp = l2_normalize_rows_backward(&norm, &dz)?;
                let (gg, de) = s.g.backward(&dp)?;
                let (gf, dx) = s.f.backward(&de)?;
                adam_f.step_mlp(&mut s.f, &gf)?;
                adam_g.step_mlp(&mut s.g, &gg)?;
                if let Some(m) = s.missing.as_mut() {
                    let mut grad = m.gradient(dataset, &views.a_indices, &dx.slice_rows(0, n));
                    let gb = m.gradient(dataset, &views.b_indices, &dx.slice_rows(n, 2 * n));
                    grad.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
                    m.step(&grad)?;
                }
                counter.steps += 1;
                total += loss * n as f64;
                seen += n;
            }
            let values = s.missing.as_ref().map(|m| m.values.as_slice());
            let validation = contrastive_metric(&s.f, &s.g, values, dataset, pairs, config)?;
            Ok(EpochStats {
                train: total / seen.max(1) as f64,
                validation,
            })
    })?;
    outcome.optimizer_steps = counter.steps;
    outcome.skipped_batches = counter.skipped;
    bundle.f = state.f;
    bundle.g = state.g;
    bundle.missing_values = state.missing.map(|m| m.values);
    bundle.f.clear_cache();
    bundle.g.clear_cache();
    Ok(outcome)
}

#[derive(Clone)]
struct AutoencoderState {
    f: Mlp,
    decoder: Mlp,
}

impl Snapshot for AutoencoderState {
    fn named(&self) -> Vec<(String, Mlp)> {
        vec![("f".into(), self.f.clone()), ("decoder".into(), self.decoder.clone())]
    }
}

/// Mean reconstruction MSE of `decoder(f(corrupted))` against the originals.
pub fn reconstruction_metric(f: &Mlp, decoder: &Mlp, pairs: &StaticValidationPairs) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for b in &pairs.batches {
        let out = decoder.predict(&f.predict(&b.corrupted)?)?;
        total += mse(&out, &b.original)?.0 * b.original.rows() as f64;
        count += b.original.rows();
    }
    Ok(total / count.max(1) as f64)
}

/// Trains `f` and the decoder to reconstruct the clean input from a
/// (possibly corrupted) copy with MSE.
pub fn pretrain_autoencoder(
    dataset: &ProcessedDataset,
    splits: &Splits,
    bundle: &mut ModelBundle,
    variant: AutoencoderVariant,
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    let decoder = bundle
        .decoder
        .clone()
        .ok_or_else(|| ScarfError::Config("autoencoder pre-training needs a decoder head".into()))?;
    if decoder.output_width() != dataset.encoded_width() {
        return Err(ScarfError::Config(format!(
            "decoder output width {} does not match encoded width {}",
            decoder.output_width(),
            dataset.encoded_width()
        )));
    }
    let corruption = variant.corruption(&config.corruption);
    if corruption.strategy == CorruptionStrategy::MissingLearnable {
        return Err(ScarfError::Config(
            "learnable missing values are only supported for contrastive pre-training".into(),
        ));
    }
    check_rows(&splits.train, "autoencoder pre-training", 1)?;
    let corruptor = Corruptor::new(dataset, &splits.train, corruption.marginal_support)?;
    let pairs = build_static_validation(
        &corruptor,
        &splits.validation,
        &corruption,
        config.val_build_epochs,
        config.batch_size,
        rng,
    )?;
    let mut state = AutoencoderState {
        f: bundle.f.clone(),
        decoder,
    };
    let mut adam_f = AdamState::for_mlp(config.adam, &state.f);
    let mut adam_d = AdamState::for_mlp(config.adam, &state.decoder);
    let mut counter = StepCounter::default();
    let mut outcome = drive(&mut state, config.max_epochs, config.patience, |s| {
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in shuffled(&splits.train, rng).chunks(config.batch_size) {
            let batch = dataset.x.select_rows(chunk);
            let input = corruptor.corrupt(&batch, &corruption, rng, None)?.batch;
            let e = s.f.forward(&input)?;
            let out = s.decoder.forward(&e)?;
            let (loss, d) = mse(&out, &batch)?;
            let (gd, de) = s.decoder.backward(&d)?;
            let (gf, _) = s.f.backward(&de)?;
            adam_f.step_mlp(&mut s.f, &gf)?;
            adam_d.step_mlp(&mut s.decoder, &gd)?;
            counter.steps += 1;
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        Ok(EpochStats {
            train: total / seen.max(1) as f64,
            validation: reconstruction_metric(&s.f, &s.decoder, &pairs)?,
        })
    })?;
    outcome.optimizer_steps = counter.steps;
    bundle.f = state.f;
    bundle.decoder = Some(state.decoder);
    bundle.f.clear_cache();
    Ok(outcome)
}

#[derive(Clone)]
struct DiscriminativeState {
    f: Mlp,
    g: Mlp,
    disc: Mlp,
}

impl Snapshot for DiscriminativeState {
    fn named(&self) -> Vec<(String, Mlp)> {
        vec![
            ("f".into(), self.f.clone()),
            ("g".into(), self.g.clone()),
            ("discriminator".into(), self.disc.clone()),
        ]
    }
}

fn disc_logits(f: &Mlp, g: &Mlp, disc: &Mlp, x: &Matrix) -> Result<Vec<f64>> {
    let z = l2_normalize_rows(&g.predict(&f.predict(x)?)?).matrix;
    Ok(disc.predict(&z)?.into_vec())
}

/// Fraction of misclassified items over the static pairs: originals are
/// class 0, corrupted copies class 1, and a logit above 0 predicts class 1.
pub fn discrimination_error(f: &Mlp, g: &Mlp, disc: &Mlp, pairs: &StaticValidationPairs) -> Result<f64> {
    let mut wrong = 0usize;
    let mut total = 0usize;
    for b in &pairs.batches {
        wrong += disc_logits(f, g, disc, &b.original)?.iter().filter(|&&l| l > 0.0).count();
        wrong += disc_logits(f, g, disc, &b.corrupted)?.iter().filter(|&&l| l <= 0.0).count();
        total += 2 * b.original.rows();
    }
    Ok(wrong as f64 / total.max(1) as f64)
}

/// Logistic discrimination of originals against corrupted copies.
pub fn pretrain_discriminative(
    dataset: &ProcessedDataset,
    splits: &Splits,
    bundle: &mut ModelBundle,
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    let disc = bundle
        .discriminator
        .clone()
        .ok_or_else(|| ScarfError::Config("discriminative pre-training needs a logit projection".into()))?;
    let corruption = CorruptionConfig {
        view_policy: ViewPolicy::CorruptOne,
        ..config.corruption
    };
    if corruption.strategy == CorruptionStrategy::MissingLearnable {
        return Err(ScarfError::Config(
            "learnable missing values are only supported for contrastive pre-training".into(),
        ));
    }
    check_rows(&splits.train, "discriminative pre-training", 1)?;
    let corruptor = Corruptor::new(dataset, &splits.train, corruption.marginal_support)?;
    let pairs = build_static_validation(
        &corruptor,
        &splits.validation,
        &corruption,
        config.val_build_epochs,
        config.batch_size,
        rng,
    )?;
    let mut state = DiscriminativeState {
        f: bundle.f.clone(),
        g: bundle.g.clone(),
        disc,
    };
    let mut adam_f = AdamState::for_mlp(config.adam, &state.f);
    let mut adam_g = AdamState::for_mlp(config.adam, &state.g);
    let mut adam_d = AdamState::for_mlp(config.adam, &state.disc);
    let mut counter = StepCounter::default();
    let mut outcome = drive(&mut state, config.max_epochs, config.patience, |s| {
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in shuffled(&splits.train, rng).chunks(config.batch_size) {
            let n = chunk.len();
            let batch = dataset.x.select_rows(chunk);
            let corrupted = corruptor.corrupt(&batch, &corruption, rng, None)?.batch;
            let stacked = Matrix::vstack(&[&batch, &corrupted])?;
            let e = s.f.forward(&stacked)?;
            let p = s.g.forward(&e)?;
            let norm = l2_normalize_rows(&p);
            let logits = s.disc.forward(&norm.matrix)?;
            let labels: Vec<f64> = (0..2 * n).map(|i| if i < n { 0.0 } else { 1.0 }).collect();
            let (loss, gl) = binary_logistic(logits.data(), &labels)?;
            let (gd, dz) = s.disc.backward(&Matrix::column(&gl))?;
            let dp = l2_normalize_rows_backward(&norm, &dz)?;
            let (gg, de) = s.g.backward(&dp)?;
            let (gf, _) = s.f.backward(&de)?;
            adam_f.step_mlp(&mut s.f, &gf)?;
            adam_g.step_mlp(&mut s.g, &gg)?;
            adam_d.step_mlp(&mut s.disc, &gd)?;
            counter.steps += 1;
            total += loss * n as f64;
            seen += n;
        }
        Ok(EpochStats {
            train: total / seen.max(1) as f64,
            validation: discrimination_error(&s.f, &s.g, &s.disc, &pairs)?,
        })
    })?;
    outcome.optimizer_steps = counter.steps;
    bundle.f = state.f;
    bundle.g = state.g;
    bundle.discriminator = Some(state.disc);
    bundle.f.clear_cache();
    bundle.g.clear_cache();
    Ok(outcome)
}

/// Classification error of `h∘f` on `rows`.
fn classification_error(f: &Mlp, h: &Mlp, dataset: &ProcessedDataset, rows: &[usize], labels: &[usize]) -> Result<f64> {
    let pred = h.predict(&f.predict(&dataset.x.select_rows(rows))?)?.argmax_rows();
    let wrong = rows.iter().zip(&pred).filter(|(&r, &p)| labels[r] != p).count();
    Ok(wrong as f64 / rows.len() as f64)
}

#[derive(Clone)]
struct SupervisedState {
    f: Mlp,
    h: Mlp,
    aux: Option<Mlp>,
}

impl Snapshot for SupervisedState {
    fn named(&self) -> Vec<(String, Mlp)> {
        let mut out = vec![("f".into(), self.f.clone()), ("h".into(), self.h.clone())];
        if let Some(a) = &self.aux {
            out.push(("aux".into(), a.clone()));
        }
        out
    }
}

/// What the supervised loop trains on: the rows and their targets.
#[derive(Clone, Copy, Debug)]
pub struct SupervisedTargets<'a> {
    /// Training rows.
    pub rows: &'a [usize],
    /// Hard labels indexed by dataset row (validation and test use these too).
    pub labels: &'a [usize],
    /// Optional soft targets, one row per entry of `rows`.
    pub soft: Option<&'a Matrix>,
}

struct Auxiliary<'a> {
    lambda: f64,
    objective: CotrainObjective,
    pretrain: &'a PretrainConfig,
    rng: ChaCha8Rng,
}

/// Separate generator for the auxiliary term so the main stream matches a
/// plain fine-tuning run.
fn auxiliary_stream(rng: &ChaCha8Rng) -> ChaCha8Rng {
    let mut aux = ChaCha8Rng::from_seed(rng.get_seed());
    aux.set_stream(rng.get_stream().wrapping_add(1));
    aux
}

/// `f` and `h` trained on cross-entropy over the labeled rows with early
/// stopping on validation error; test accuracy is computed once at the end.
pub fn finetune(
    dataset: &ProcessedDataset,
    splits: &Splits,
    labels: &[usize],
    labeled: &[usize],
    bundle: &mut ModelBundle,
    config: &FinetuneConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FinetuneOutcome> {
    let targets = SupervisedTargets {
        rows: labeled,
        labels,
        soft: None,
    };
    supervised(dataset, splits, targets, bundle, config, None, rng)
}

/// [`finetune`] against explicit soft targets.
pub fn finetune_soft(
    dataset: &ProcessedDataset,
    splits: &Splits,
    targets: SupervisedTargets<'_>,
    bundle: &mut ModelBundle,
    config: &FinetuneConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FinetuneOutcome> {
    supervised(dataset, splits, targets, bundle, config, None, rng)
}

/// Minimizes `L_supervised + λ · L_aux` in one loop, the auxiliary term
/// computed on the same mini-batch.
#[allow(clippy::too_many_arguments)]
pub fn cotrain(
    dataset: &ProcessedDataset,
    splits: &Splits,
    labels: &[usize],
    labeled: &[usize],
    bundle: &mut ModelBundle,
    cotrain: &CotrainConfig,
    pretrain: &PretrainConfig,
    finetune: &FinetuneConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FinetuneOutcome> {
    if !(cotrain.lambda >= 0.0) || !cotrain.lambda.is_finite() {
        return Err(ScarfError::Config(format!(
            "co-training weight must be non-negative, got {}",
            cotrain.lambda
        )));
    }
    pretrain.validate()?;
    if pretrain.corruption.strategy == CorruptionStrategy::MissingLearnable {
        return Err(ScarfError::Config(
            "learnable missing values are only supported for contrastive pre-training".into(),
        ));
    }
    if let CotrainObjective::Autoencoder { .. } = cotrain.objective {
        if bundle.decoder.is_none() {
            return Err(ScarfError::Config("autoencoder co-training needs a decoder head".into()));
        }
    }
    let aux = Auxiliary {
        lambda: cotrain.lambda,
        objective: cotrain.objective,
        pretrain,
        rng: auxiliary_stream(rng),
    };
    let targets = SupervisedTargets {
        rows: labeled,
        labels,
        soft: None,
    };
    supervised(dataset, splits, targets, bundle, finetune, Some(aux), rng)
}

fn supervised(
    dataset: &ProcessedDataset,
    splits: &Splits,
    targets: SupervisedTargets<'_>,
    bundle: &mut ModelBundle,
    config: &FinetuneConfig,
    mut aux: Option<Auxiliary<'_>>,
    rng: &mut ChaCha8Rng,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    check_rows(targets.rows, "fine-tuning", 1)?;
    check_rows(&splits.validation, "fine-tuning validation", 1)?;
    check_rows(&splits.test, "test evaluation", 1)?;
    let k = bundle.h.output_width();
    if targets.labels.len() != dataset.num_rows() {
        return Err(ScarfError::shape("finetune labels", dataset.num_rows(), targets.labels.len()));
    }
    if let Some(&bad) = targets.labels.iter().find(|&&y| y >= k) {
        return Err(ScarfError::Validation(format!("label {bad} out of range for {k} classes")));
    }
    if let Some(soft) = targets.soft {
        if soft.shape() != (targets.rows.len(), k) {
            return Err(ScarfError::shape(
                "soft targets",
                format!("{:?}", (targets.rows.len(), k)),
                format!("{:?}", soft.shape()),
            ));
        }
    }
    let need_corruptor = config.scarf_augmentation || aux.is_some();
    let support = aux
        .as_ref()
        .map(|a| a.pretrain.corruption.marginal_support)
        .unwrap_or(config.augmentation.marginal_support);
    let corruptor = if need_corruptor {
        Some(Corruptor::new(dataset, &splits.train, support)?)
    } else {
        None
    };
    // position of each training row inside `targets.rows`, for soft targets
    let positions: std::collections::HashMap<usize, usize> =
        targets.rows.iter().enumerate().map(|(p, &r)| (r, p)).collect();
    let aux_net = match aux.as_ref().map(|a| a.objective) {
        Some(CotrainObjective::Contrastive) => Some(bundle.g.clone()),
        Some(CotrainObjective::Autoencoder { .. }) => bundle.decoder.clone(),
        None => None,
    };
    let mut state = SupervisedState {
        f: bundle.f.clone(),
        h: bundle.h.clone(),
        aux: aux_net,
    };
    let mut adam_f = AdamState::for_mlp(config.adam, &state.f);
    let mut adam_h = AdamState::for_mlp(config.adam, &state.h);
    let mut adam_aux = state.aux.as_ref().map(|a| AdamState::for_mlp(config.adam, a));
    let mut counter = StepCounter::default();
    let rate = config.dropout;
    let mut outcome = drive(&mut state, config.max_epochs, config.patience, |s| {
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in shuffled(targets.rows, rng).chunks(config.batch_size) {
            let n = chunk.len();
            let clean = dataset.x.select_rows(chunk);
            let mut x = match (&corruptor, config.scarf_augmentation) {
                (Some(c), true) => c.corrupt(&clean, &config.augmentation, rng, None)?.batch,
                _ => clean.clone(),
            };
            let mut y = match targets.soft {
                Some(soft) => soft.select_rows(&chunk.iter().map(|r| positions[r]).collect::<Vec<_>>()),
                None => one_hot(&chunk.iter().map(|&r| targets.labels[r]).collect::<Vec<_>>(), k)?,
            };
            if config.label_smoothing > 0.0 {
                y = smooth_labels(&y, config.label_smoothing, k)?;
            }
            if let Some(alpha) = config.mixup_alpha {
                (x, y) = mixup_batch(&x, &y, alpha, rng)?;
            }
            let mut e = s.f.forward_with_dropout(&x, rate, rng)?;
            let mask = if rate > 0.0 {
                let m = dropout_mask(e.rows(), e.cols(), rate, rng)?;
                e = e.zip_map(&m, |a, b| a * b)?;
                Some(m)
            } else {
                None
            };
            let logits = s.h.forward_with_dropout(&e, rate, rng)?;
            let (sup_loss, gl) = softmax_cross_entropy(&logits, &y)?;
            let (gh, mut de) = s.h.backward(&gl)?;
            if let Some(m) = &mask {
                de = de.zip_map(m, |a, b| a * b)?;
            }
            let (mut gf, _) = s.f.backward(&de)?;
            let mut loss = sup_loss;
            if let (Some(a), Some(net), Some(c)) = (aux.as_mut(), s.aux.as_mut(), corruptor.as_ref()) {
                if let Some((aux_loss, mut gf_aux, mut g_net)) = auxiliary_term(&mut s.f, net, c, &clean, a)? {
                    gf_aux.scale(a.lambda);
                    g_net.scale(a.lambda);
                    gf.add_assign(&gf_aux)?;
                    loss += a.lambda * aux_loss;
                    adam_aux
                        .as_mut()
                        .expect("aux optimizer exists with aux net")
                        .step_mlp(net, &g_net)?;
                }
            }
            adam_f.step_mlp(&mut s.f, &gf)?;
            adam_h.step_mlp(&mut s.h, &gh)?;
            counter.steps += 1;
            total += loss * n as f64;
            seen += n;
        }
        Ok(EpochStats {
            train: total / seen.max(1) as f64,
            validation: classification_error(&s.f, &s.h, dataset, &splits.validation, targets.labels)?,
        })
    })?;
    outcome.optimizer_steps = counter.steps;
    bundle.f = state.f;
    bundle.h = state.h;
    match aux.map(|a| a.objective) {
        Some(CotrainObjective::Contrastive) => bundle.g = state.aux.expect("aux net"),
        Some(CotrainObjective::Autoencoder { .. }) => bundle.decoder = state.aux,
        None => {}
    }
    bundle.f.clear_cache();
    bundle.h.clear_cache();
    let test_accuracy = bundle.accuracy(dataset, &splits.test, targets.labels)?;
    Ok(FinetuneOutcome {
        outcome,
        test_accuracy,
    })
}

/// Auxiliary loss on the clean mini-batch with gradients for `f` and the
/// auxiliary network. `None` when the batch is too small for a contrastive
/// term.
fn auxiliary_term(
    f: &mut Mlp,
    net: &mut Mlp,
    corruptor: &Corruptor<'_>,
    clean: &Matrix,
    aux: &mut Auxiliary<'_>,
) -> Result<Option<(f64, crate::nn::MlpGrads, crate::nn::MlpGrads)>> {
    let n = clean.rows();
    match aux.objective {
        CotrainObjective::Contrastive => {
            if n < 2 {
                return Ok(None);
            }
            let views = corruptor.make_views(clean, &aux.pretrain.corruption, &mut aux.rng, None)?;
            let stacked = Matrix::vstack(&[&views.a, &views.b])?;
            let e = f.forward(&stacked)?;
            let p = net.forward(&e)?;
            let norm = l2_normalize_rows(&p);
            let za = norm.matrix.slice_rows(0, n);
            let zb = norm.matrix.slice_rows(n, 2 * n);
            let (loss, da, db) = contrastive_objective(&za, &zb, aux.pretrain)?;
            let dp = l2_normalize_rows_backward(&norm, &Matrix::vstack(&[&da, &db])?)?;
            let (g_net, de) = net.backward(&dp)?;
            let (gf, _) = f.backward(&de)?;
            Ok(Some((loss, gf, g_net)))
        }
        CotrainObjective::Autoencoder { variant } => {
            let corruption = variant.corruption(&aux.pretrain.corruption);
            let input = corruptor.corrupt(clean, &corruption, &mut aux.rng, None)?.batch;
            let e = f.forward(&input)?;
            let out = net.forward(&e)?;
            let (loss, d) = mse(&out, clean)?;
            let (g_net, de) = net.backward(&d)?;
            let (gf, _) = f.backward(&de)?;
            Ok(Some((loss, gf, g_net)))
        }
    }
}
