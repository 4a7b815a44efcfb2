//! Corrupted-view generation: which features to corrupt and what to replace
//! them with.
//!
//! Random draws happen in a fixed order so runs are reproducible: first the
//! index sets for every example of the batch, then replacement values,
//! example-major, features in ascending order.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureColumn, ProcessedDataset, RawValue};
use crate::error::{Result, ScarfError};
use crate::nn::{AdamConfig, AdamState, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionStrategy {
    /// Replace with draws from each feature's empirical marginal.
    #[default]
    Marginal,
    None,
    Mean,
    Gaussian,
    /// Copy the selected features from one random training row per example.
    Joint,
    MissingLearnable,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexSelection {
    #[default]
    FixedCount,
    Bernoulli,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ViewPolicy {
    #[default]
    CorruptOne,
    CorruptBoth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexSharing {
    #[default]
    PerExample,
    SharedBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DonorSource {
    #[default]
    PerExample,
    SingleRow,
}

/// How the marginal of a feature is read off the training rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarginalSupport {
    /// Every training row counts once (row-weighted empirical distribution).
    #[default]
    Multiset,
    /// Uniform over the distinct values.
    Set,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub strategy: CorruptionStrategy,
    pub rate: f64,
    pub index_selection: IndexSelection,
    pub view_policy: ViewPolicy,
    pub index_sharing: IndexSharing,
    pub donor: DonorSource,
    pub gaussian_sigma: f64,
    pub marginal_support: MarginalSupport,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            strategy: CorruptionStrategy::Marginal,
            rate: 0.6,
            index_selection: IndexSelection::FixedCount,
            view_policy: ViewPolicy::CorruptOne,
            index_sharing: IndexSharing::PerExample,
            donor: DonorSource::PerExample,
            gaussian_sigma: 0.5,
            marginal_support: MarginalSupport::Multiset,
        }
    }
}

impl CorruptionConfig {
    pub fn with_strategy(strategy: CorruptionStrategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(ScarfError::Config(format!(
                "corruption rate must lie in [0, 1], got {}",
                self.rate
            )));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(ScarfError::Config(format!(
                "gaussian sigma must be positive, got {}",
                self.gaussian_sigma
            )));
        }
        if self.donor == DonorSource::SingleRow
            && !matches!(
                self.strategy,
                CorruptionStrategy::Marginal | CorruptionStrategy::Joint
            )
        {
            return Err(ScarfError::Config(
                "a single-row donor only applies to marginal or joint corruption".into(),
            ));
        }
        Ok(())
    }

    /// `q = ⌊c · M⌋`. A 1e-9 slack absorbs products like 0.29 · 100 that land
    /// just below an integer.
    pub fn corrupted_count(&self, num_features: usize) -> usize {
        ((self.rate * num_features as f64 + 1e-9).floor() as usize).min(num_features)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PoolColumn {
    Numerical(Vec<f64>),
    Categorical(Vec<Option<usize>>),
}

impl PoolColumn {
    pub fn len(&self) -> usize {
        match self {
            PoolColumn::Numerical(v) => v.len(),
            PoolColumn::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, k: usize) -> RawValue {
        match self {
            PoolColumn::Numerical(v) => RawValue::Numerical(v[k]),
            PoolColumn::Categorical(v) => RawValue::Categorical(v[k]),
        }
    }

    pub fn contains(&self, value: RawValue) -> bool {
        match (self, value) {
            (PoolColumn::Numerical(v), RawValue::Numerical(x)) => {
                v.iter().any(|p| p.to_bits() == x.to_bits())
            }
            (PoolColumn::Categorical(v), RawValue::Categorical(x)) => v.contains(&x),
            _ => false,
        }
    }
}

/// Per-feature training values that marginal corruption draws from.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalPool {
    pub columns: Vec<PoolColumn>,
    pub support: MarginalSupport,
}

impl MarginalPool {
    pub fn build(
        dataset: &ProcessedDataset,
        train_rows: &[usize],
        support: MarginalSupport,
    ) -> Result<Self> {
        if train_rows.is_empty() {
            return Err(ScarfError::Validation(
                "marginal pool needs a nonempty training split".into(),
            ));
        }
        let columns = dataset
            .columns
            .iter()
            .map(|col| match col {
                FeatureColumn::Numerical(v) => {
                    let mut vals: Vec<f64> = train_rows.iter().map(|&r| v[r]).collect();
                    if support == MarginalSupport::Set {
                        vals.sort_by(f64::total_cmp);
                        vals.dedup_by(|a, b| a.to_bits() == b.to_bits());
                    }
                    PoolColumn::Numerical(vals)
                }
                FeatureColumn::Categorical(v) => {
                    let mut vals: Vec<Option<usize>> = train_rows.iter().map(|&r| v[r]).collect();
                    if support == MarginalSupport::Set {
                        vals.sort_unstable();
                        vals.dedup();
                    }
                    PoolColumn::Categorical(vals)
                }
            })
            .collect();
        Ok(Self { columns, support })
    }

    pub fn draw<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> RawValue {
        let col = &self.columns[j];
        col.get(rng.random_range(0..col.len()))
    }
}

/// Picks the raw feature indices to corrupt for each of `batch_size` examples.
/// Each returned set is sorted ascending.
pub fn select_indices<R: Rng + ?Sized>(
    num_features: usize,
    config: &CorruptionConfig,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let draws = match config.index_sharing {
        IndexSharing::PerExample => batch_size,
        IndexSharing::SharedBatch => batch_size.min(1),
    };
    let mut sets: Vec<Vec<usize>> = (0..draws)
        .map(|_| select_one(num_features, config, rng))
        .collect();
    if config.index_sharing == IndexSharing::SharedBatch {
        let shared = sets.pop().unwrap_or_default();
        sets = vec![shared; batch_size];
    }
    sets
}

fn select_one<R: Rng + ?Sized>(m: usize, config: &CorruptionConfig, rng: &mut R) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    match config.index_selection {
        IndexSelection::FixedCount => {
            let q = config.corrupted_count(m);
            let mut set = rand::seq::index::sample(rng, m, q).into_vec();
            set.sort_unstable();
            set
        }
        IndexSelection::Bernoulli => bernoulli_nonempty(m, config.rate, rng),
    }
}

/// Independent Bernoulli(c) inclusion of each index, conditioned on the set
/// being nonempty. Sampled directly: the first included index k has
/// probability ∝ (1-c)^k c, then every later index is an independent coin.
/// This has exactly the distribution of resampling until nonempty.
fn bernoulli_nonempty<R: Rng + ?Sized>(m: usize, c: f64, rng: &mut R) -> Vec<usize> {
    if c <= 0.0 {
        return Vec::new();
    }
    if c >= 1.0 {
        return (0..m).collect();
    }
    let keep = 1.0 - c;
    let p_nonempty = 1.0 - keep.powi(m as i32);
    let u: f64 = rng.random::<f64>() * p_nonempty;
    let first = (((1.0 - u).ln() / keep.ln()).floor() as usize).min(m - 1);
    let mut set = vec![first];
    for j in first + 1..m {
        if rng.random::<f64>() < c {
            set.push(j);
        }
    }
    set
}

/// Output of one corruption pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionDraw {
    pub indices: Vec<Vec<usize>>,
    pub batch: Matrix,
}

/// Trainable fill-in values for the `missing_learnable` strategy, one per
/// encoded column, with their own Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnableMissingValues {
    pub values: Vec<f64>,
    adam: AdamState,
}

impl LearnableMissingValues {
    pub fn zeros(width: usize, adam: AdamConfig) -> Self {
        Self {
            values: vec![0.0; width],
            adam: AdamState::new(adam, &[width]),
        }
    }

    /// Sums `input_grad` over the coordinates that were filled with learnable
    /// values in `draw`.
    pub fn gradient(
        &self,
        dataset: &ProcessedDataset,
        indices: &[Vec<usize>],
        input_grad: &Matrix,
    ) -> Vec<f64> {
        let mut g = vec![0.0; self.values.len()];
        for (i, set) in indices.iter().enumerate() {
            for &j in set {
                for c in dataset.blocks[j].range() {
                    g[c] += input_grad.get(i, c);
                }
            }
        }
        g
    }

    pub fn step(&mut self, grad: &[f64]) -> Result<()> {
        self.adam.step(&mut [&mut self.values], &[grad])
    }
}

/// Applies corruption strategies to encoded batches of one dataset.
#[derive(Clone, Debug)]
pub struct Corruptor<'a> {
    dataset: &'a ProcessedDataset,
    donor_rows: Vec<usize>,
    pool: MarginalPool,
    column_means: Vec<f64>,
}

impl<'a> Corruptor<'a> {
    /// `train_rows` supply the marginals, the donors, and the column means.
    pub fn new(
        dataset: &'a ProcessedDataset,
        train_rows: &[usize],
        support: MarginalSupport,
    ) -> Result<Self> {
        let pool = MarginalPool::build(dataset, train_rows, support)?;
        let column_means = dataset.x.select_rows(train_rows).column_means();
        Ok(Self {
            dataset,
            donor_rows: train_rows.to_vec(),
            pool,
            column_means,
        })
    }

    pub fn pool(&self) -> &MarginalPool {
        &self.pool
    }

    pub fn dataset(&self) -> &ProcessedDataset {
        self.dataset
    }

    /// Selects indices, then corrupts.
    pub fn corrupt<R: Rng + ?Sized>(
        &self,
        batch: &Matrix,
        config: &CorruptionConfig,
        rng: &mut R,
        learnable: Option<&[f64]>,
    ) -> Result<CorruptionDraw> {
        config.validate()?;
        if config.strategy == CorruptionStrategy::None {
            return Ok(CorruptionDraw {
                indices: vec![Vec::new(); batch.rows()],
                batch: batch.clone(),
            });
        }
        let indices = select_indices(self.dataset.num_features(), config, batch.rows(), rng);
        let out = self.corrupt_batch(batch, &indices, config, rng, learnable)?;
        Ok(CorruptionDraw {
            indices,
            batch: out,
        })
    }

    /// Replaces the features named in `indices[i]` of each row `i` of `batch`.
    pub fn corrupt_batch<R: Rng + ?Sized>(
        &self,
        batch: &Matrix,
        indices: &[Vec<usize>],
        config: &CorruptionConfig,
        rng: &mut R,
        learnable: Option<&[f64]>,
    ) -> Result<Matrix> {
        config.validate()?;
        let ds = self.dataset;
        if batch.cols() != ds.encoded_width() {
            return Err(ScarfError::shape(
                "corrupt_batch",
                ds.encoded_width(),
                batch.cols(),
            ));
        }
        if indices.len() != batch.rows() {
            return Err(ScarfError::shape("corrupt_batch", batch.rows(), indices.len()));
        }
        if let Some(bad) = indices.iter().flatten().find(|&&j| j >= ds.num_features()) {
            return Err(ScarfError::Validation(format!(
                "feature index {bad} out of range for {} features",
                ds.num_features()
            )));
        }
        let learnable = match (config.strategy, learnable) {
            (CorruptionStrategy::MissingLearnable, None) => {
                return Err(ScarfError::Config(
                    "missing_learnable corruption requires learnable values".into(),
                ))
            }
            (CorruptionStrategy::MissingLearnable, Some(v)) if v.len() != ds.encoded_width() => {
                return Err(ScarfError::shape(
                    "corrupt_batch",
                    ds.encoded_width(),
                    v.len(),
                ))
            }
            (_, l) => l,
        };
        let mut out = batch.clone();
        if config.strategy == CorruptionStrategy::None {
            return Ok(out);
        }
        let single_donor = match config.donor {
            DonorSource::SingleRow => Some(self.draw_donor(rng)),
            DonorSource::PerExample => None,
        };
        for (i, set) in indices.iter().enumerate() {
            if set.is_empty() {
                continue;
            }
            let row = out.row_mut(i);
            match config.strategy {
                CorruptionStrategy::None => {}
                CorruptionStrategy::Marginal | CorruptionStrategy::Joint => {
                    let donor = match (single_donor, config.strategy) {
                        (Some(r), _) => Some(r),
                        (None, CorruptionStrategy::Joint) => Some(self.draw_donor(rng)),
                        _ => None,
                    };
                    for &j in set {
                        let value = match donor {
                            Some(r) => ds.raw_value(j, r),
                            None => self.pool.draw(j, rng),
                        };
                        ds.encode_value(j, value, row);
                    }
                }
                CorruptionStrategy::Mean => {
                    for &j in set {
                        for c in ds.blocks[j].range() {
                            row[c] = self.column_means[c];
                        }
                    }
                }
                CorruptionStrategy::Gaussian => {
                    for &j in set {
                        for c in ds.blocks[j].range() {
                            let z: f64 = rng.sample(StandardNormal);
                            row[c] += config.gaussian_sigma * z;
                        }
                    }
                }
                CorruptionStrategy::Zero => {
                    for &j in set {
                        row[ds.blocks[j].range()].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                CorruptionStrategy::MissingLearnable => {
                    let values = learnable.expect("checked above");
                    for &j in set {
                        for c in ds.blocks[j].range() {
                            row[c] = values[c];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn draw_donor<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.donor_rows[rng.random_range(0..self.donor_rows.len())]
    }

    /// Two views of `batch`: `(original, corrupted)` under `corrupt_one`, two
    /// independent corruptions under `corrupt_both`.
    pub fn make_views<R: Rng + ?Sized>(
        &self,
        batch: &Matrix,
        config: &CorruptionConfig,
        rng: &mut R,
        learnable: Option<&[f64]>,
    ) -> Result<Views> {
        match config.view_policy {
            ViewPolicy::CorruptOne => {
                let b = self.corrupt(batch, config, rng, learnable)?;
                Ok(Views {
                    a: batch.clone(),
                    b: b.batch,
                    a_indices: vec![Vec::new(); batch.rows()],
                    b_indices: b.indices,
                })
            }
            ViewPolicy::CorruptBoth => {
                let a = self.corrupt(batch, config, rng, learnable)?;
                let b = self.corrupt(batch, config, rng, learnable)?;
                Ok(Views {
                    a: a.batch,
                    b: b.batch,
                    a_indices: a.indices,
                    b_indices: b.indices,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Views {
    pub a: Matrix,
    pub b: Matrix,
    pub a_indices: Vec<Vec<usize>>,
    pub b_indices: Vec<Vec<usize>>,
}
