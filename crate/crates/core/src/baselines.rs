//! Mixup and the semi-supervised wrappers (self-training, tri-training,
//! self-distillation). The wrappers are generic over how a model is trained,
//! so any of them can start from a pre-trained encoder.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScarfError};
use crate::nn::Matrix;
use crate::training::ModelBundle;

/// `λ·x + (1-λ)·x[perm]` for features and targets alike.
pub fn mixup_with_lambda(x: &Matrix, y: &Matrix, lambda: f64, perm: &[usize]) -> Result<(Matrix, Matrix)> {
    if x.rows() != y.rows() || perm.len() != x.rows() {
        return Err(ScarfError::shape("mixup", x.rows(), y.rows().min(perm.len())));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ScarfError::Validation(format!("mixup weight must lie in [0, 1], got {lambda}")));
    }
    let mix = |m: &Matrix| -> Result<Matrix> {
        let partner = m.select_rows(perm);
        m.zip_map(&partner, |a, b| lambda * a + (1.0 - lambda) * b)
    };
    Ok((mix(x)?, mix(y)?))
}

/// Draws `λ ~ Beta(α, α)`, then pairs every row with one of a shuffled copy
/// of the batch.
pub fn mixup_batch<R: Rng + ?Sized>(x: &Matrix, y: &Matrix, alpha: f64, rng: &mut R) -> Result<(Matrix, Matrix)> {
    let lambda = sample_mixup_lambda(alpha, rng)?;
    let mut perm: Vec<usize> = (0..x.rows()).collect();
    perm.shuffle(rng);
    mixup_with_lambda(x, y, lambda, &perm)
}

pub fn sample_mixup_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(ScarfError::Config(format!("mixup alpha must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| ScarfError::Config(format!("mixup alpha: {e}")))?;
    Ok(beta.sample(rng))
}

/// Something that produces class probabilities for feature rows.
pub trait Classifier {
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix>;
}

impl Classifier for ModelBundle {
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        ModelBundle::predict_proba(self, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// One class per entry of `rows`.
    Hard(Vec<usize>),
    /// One probability row per entry of `rows`.
    Soft(Matrix),
}

/// Rows to train on with their targets. Rows may repeat (bootstrap samples).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub rows: Vec<usize>,
    pub targets: Targets,
}

impl TrainingSet {
    pub fn hard(rows: Vec<usize>, labels: Vec<usize>) -> Self {
        Self {
            rows,
            targets: Targets::Hard(labels),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Original,
    Pseudo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub row: usize,
    pub label: usize,
    pub source: LabelSource,
}

/// Training pool that only grows. Pseudo-labels are frozen once assigned.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoLabelPool {
    entries: Vec<PoolEntry>,
    pseudo_rows: BTreeSet<usize>,
    /// Number of pseudo-labels added in each iteration.
    pub additions: Vec<usize>,
}

impl PseudoLabelPool {
    pub fn from_labeled(rows: &[usize], labels: &[usize]) -> Self {
        Self {
            entries: rows
                .iter()
                .map(|&row| PoolEntry {
                    row,
                    label: labels[row],
                    source: LabelSource::Original,
                })
                .collect(),
            pseudo_rows: BTreeSet::new(),
            additions: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_pseudo(&self, row: usize) -> bool {
        self.pseudo_rows.contains(&row)
    }

    fn add_pseudo(&mut self, row: usize, label: usize) -> bool {
        if !self.pseudo_rows.insert(row) {
            return false;
        }
        self.entries.push(PoolEntry {
            row,
            label,
            source: LabelSource::Pseudo,
        });
        true
    }

    pub fn training_set(&self) -> TrainingSet {
        TrainingSet::hard(
            self.entries.iter().map(|e| e.row).collect(),
            self.entries.iter().map(|e| e.label).collect(),
        )
    }
}

fn predictions<M: Classifier>(model: &M, x: &Matrix, rows: &[usize]) -> Result<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, 0));
    }
    model.predict_proba(&x.select_rows(rows))
}

fn row_argmax(row: &[f64]) -> (usize, f64) {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    pub threshold: f64,
    pub iterations: usize,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            threshold: 0.75,
            iterations: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SelfTrainResult<M> {
    pub model: M,
    pub pool: PseudoLabelPool,
}

/// Repeatedly trains on the pool and adds unlabeled rows whose top softmax
/// probability reaches `threshold`; the final model is trained on the final
/// pool. Stops early once an iteration adds nothing.
///
/// `x` holds the feature rows of the whole dataset; `labels` is indexed by
/// dataset row and only read at `labeled` rows.
pub fn self_train<M: Classifier>(
    x: &Matrix,
    labels: &[usize],
    labeled: &[usize],
    unlabeled: &[usize],
    config: &SelfTrainConfig,
    mut train_fn: impl FnMut(&TrainingSet) -> Result<M>,
) -> Result<SelfTrainResult<M>> {
    if !(config.threshold > 0.0 && config.threshold <= 1.0) {
        return Err(ScarfError::Config(format!(
            "self-training threshold must lie in (0, 1], got {}",
            config.threshold
        )));
    }
    let mut pool = PseudoLabelPool::from_labeled(labeled, labels);
    for _ in 0..config.iterations {
        let model = train_fn(&pool.training_set())?;
        let remaining: Vec<usize> = unlabeled.iter().copied().filter(|&r| !pool.contains_pseudo(r)).collect();
        let probs = predictions(&model, x, &remaining)?;
        let mut added = 0;
        for (i, &row) in remaining.iter().enumerate() {
            let (label, p) = row_argmax(probs.row(i));
            if p >= config.threshold && pool.add_pseudo(row, label) {
                added += 1;
            }
        }
        pool.additions.push(added);
        if added == 0 {
            break;
        }
    }
    let model = train_fn(&pool.training_set())?;
    Ok(SelfTrainResult { model, pool })
}

#[derive(Clone, Debug)]
pub struct TriTrainResult<M> {
    pub model: M,
    pub pools: [PseudoLabelPool; 3],
    pub final_set: TrainingSet,
}

/// Draws `n` indices into `rows` with replacement.
pub fn bootstrap<R: Rng + ?Sized>(rows: &[usize], rng: &mut R) -> Vec<usize> {
    if rows.is_empty() {
        return Vec::new();
    }
    (0..rows.len()).map(|_| rows[rng.random_range(0..rows.len())]).collect()
}

/// Three models on bootstrap resamples; each iteration a row enters model
/// k's pool when the other two models agree on its class. The final model is
/// trained on every labeled row plus the pseudo-labels of all pools, with
/// conflicting pseudo-labels settled by majority (ties to the smaller class).
pub fn tri_train<M: Classifier, R: Rng + ?Sized>(
    x: &Matrix,
    labels: &[usize],
    labeled: &[usize],
    unlabeled: &[usize],
    iterations: usize,
    rng: &mut R,
    mut train_fn: impl FnMut(&TrainingSet) -> Result<M>,
) -> Result<TriTrainResult<M>> {
    let mut pools: [PseudoLabelPool; 3] = std::array::from_fn(|_| PseudoLabelPool::default());
    for pool in pools.iter_mut() {
        *pool = PseudoLabelPool::from_labeled(&bootstrap(labeled, rng), labels);
    }
    for _ in 0..iterations {
        let models = pools
            .iter()
            .map(|p| train_fn(&p.training_set()))
            .collect::<Result<Vec<M>>>()?;
        let preds: Vec<Vec<usize>> = models
            .iter()
            .map(|m| {
                let probs = predictions(m, x, unlabeled)?;
                Ok((0..unlabeled.len()).map(|i| row_argmax(probs.row(i)).0).collect())
            })
            .collect::<Result<_>>()?;
        let mut added = 0;
        for k in 0..3 {
            let (i, j) = match k {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            for (u, &row) in unlabeled.iter().enumerate() {
                if preds[i][u] == preds[j][u] && pools[k].add_pseudo(row, preds[i][u]) {
                    added += 1;
                }
            }
        }
        for p in pools.iter_mut() {
            p.additions.push(added);
        }
        if added == 0 {
            break;
        }
    }
    let final_set = union_pool(labeled, labels, &pools);
    let model = train_fn(&final_set)?;
    Ok(TriTrainResult {
        model,
        pools,
        final_set,
    })
}

fn union_pool(labeled: &[usize], labels: &[usize], pools: &[PseudoLabelPool; 3]) -> TrainingSet {
    let originals: BTreeSet<usize> = labeled.iter().copied().collect();
    let mut votes: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for e in pools.iter().flat_map(|p| p.entries()) {
        if e.source == LabelSource::Pseudo && !originals.contains(&e.row) {
            *votes.entry(e.row).or_default().entry(e.label).or_default() += 1;
        }
    }
    let mut rows: Vec<usize> = originals.iter().copied().collect();
    let mut out_labels: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    for (row, counts) in votes {
        // BTreeMap iterates classes ascending, so the first maximum is the smallest class
        let (label, _) = counts
            .iter()
            .fold((usize::MAX, 0), |best, (&c, &n)| if n > best.1 { (c, n) } else { best });
        rows.push(row);
        out_labels.push(label);
    }
    TrainingSet::hard(rows, out_labels)
}

#[derive(Clone, Debug)]
pub struct DistillResult<M> {
    pub teacher: M,
    pub student: M,
    pub student_set: TrainingSet,
}

/// Teacher on the labeled rows, then a student on labeled ∪ unlabeled rows
/// against the teacher's softmax outputs.
pub fn self_distill<M: Classifier>(
    x: &Matrix,
    labels: &[usize],
    labeled: &[usize],
    unlabeled: &[usize],
    mut train_fn: impl FnMut(&TrainingSet) -> Result<M>,
) -> Result<DistillResult<M>> {
    let teacher_set = TrainingSet::hard(labeled.to_vec(), labeled.iter().map(|&r| labels[r]).collect());
    let teacher = train_fn(&teacher_set)?;
    let rows: Vec<usize> = labeled.iter().chain(unlabeled).copied().collect();
    let soft = teacher.predict_proba(&x.select_rows(&rows))?;
    let student_set = TrainingSet {
        rows,
        targets: Targets::Soft(soft),
    };
    let student = train_fn(&student_set)?;
    Ok(DistillResult {
        teacher,
        student,
        student_set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mixup_examples() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [2.0, 2.0]]).unwrap();
        let y = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let (xm, ym) = mixup_with_lambda(&x, &y, 1.0, &[1, 0]).unwrap();
        assert_eq!((xm, ym), (x.clone(), y.clone()));
        let (xm, ym) = mixup_with_lambda(&x, &y, 0.5, &[1, 0]).unwrap();
        assert_eq!(xm.row(0), &[1.0, 1.0]);
        assert_eq!(ym.row(0), &[0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (_, ym) = mixup_batch(&x, &y, 0.2, &mut rng).unwrap();
            for r in ym.iter_rows() {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(mixup_batch(&x, &y, 0.0, &mut rng).is_err());
    }

    #[test]
    fn beta_mass_sits_near_the_ends() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let outside = (0..100_000)
            .filter(|_| {
                let l = sample_mixup_lambda(0.2, &mut rng).unwrap();
                !(0.1..=0.9).contains(&l) || l == 0.1 || l == 0.9
            })
            .count();
        assert!(outside >= 60_000, "{outside}");
    }

    /// Predicts a fixed distribution for every row.
    struct Constant(Vec<f64>);

    impl Classifier for Constant {
        fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
            Ok(Matrix::from_rows(&vec![self.0.clone(); x.rows()]).unwrap())
        }
    }

    /// Predicts class = sign of the first feature.
    struct Threshold;

    impl Classifier for Threshold {
        fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
            let rows: Vec<[f64; 2]> = x
                .iter_rows()
                .map(|r| if r[0] > 0.0 { [0.1, 0.9] } else { [0.9, 0.1] })
                .collect();
            Matrix::from_rows(&rows)
        }
    }

    fn toy() -> (Matrix, Vec<usize>) {
        let x = Matrix::from_rows(&[[-1.0], [1.0], [-2.0], [2.0], [3.0]]).unwrap();
        (x, vec![0, 1, 0, 1, 1])
    }

    #[test]
    fn self_train_fixed_point_when_nothing_is_confident() {
        let (x, y) = toy();
        let mut sets = Vec::new();
        let out = self_train(&x, &y, &[0, 1], &[2, 3, 4], &SelfTrainConfig::default(), |s| {
            sets.push(s.clone());
            Ok(Constant(vec![0.5, 0.5]))
        })
        .unwrap();
        assert_eq!(out.pool.len(), 2);
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0], sets[1]);
        let bad = SelfTrainConfig {
            threshold: 1.5,
            ..SelfTrainConfig::default()
        };
        assert!(self_train(&x, &y, &[0], &[1], &bad, |_| Ok(Threshold)).is_err());
    }

    #[test]
    fn self_train_adds_confident_rows_once() {
        let (x, y) = toy();
        let out = self_train(&x, &y, &[0, 1], &[2, 3, 4], &SelfTrainConfig::default(), |_| Ok(Threshold)).unwrap();
        assert_eq!(out.pool.len(), 5);
        assert_eq!(out.pool.additions, vec![3, 0]);
        let pseudo: Vec<_> = out.pool.entries().iter().filter(|e| e.source == LabelSource::Pseudo).collect();
        assert_eq!(pseudo.iter().map(|e| e.label).collect::<Vec<_>>(), vec![0, 1, 1]);
    }

    #[test]
    fn tri_train_with_identical_models_adds_everything_at_once() {
        let (x, y) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = tri_train(&x, &y, &[0, 1], &[2, 3, 4], 10, &mut rng, |_| Ok(Threshold)).unwrap();
        for p in &out.pools {
            assert_eq!(p.entries().iter().filter(|e| e.source == LabelSource::Pseudo).count(), 3);
            assert_eq!(p.entries().iter().filter(|e| e.source == LabelSource::Original).count(), 2);
            assert_eq!(p.additions[0], 9);
        }
        assert_eq!(out.final_set.rows, vec![0, 1, 2, 3, 4]);
        assert_eq!(out.final_set.targets, Targets::Hard(vec![0, 1, 0, 1, 1]));
    }

    #[test]
    fn tri_train_without_unlabeled_rows_trains_on_labels() {
        let (x, y) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = tri_train(&x, &y, &[0, 1, 2], &[], 10, &mut rng, |_| Ok(Threshold)).unwrap();
        assert_eq!(out.final_set, TrainingSet::hard(vec![0, 1, 2], vec![0, 1, 0]));
    }

    #[test]
    fn distill_targets_cover_both_sets() {
        let (x, y) = toy();
        let out = self_distill(&x, &y, &[0, 1], &[2, 3, 4], |_| Ok(Threshold)).unwrap();
        assert_eq!(out.student_set.len(), 5);
        match &out.student_set.targets {
            Targets::Soft(m) => assert!(m.iter_rows().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-12)),
            Targets::Hard(_) => panic!("expected soft targets"),
        }
    }
}
