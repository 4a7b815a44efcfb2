use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScarfError};

/// Disjoint train/validation/test row indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// `round(fraction · n)` with halves rounded up. The 1e-9 keeps products
/// such as 0.7 · 645 = 451.4999… on the half.
pub fn round_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 0.5 + 1e-9).floor() as usize
}

/// Seeded 70/10/20 partition of `0..n`.
pub fn make_splits(n: usize, seed: u64) -> Result<Splits> {
    if n < 10 {
        return Err(ScarfError::Validation(format!(
            "need at least 10 rows to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    // integer arithmetic for round-half-up of 0.7n and 0.1n
    let n_train = (7 * n + 5) / 10;
    let n_val = (n + 5) / 10;
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    Ok(Splits {
        train: order,
        validation,
        test,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyLabels {
    pub labels: Vec<usize>,
    /// Positions (into the training label slice) whose labels were redrawn.
    pub selected: Vec<usize>,
}

/// Redraws the labels of `round(noise_rate · n)` training rows, chosen without
/// replacement, uniformly over all classes (the true class included).
pub fn corrupt_labels<R: Rng + ?Sized>(
    y_train: &[usize],
    noise_rate: f64,
    num_classes: usize,
    rng: &mut R,
) -> Result<NoisyLabels> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(ScarfError::Validation(format!(
            "label noise rate must lie in [0, 1], got {noise_rate}"
        )));
    }
    if num_classes == 0 {
        return Err(ScarfError::Validation("need at least one class".into()));
    }
    let k = round_count(noise_rate, y_train.len());
    let mut selected = rand::seq::index::sample(rng, y_train.len(), k).into_vec();
    selected.sort_unstable();
    let mut labels = y_train.to_vec();
    for &i in &selected {
        labels[i] = rng.random_range(0..num_classes);
    }
    Ok(NoisyLabels { labels, selected })
}

/// Splits training rows into a labeled subset of `round(fraction · n)` rows and
/// the unlabeled remainder. Both halves are returned sorted.
pub fn mask_labels<R: Rng + ?Sized>(
    train: &[usize],
    labeled_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(ScarfError::Validation(format!(
            "labeled fraction must lie in (0, 1], got {labeled_fraction}"
        )));
    }
    let k = round_count(labeled_fraction, train.len());
    let mut shuffled = train.to_vec();
    shuffled.shuffle(rng);
    let mut unlabeled = shuffled.split_off(k);
    shuffled.sort_unstable();
    unlabeled.sort_unstable();
    Ok((shuffled, unlabeled))
}
