use serde::{Deserialize, Serialize};

use super::encode::{FeatureColumn, ProcessedDataset};
use crate::error::{Result, ScarfError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalingKind {
    #[default]
    Zscore,
    Minmax,
    Mean,
    None,
}

impl std::str::FromStr for ScalingKind {
    type Err = ScarfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" | "z-score" => Ok(Self::Zscore),
            "minmax" | "min-max" => Ok(Self::Minmax),
            "mean" => Ok(Self::Mean),
            "none" => Ok(Self::None),
            other => Err(ScarfError::Config(format!("unknown scaling '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    /// Population (divide-by-n) standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-numerical-feature statistics fitted on training rows. Categorical
/// features have `None` and are never touched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalingKind,
    pub stats: Vec<Option<FeatureStats>>,
}

impl Scaler {
    pub fn fit(dataset: &ProcessedDataset, train_rows: &[usize], kind: ScalingKind) -> Result<Self> {
        if train_rows.is_empty() {
            return Err(ScarfError::Validation("cannot fit a scaler on zero rows".into()));
        }
        let stats = dataset
            .columns
            .iter()
            .map(|col| match col {
                FeatureColumn::Categorical(_) => None,
                FeatureColumn::Numerical(values) => {
                    let n = train_rows.len() as f64;
                    let mean = train_rows.iter().map(|&r| values[r]).sum::<f64>() / n;
                    let var = train_rows
                        .iter()
                        .map(|&r| (values[r] - mean).powi(2))
                        .sum::<f64>()
                        / n;
                    let (min, max) = train_rows.iter().fold(
                        (f64::INFINITY, f64::NEG_INFINITY),
                        |(lo, hi), &r| (lo.min(values[r]), hi.max(values[r])),
                    );
                    Some(FeatureStats {
                        mean,
                        std: var.sqrt(),
                        min,
                        max,
                    })
                }
            })
            .collect();
        Ok(Self { kind, stats })
    }

    /// Scales one value of feature `j`. Degenerate spreads map to 0.
    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        let Some(s) = self.stats[j] else { return v };
        let range = s.max - s.min;
        match self.kind {
            ScalingKind::None => v,
            ScalingKind::Zscore if s.std > 0.0 => (v - s.mean) / s.std,
            ScalingKind::Minmax if range > 0.0 => (v - s.min) / range,
            ScalingKind::Mean if range > 0.0 => (v - s.mean) / range,
            _ => 0.0,
        }
    }

    /// Applies the scaler to every row of `dataset`, keeping encoded and raw
    /// numerical values in sync.
    pub fn apply(&self, dataset: &ProcessedDataset) -> Result<ProcessedDataset> {
        if self.stats.len() != dataset.num_features() {
            return Err(ScarfError::shape(
                "Scaler::apply",
                self.stats.len(),
                dataset.num_features(),
            ));
        }
        let mut out = dataset.clone();
        for (j, col) in out.columns.iter_mut().enumerate() {
            if let FeatureColumn::Numerical(values) = col {
                let c = dataset.blocks[j].start;
                for (r, v) in values.iter_mut().enumerate() {
                    *v = self.transform_value(j, *v);
                    out.x.set(r, c, *v);
                }
            }
        }
        Ok(out)
    }
}
