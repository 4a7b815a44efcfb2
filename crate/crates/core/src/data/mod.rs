//! CSV ingestion, imputation, one-hot encoding, scaling and split protocols.

mod encode;
mod scaler;
mod schema;
mod splits;
mod table;

use std::path::Path;

use serde::Serialize;

pub use encode::{
    one_hot, Encoder, FeatureBlock, FeatureColumn, FeatureKind, ProcessedDataset, RawValue,
};
pub use scaler::{FeatureStats, Scaler, ScalingKind};
pub use schema::{ColumnKind, ColumnSpec, Schema};
pub use splits::{corrupt_labels, make_splits, mask_labels, round_count, NoisyLabels, Splits};
pub use table::{drop_empty_columns, impute, load_csv, read_csv, ImputedTable, RawTable, TypedColumn};

use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct ColumnSummary {
    pub name: String,
    pub kind: ColumnKind,
    pub missing: usize,
}

/// What ingestion saw, for `validate` style reporting.
#[derive(Clone, Debug, Serialize)]
pub struct IngestReport {
    pub rows: usize,
    pub columns: Vec<ColumnSummary>,
    pub dropped: Vec<String>,
    pub encoded_width: usize,
    pub class_counts: Vec<(String, usize)>,
}

/// Unscaled encoded dataset plus its ingestion report.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: ProcessedDataset,
    pub report: IngestReport,
}

/// load → drop empty columns → impute → one-hot. Scaling happens per trial
/// because its statistics depend on the training split.
pub fn load_dataset(csv: impl AsRef<Path>, schema: &Schema) -> Result<LoadedDataset> {
    let raw = load_csv(csv, schema)?;
    prepare_table(raw)
}

pub fn prepare_table(raw: RawTable) -> Result<LoadedDataset> {
    let missing = raw.missing_counts();
    let columns = raw
        .schema
        .columns()
        .iter()
        .zip(missing)
        .map(|(c, missing)| ColumnSummary {
            name: c.name.clone(),
            kind: c.kind,
            missing,
        })
        .collect();
    let rows = raw.num_rows();
    let (table, dropped) = drop_empty_columns(raw)?;
    let imputed = impute(&table)?;
    let dataset = one_hot(&imputed)?;
    let mut class_counts: Vec<(String, usize)> =
        dataset.classes.iter().map(|c| (c.clone(), 0)).collect();
    for &y in &dataset.y {
        class_counts[y].1 += 1;
    }
    Ok(LoadedDataset {
        report: IngestReport {
            rows,
            columns,
            dropped,
            encoded_width: dataset.encoded_width(),
            class_counts,
        },
        dataset,
    })
}

/// Per-trial view of a dataset: its splits and the train-fitted scaling.
#[derive(Clone, Debug)]
pub struct TrialData {
    pub dataset: ProcessedDataset,
    pub splits: Splits,
    pub scaler: Scaler,
}

pub fn prepare_trial(dataset: &ProcessedDataset, split_seed: u64, scaling: ScalingKind) -> Result<TrialData> {
    let splits = make_splits(dataset.num_rows(), split_seed)?;
    let scaler = Scaler::fit(dataset, &splits.train, scaling)?;
    let scaled = scaler.apply(dataset)?;
    Ok(TrialData {
        dataset: scaled,
        splits,
        scaler,
    })
}
