use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::table::{ImputedTable, TypedColumn};
use crate::error::{Result, ScarfError};
use crate::nn::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    Numerical,
    Categorical { categories: Vec<String> },
}

/// Encoded column range of one raw feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub name: String,
    pub start: usize,
    pub width: usize,
    pub kind: FeatureKind,
}

impl FeatureBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.width
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }
}

/// Raw (pre-one-hot) value of a feature for every row. Numerical values are
/// stored in the same (possibly scaled) units as the encoded matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureColumn {
    Numerical(Vec<f64>),
    /// Category index into the block's category list; `None` for a category
    /// unseen when the encoder was fitted.
    Categorical(Vec<Option<usize>>),
}

/// Encoded feature matrix with the raw columns it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedDataset {
    pub x: Matrix,
    pub columns: Vec<FeatureColumn>,
    pub y: Vec<usize>,
    pub blocks: Vec<FeatureBlock>,
    pub classes: Vec<String>,
}

impl ProcessedDataset {
    pub fn num_rows(&self) -> usize {
        self.y.len()
    }

    /// Raw feature count `M`.
    pub fn num_features(&self) -> usize {
        self.blocks.len()
    }

    pub fn encoded_width(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels_of(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.y[r]).collect()
    }

    /// Writes the encoding of `value` for feature `j` into an encoded row.
    pub fn encode_value(&self, j: usize, value: RawValue, encoded_row: &mut [f64]) {
        let block = &self.blocks[j];
        match value {
            RawValue::Numerical(v) => encoded_row[block.start] = v,
            RawValue::Categorical(code) => {
                let cells = &mut encoded_row[block.range()];
                cells.iter_mut().for_each(|c| *c = 0.0);
                if let Some(k) = code {
                    cells[k] = 1.0;
                }
            }
        }
    }

    pub fn raw_value(&self, j: usize, row: usize) -> RawValue {
        match &self.columns[j] {
            FeatureColumn::Numerical(v) => RawValue::Numerical(v[row]),
            FeatureColumn::Categorical(c) => RawValue::Categorical(c[row]),
        }
    }

    /// Checks the structural invariants: consistent row counts and valid
    /// one-hot categorical blocks.
    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.x.rows() != n || self.columns.len() != self.blocks.len() {
            return Err(ScarfError::State("dataset row/column counts disagree".into()));
        }
        for (col, block) in self.columns.iter().zip(&self.blocks) {
            match col {
                FeatureColumn::Numerical(v) if v.len() != n => {
                    return Err(ScarfError::State(format!("column '{}' length", block.name)))
                }
                FeatureColumn::Categorical(v) if v.len() != n => {
                    return Err(ScarfError::State(format!("column '{}' length", block.name)))
                }
                _ => {}
            }
            if block.is_categorical() {
                for r in 0..n {
                    let cells = &self.x.row(r)[block.range()];
                    let sum: f64 = cells.iter().sum();
                    if cells.iter().any(|&v| v != 0.0 && v != 1.0) || sum > 1.0 {
                        return Err(ScarfError::State(format!(
                            "row {r}: block '{}' is not one-hot",
                            block.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RawValue {
    Numerical(f64),
    Categorical(Option<usize>),
}

/// One-hot encoder fitted on an imputed table. Categories are sorted
/// lexicographically; classes are indexed by first appearance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub features: Vec<(String, FeatureKind)>,
    pub classes: Vec<String>,
}

impl Encoder {
    pub fn fit(table: &ImputedTable) -> Self {
        let features = table
            .feature_names
            .iter()
            .zip(&table.features)
            .map(|(name, col)| {
                let kind = match col {
                    TypedColumn::Numerical(_) => FeatureKind::Numerical,
                    TypedColumn::Categorical(values) => {
                        let mut categories: Vec<String> = values.clone();
                        categories.sort();
                        categories.dedup();
                        FeatureKind::Categorical { categories }
                    }
                };
                (name.clone(), kind)
            })
            .collect();
        let mut classes: Vec<String> = Vec::new();
        for l in &table.labels {
            if !classes.contains(l) {
                classes.push(l.clone());
            }
        }
        Self { features, classes }
    }

    pub fn blocks(&self) -> Vec<FeatureBlock> {
        let mut start = 0;
        self.features
            .iter()
            .map(|(name, kind)| {
                let width = match kind {
                    FeatureKind::Numerical => 1,
                    FeatureKind::Categorical { categories } => categories.len(),
                };
                let b = FeatureBlock {
                    name: name.clone(),
                    start,
                    width,
                    kind: kind.clone(),
                };
                start += width;
                b
            })
            .collect()
    }

    pub fn transform(&self, table: &ImputedTable) -> Result<ProcessedDataset> {
        if table.features.len() != self.features.len() {
            return Err(ScarfError::shape(
                "Encoder::transform",
                format!("{} features", self.features.len()),
                table.features.len(),
            ));
        }
        let blocks = self.blocks();
        let width = blocks.last().map_or(0, |b| b.start + b.width);
        let n = table.num_rows();
        let mut x = Matrix::zeros(n, width);
        let mut columns = Vec::with_capacity(blocks.len());
        for ((block, (name, kind)), col) in blocks.iter().zip(&self.features).zip(&table.features) {
            match (kind, col) {
                (FeatureKind::Numerical, TypedColumn::Numerical(values)) => {
                    for (r, &v) in values.iter().enumerate() {
                        x.set(r, block.start, v);
                    }
                    columns.push(FeatureColumn::Numerical(values.clone()));
                }
                (FeatureKind::Categorical { categories }, TypedColumn::Categorical(values)) => {
                    let index: HashMap<&str, usize> = categories
                        .iter()
                        .enumerate()
                        .map(|(i, c)| (c.as_str(), i))
                        .collect();
                    let codes: Vec<Option<usize>> =
                        values.iter().map(|v| index.get(v.as_str()).copied()).collect();
                    for (r, code) in codes.iter().enumerate() {
                        if let Some(k) = code {
                            x.set(r, block.start + k, 1.0);
                        }
                    }
                    columns.push(FeatureColumn::Categorical(codes));
                }
                _ => {
                    return Err(ScarfError::Schema(format!(
                        "feature '{name}' changed kind since the encoder was fitted"
                    )))
                }
            }
        }
        let class_index: HashMap<&str, usize> = self
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let y = table
            .labels
            .iter()
            .enumerate()
            .map(|(r, l)| {
                class_index.get(l.as_str()).copied().ok_or_else(|| ScarfError::Ingest {
                    row: r + 1,
                    message: format!("unknown class '{l}'"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProcessedDataset {
            x,
            columns,
            y,
            blocks,
            classes: self.classes.clone(),
        })
    }
}

/// Fits an encoder on `table` and encodes it.
pub fn one_hot(table: &ImputedTable) -> Result<ProcessedDataset> {
    Encoder::fit(table).transform(table)
}
