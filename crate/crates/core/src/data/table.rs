use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::schema::{ColumnKind, ColumnSpec, Schema};
use crate::error::{Result, ScarfError};

/// String cells in column-major order; `None` marks a missing cell.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub schema: Schema,
    /// `columns[c][r]`, aligned with `schema.columns()`.
    pub columns: Vec<Vec<Option<String>>>,
}

impl RawTable {
    pub fn num_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn missing_counts(&self) -> Vec<usize> {
        self.columns
            .iter()
            .map(|c| c.iter().filter(|v| v.is_none()).count())
            .collect()
    }
}

/// Reads a headered CSV. Empty cells become missing. Header names must match
/// the schema exactly (in any order); the table follows the header order.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| ScarfError::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| ScarfError::Ingest {
            row: 0,
            message: format!("cannot read header: {e}"),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut specs = Vec::with_capacity(header.len());
    for name in &header {
        let kind = schema
            .kind_of(name)
            .ok_or_else(|| ScarfError::Schema(format!("unknown column '{name}' not in schema")))?;
        specs.push(ColumnSpec {
            name: name.clone(),
            kind,
        });
    }
    for spec in schema.columns() {
        if !header.contains(&spec.name) {
            return Err(ScarfError::Schema(format!(
                "column '{}' declared in schema is missing from the header",
                spec.name
            )));
        }
    }
    let aligned = Schema::new(specs)?;
    let mut columns: Vec<Vec<Option<String>>> = vec![Vec::new(); header.len()];
    for (i, record) in rdr.records().enumerate() {
        // data rows are numbered from 1; the header is row 0
        let row = i + 1;
        let record = record.map_err(|e| ScarfError::Ingest {
            row,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(ScarfError::Ingest {
                row,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            columns[c].push(if cell.is_empty() {
                None
            } else {
                Some(cell.to_string())
            });
        }
    }
    Ok(RawTable {
        schema: aligned,
        columns,
    })
}

/// Removes feature columns whose every cell is missing. Returns the dropped names.
pub fn drop_empty_columns(table: RawTable) -> Result<(RawTable, Vec<String>)> {
    let mut keep_specs = Vec::new();
    let mut keep_cols = Vec::new();
    let mut dropped = Vec::new();
    let rows = table.num_rows();
    for (spec, col) in table.schema.columns().iter().zip(table.columns) {
        let empty = rows > 0 && col.iter().all(Option::is_none);
        if empty && spec.kind != ColumnKind::Label {
            dropped.push(spec.name.clone());
        } else {
            keep_specs.push(spec.clone());
            keep_cols.push(col);
        }
    }
    Ok((
        RawTable {
            schema: Schema::new(keep_specs)?,
            columns: keep_cols,
        },
        dropped,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub enum TypedColumn {
    Numerical(Vec<f64>),
    Categorical(Vec<String>),
}

/// Fully populated table: typed feature columns plus the label strings.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputedTable {
    pub feature_names: Vec<String>,
    pub features: Vec<TypedColumn>,
    pub labels: Vec<String>,
}

impl ImputedTable {
    pub fn num_rows(&self) -> usize {
        self.labels.len()
    }
}

/// Fills missing numerical cells with the column mean and missing categorical
/// cells with the column mode (ties to the lexicographically smallest value),
/// both computed over the whole table.
pub fn impute(table: &RawTable) -> Result<ImputedTable> {
    let mut feature_names = Vec::new();
    let mut features = Vec::new();
    let mut labels = None;
    for (spec, col) in table.schema.columns().iter().zip(&table.columns) {
        match spec.kind {
            ColumnKind::Label => {
                let mut out = Vec::with_capacity(col.len());
                for (r, cell) in col.iter().enumerate() {
                    out.push(cell.clone().ok_or_else(|| ScarfError::Ingest {
                        row: r + 1,
                        message: format!("label column '{}' is missing a value", spec.name),
                    })?);
                }
                labels = Some(out);
            }
            ColumnKind::Numerical => {
                let mut parsed = Vec::with_capacity(col.len());
                for (r, cell) in col.iter().enumerate() {
                    parsed.push(match cell {
                        None => None,
                        Some(s) => Some(parse_number(s).ok_or_else(|| ScarfError::Ingest {
                            row: r + 1,
                            message: format!("column '{}': cannot parse '{s}' as a number", spec.name),
                        })?),
                    });
                }
                let present: Vec<f64> = parsed.iter().flatten().copied().collect();
                if present.is_empty() && !parsed.is_empty() {
                    return Err(ScarfError::Validation(format!(
                        "column '{}' is entirely missing; drop it before imputing",
                        spec.name
                    )));
                }
                let mean = present.iter().sum::<f64>() / present.len().max(1) as f64;
                feature_names.push(spec.name.clone());
                features.push(TypedColumn::Numerical(
                    parsed.into_iter().map(|v| v.unwrap_or(mean)).collect(),
                ));
            }
            ColumnKind::Categorical => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for s in col.iter().flatten() {
                    *counts.entry(s.as_str()).or_default() += 1;
                }
                // BTreeMap iterates in lexicographic order, so the first max wins ties
                let mode = counts
                    .iter()
                    .fold(None::<(&str, usize)>, |best, (&k, &n)| match best {
                        Some((_, bn)) if bn >= n => best,
                        _ => Some((k, n)),
                    })
                    .map(|(k, _)| k.to_string());
                let Some(mode) = mode else {
                    if col.is_empty() {
                        feature_names.push(spec.name.clone());
                        features.push(TypedColumn::Categorical(Vec::new()));
                        continue;
                    }
                    return Err(ScarfError::Validation(format!(
                        "column '{}' is entirely missing; drop it before imputing",
                        spec.name
                    )));
                };
                feature_names.push(spec.name.clone());
                features.push(TypedColumn::Categorical(
                    col.iter()
                        .map(|c| c.clone().unwrap_or_else(|| mode.clone()))
                        .collect(),
                ));
            }
        }
    }
    Ok(ImputedTable {
        feature_names,
        features,
        labels: labels.expect("schema has a label"),
    })
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}
