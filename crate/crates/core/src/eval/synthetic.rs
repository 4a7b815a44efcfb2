//! Seeded Gaussian-mixture tables for tests and demos.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{one_hot, ColumnKind, ColumnSpec, ImputedTable, ProcessedDataset, Schema, TypedColumn};
use crate::error::{Result, ScarfError};

/// Each class is a mixture of `clusters_per_class` isotropic Gaussians in a
/// `latent_dim`-dimensional space, linearly mixed into `features` columns
/// with added noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub rows: usize,
    pub features: usize,
    pub classes: usize,
    pub clusters_per_class: usize,
    pub latent_dim: usize,
    /// Standard deviation of the cluster centres around the origin.
    pub separation: f64,
    /// Standard deviation of the per-feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            rows: 2000,
            features: 20,
            classes: 2,
            clusters_per_class: 2,
            latent_dim: 4,
            separation: 2.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

pub const LABEL_COLUMN: &str = "label";

pub fn feature_name(j: usize) -> String {
    format!("x{j}")
}

pub fn gaussian_mixture_table(spec: &MixtureSpec) -> Result<ImputedTable> {
    if spec.rows == 0 || spec.features == 0 || spec.classes < 2 || spec.clusters_per_class == 0 || spec.latent_dim == 0 {
        return Err(ScarfError::Config(format!("degenerate mixture spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let n_clusters = spec.classes * spec.clusters_per_class;
    let centres: Vec<Vec<f64>> = (0..n_clusters)
        .map(|_| (0..spec.latent_dim).map(|_| spec.separation * normal()).collect())
        .collect();
    let mixing: Vec<Vec<f64>> = if spec.latent_dim == spec.features {
        (0..spec.latent_dim)
            .map(|i| (0..spec.features).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    } else {
        let scale = 1.0 / (spec.latent_dim as f64).sqrt();
        (0..spec.latent_dim)
            .map(|_| (0..spec.features).map(|_| scale * normal()).collect())
            .collect()
    };
    let mut class_of: Vec<usize> = (0..spec.rows).map(|i| i % spec.classes).collect();
    drop(normal);
    class_of.shuffle(&mut rng);
    let mut columns = vec![Vec::with_capacity(spec.rows); spec.features];
    for &c in &class_of {
        let cluster = c * spec.clusters_per_class + rng.random_range(0..spec.clusters_per_class);
        let z: Vec<f64> = centres[cluster]
            .iter()
            .map(|m| m + rng.sample::<f64, _>(StandardNormal))
            .collect();
        for (j, col) in columns.iter_mut().enumerate() {
            let mut v: f64 = z.iter().zip(&mixing).map(|(zi, row)| zi * row[j]).sum();
            if spec.noise > 0.0 {
                v += spec.noise * rng.sample::<f64, _>(StandardNormal);
            }
            col.push(v);
        }
    }
    Ok(ImputedTable {
        feature_names: (0..spec.features).map(feature_name).collect(),
        features: columns.into_iter().map(TypedColumn::Numerical).collect(),
        labels: class_of.iter().map(|c| format!("class_{c}")).collect(),
    })
}

pub fn gaussian_mixture(spec: &MixtureSpec) -> Result<ProcessedDataset> {
    one_hot(&gaussian_mixture_table(spec)?)
}

/// Schema of a table made by [`gaussian_mixture_table`].
pub fn mixture_schema(table: &ImputedTable) -> Result<Schema> {
    let mut cols: Vec<ColumnSpec> = table
        .feature_names
        .iter()
        .zip(&table.features)
        .map(|(name, col)| ColumnSpec {
            name: name.clone(),
            kind: match col {
                TypedColumn::Numerical(_) => ColumnKind::Numerical,
                TypedColumn::Categorical(_) => ColumnKind::Categorical,
            },
        })
        .collect();
    cols.push(ColumnSpec {
        name: LABEL_COLUMN.into(),
        kind: ColumnKind::Label,
    });
    Schema::new(cols)
}

/// Writes the table as CSV with the label in the last column.
pub fn write_table_csv(table: &ImputedTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| ScarfError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let io = |e: csv::Error| ScarfError::Parse(format!("{}: {e}", path.display()));
    let mut header = table.feature_names.clone();
    header.push(LABEL_COLUMN.into());
    w.write_record(&header).map_err(io)?;
    for i in 0..table.num_rows() {
        let mut rec: Vec<String> = table
            .features
            .iter()
            .map(|c| match c {
                TypedColumn::Numerical(v) => format!("{}", v[i]),
                TypedColumn::Categorical(v) => v[i].clone(),
            })
            .collect();
        rec.push(table.labels[i].clone());
        w.write_record(&rec).map_err(io)?;
    }
    let mut inner = w.into_inner().map_err(|e| ScarfError::Parse(e.to_string()))?;
    inner.flush().map_err(|e| ScarfError::io(path, e))
}
