use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScarfError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numerical,
    Categorical,
    Label,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column kinds for a dataset. Exactly one label column and at least one feature.
///
/// On disk this is a TOML sidecar:
///
/// ```toml
/// [columns]
/// variance = "numerical"
/// colour = "categorical"
/// class = "label"
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    columns: BTreeMap<String, ColumnKind>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let labels: Vec<&str> = columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Label)
            .map(|c| c.name.as_str())
            .collect();
        match labels.len() {
            0 => return Err(ScarfError::Schema("schema has no label column".into())),
            1 => {}
            _ => {
                return Err(ScarfError::Schema(format!(
                    "schema has more than one label column: {}",
                    labels.join(", ")
                )))
            }
        }
        if columns.len() < 2 {
            return Err(ScarfError::Schema("schema has no feature columns".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(ScarfError::Schema(format!("duplicate column '{}'", c.name)));
            }
        }
        Ok(Self { columns })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SchemaFile =
            toml::from_str(text).map_err(|e| ScarfError::Schema(format!("invalid schema file: {e}")))?;
        Self::new(
            file.columns
                .into_iter()
                .map(|(name, kind)| ColumnSpec { name, kind })
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScarfError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let file = SchemaFile {
            columns: self
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.kind))
                .collect(),
        };
        toml::to_string(&file).expect("schema serialises")
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn kind_of(&self, name: &str) -> Option<ColumnKind> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.kind)
    }

    pub fn label(&self) -> &str {
        &self
            .columns
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
            .expect("validated")
            .name
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sidecar() {
        let s = Schema::from_toml_str(
            "[columns]\nheight = \"numerical\"\ncolour = \"categorical\"\nclass = \"label\"\n",
        )
        .unwrap();
        assert_eq!(s.label(), "class");
        assert_eq!(s.kind_of("colour"), Some(ColumnKind::Categorical));
        let again = Schema::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(again.kind_of("height"), Some(ColumnKind::Numerical));
    }

    #[test]
    fn requires_exactly_one_label_and_a_feature() {
        assert!(Schema::from_toml_str("[columns]\na = \"numerical\"\n").is_err());
        assert!(Schema::from_toml_str("[columns]\na = \"label\"\nb = \"label\"\n").is_err());
        assert!(Schema::from_toml_str("[columns]\na = \"label\"\n").is_err());
        assert!(Schema::from_toml_str("[columns]\na = \"ordinal\"\nb = \"label\"\n").is_err());
    }
}
