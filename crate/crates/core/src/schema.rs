//! Dataset schema declaration.
//!
//! A schema splits the columns of a tabular dataset into three exclusive
//! feature blocks — sensitive, discrete, continuous — plus one binary label
//! column. Schemas are declared in a versioned TOML recipe file; see
//! `recipes/adult.toml` for a complete example.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

pub const SCHEMA_FORMAT_VERSION: u32 = 1;

/// A categorical column with its ordered value set. One-hot slot order
/// follows the declared value order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    pub values: Vec<String>,
}

impl CategoricalColumn {
    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

/// A continuous column with its declared raw range. The range documents the
/// expected domain and is validated (`min < max`); scaling itself always uses
/// train-split statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousColumn {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// The binary label column. Any cell matching one of `positive` maps to 1,
/// everything else to 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelColumn {
    pub name: String,
    pub positive: Vec<String>,
}

/// Ingestion options for the raw delimited-text file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Whether the file carries a header row. Headerless files require
    /// `columns` to name every field in order.
    pub has_header: bool,
    /// Ordered column names for headerless files.
    #[serde(default)]
    pub columns: Option<Vec<String>>,
    /// Cell values treated as missing (row is dropped).
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    /// Lines starting with this character are skipped.
    #[serde(default)]
    pub comment: Option<char>,
    /// Field delimiter; `,` for CSV, `\t` for TSV.
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_missing() -> Vec<String> {
    vec![String::new()]
}

fn default_delimiter() -> char {
    ','
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            columns: None,
            missing: default_missing(),
            comment: None,
            delimiter: ',',
        }
    }
}

/// Declares how every column of a dataset is interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    #[serde(default)]
    pub ingest: IngestOptions,
    pub label: LabelColumn,
    pub sensitive: Vec<CategoricalColumn>,
    #[serde(default)]
    pub discrete: Vec<CategoricalColumn>,
    #[serde(default)]
    pub continuous: Vec<ContinuousColumn>,
}

impl FeatureSchema {
    /// Check the structural invariants: pairwise-disjoint names, non-empty
    /// value sets, at least one sensitive column, and `min < max` per
    /// continuous column.
    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema version {} (expected {})",
                self.version, SCHEMA_FORMAT_VERSION
            )));
        }
        if self.sensitive.is_empty() {
            return Err(Error::Schema("at least one sensitive column is required".into()));
        }
        let mut seen = HashSet::new();
        for name in self
            .sensitive
            .iter()
            .map(|c| &c.name)
            .chain(self.discrete.iter().map(|c| &c.name))
            .chain(self.continuous.iter().map(|c| &c.name))
            .chain(std::iter::once(&self.label.name))
        {
            if !seen.insert(name.clone()) {
                return Err(Error::Schema(format!("column `{name}` declared more than once")));
            }
        }
        for col in self.sensitive.iter().chain(self.discrete.iter()) {
            if col.values.is_empty() {
                return Err(Error::Schema(format!("column `{}` has an empty value set", col.name)));
            }
            let mut vals = HashSet::new();
            for v in &col.values {
                if !vals.insert(v) {
                    return Err(Error::Schema(format!(
                        "column `{}` lists value `{v}` more than once",
                        col.name
                    )));
                }
            }
        }
        if self.label.positive.is_empty() {
            return Err(Error::Schema("label must declare at least one positive value".into()));
        }
        for col in &self.continuous {
            if !(col.min < col.max) {
                return Err(Error::Schema(format!(
                    "continuous column `{}` requires min < max (got {} .. {})",
                    col.name, col.min, col.max
                )));
            }
        }
        if !self.ingest.has_header && self.ingest.columns.is_none() {
            return Err(Error::Schema(
                "headerless ingestion requires `ingest.columns` to name every field".into(),
            ));
        }
        Ok(())
    }

    pub fn n_sensitive(&self) -> usize {
        self.sensitive.len()
    }

    pub fn n_discrete(&self) -> usize {
        self.discrete.len()
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous.len()
    }

    /// Total one-hot width of the sensitive block.
    pub fn sensitive_width(&self) -> usize {
        self.sensitive.iter().map(|c| c.values.len()).sum()
    }

    /// Total one-hot width of the discrete block.
    pub fn discrete_width(&self) -> usize {
        self.discrete.iter().map(|c| c.values.len()).sum()
    }

    /// Encoded feature dimension: continuous + discrete one-hot + sensitive one-hot.
    pub fn encoded_width(&self) -> usize {
        self.n_continuous() + self.discrete_width() + self.sensitive_width()
    }

    /// Every combination of sensitive values as per-column value indices, in
    /// lexicographic order over the declared value sets.
    pub fn sensitive_combinations(&self) -> Vec<Vec<u32>> {
        let mut combos: Vec<Vec<u32>> = vec![Vec::new()];
        for col in &self.sensitive {
            let mut next = Vec::with_capacity(combos.len() * col.values.len());
            for combo in &combos {
                for v in 0..col.values.len() as u32 {
                    let mut c = combo.clone();
                    c.push(v);
                    next.push(c);
                }
            }
            combos = next;
        }
        combos
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: FeatureSchema =
            toml::from_str(text).map_err(|e| Error::Schema(format!("schema parse: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Schema(format!("schema serialize: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_schema() -> FeatureSchema {
        FeatureSchema {
            version: 1,
            ingest: IngestOptions::default(),
            label: LabelColumn { name: "y".into(), positive: vec!["1".into()] },
            sensitive: vec![CategoricalColumn {
                name: "sex".into(),
                values: vec!["F".into(), "M".into()],
            }],
            discrete: vec![CategoricalColumn {
                name: "job".into(),
                values: vec!["a".into(), "b".into(), "c".into()],
            }],
            continuous: vec![ContinuousColumn { name: "age".into(), min: 0.0, max: 100.0 }],
        }
    }

    #[test]
    fn valid_schema_roundtrips_through_toml() {
        let schema = tiny_schema();
        schema.validate().unwrap();
        let text = schema.to_toml_string().unwrap();
        let back = FeatureSchema::from_toml_str(&text).unwrap();
        assert_eq!(schema, back);
    }

    #[test]
    fn duplicate_column_rejected() {
        let mut schema = tiny_schema();
        schema.discrete.push(CategoricalColumn {
            name: "sex".into(),
            values: vec!["x".into()],
        });
        assert!(matches!(schema.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn degenerate_continuous_range_rejected() {
        let mut schema = tiny_schema();
        schema.continuous[0].max = schema.continuous[0].min;
        assert!(schema.validate().is_err());
    }

    #[test]
    fn empty_sensitive_rejected() {
        let mut schema = tiny_schema();
        schema.sensitive.clear();
        assert!(schema.validate().is_err());
    }

    #[test]
    fn sensitive_combinations_are_cartesian() {
        let mut schema = tiny_schema();
        schema.sensitive.push(CategoricalColumn {
            name: "band".into(),
            values: vec!["lo".into(), "mid".into(), "hi".into()],
        });
        let combos = schema.sensitive_combinations();
        assert_eq!(combos.len(), 6);
        assert_eq!(combos[0], vec![0, 0]);
        assert_eq!(combos[5], vec![1, 2]);
    }

    #[test]
    fn widths() {
        let schema = tiny_schema();
        assert_eq!(schema.sensitive_width(), 2);
        assert_eq!(schema.discrete_width(), 3);
        assert_eq!(schema.encoded_width(), 6);
    }
}
