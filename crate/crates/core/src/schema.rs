//! Feature schema: ordered column names, named column groups, and per-column
//! normalization constants shared by the ranker and the moments branch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    /// One-hot / binary columns are stored raw and never z-scored.
    Indicator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// z-score constants for one column, estimated on training data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
    /// Named groups (e.g. `user_full`) expandable inside bias feature sets.
    pub groups: BTreeMap<String, Vec<String>>,
    /// Present once fitted; same length as `columns`.
    pub normalization: Option<Vec<Normalization>>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<ColumnSpec>, groups: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let schema = FeatureSchema {
            columns,
            groups,
            normalization: None,
        };
        for cols in schema.groups.values() {
            for c in cols {
                schema.index_of(c)?;
            }
        }
        Ok(schema)
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| CoreError::UnknownColumn(name.to_string()))
    }

    /// Expand a list of column or group names into column indices, in
    /// declared order. Unknown names are rejected by name.
    pub fn resolve(&self, names: &[String]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for name in names {
            if let Some(group) = self.groups.get(name) {
                for col in group {
                    out.push(self.index_of(col)?);
                }
            } else {
                out.push(self.index_of(name)?);
            }
        }
        Ok(out)
    }

    pub fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.width() {
            return Err(CoreError::ShapeMismatch {
                context: "feature vector".into(),
                expected: format!("{} columns", self.width()),
                actual: format!("{} values", x.len()),
            });
        }
        Ok(())
    }

    /// Fit z-score constants for continuous columns over row-major data.
    /// Indicator columns keep mean 0 / std 1. Zero-variance columns get
    /// std 1 so normalization is a pure shift.
    pub fn fit_normalization<'a>(&mut self, rows: impl Iterator<Item = &'a [f64]> + Clone) {
        let width = self.width();
        let mut count = 0usize;
        let mut sums = vec![0.0; width];
        for row in rows.clone() {
            count += 1;
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        let means: Vec<f64> = sums.iter().map(|s| s / (count.max(1) as f64)).collect();
        let mut sq = vec![0.0; width];
        for row in rows {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let norm = (0..width)
            .map(|i| match self.columns[i].kind {
                ColumnKind::Indicator => Normalization { mean: 0.0, std: 1.0 },
                ColumnKind::Continuous => {
                    let var = sq[i] / (count.max(1) as f64);
                    let std = var.sqrt();
                    Normalization {
                        mean: means[i],
                        std: if std > 1e-9 { std } else { 1.0 },
                    }
                }
            })
            .collect();
        self.normalization = Some(norm);
    }

    /// z-score a raw feature vector. Identity until normalization is fitted.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        match &self.normalization {
            None => Ok(x.to_vec()),
            Some(norm) => Ok(x
                .iter()
                .zip(norm)
                .map(|(v, n)| (v - n.mean) / n.std)
                .collect()),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
