//! Interaction records and the delimiter-separated dataset file format.
//!
//! The dataset file is CSV with a header row; columns are the schema's
//! feature names followed by the labels and the timestamp index. Lines
//! starting with `#` before the header carry provenance and are skipped on
//! read.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::schema::FeatureSchema;

/// One (user, item) event: full features, per-task labels, bias attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user_id: u64,
    pub item_id: u64,
    pub features: Vec<f64>,
    pub watch_time_seconds: f64,
    pub like: u8,
    pub looped: u8,
    pub time_index: u32,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub interactions: Vec<Interaction>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Label for a named task, in raw (untransformed) space.
    pub fn raw_label(&self, task: &str, i: &Interaction) -> Result<f64> {
        match task {
            "watch_time" => Ok(i.watch_time_seconds),
            "like" => Ok(i.like as f64),
            "loop" => Ok(i.looped as f64),
            other => Err(CoreError::InvalidConfig(format!("unknown task `{other}`"))),
        }
    }

    /// Deterministic split: every k-th interaction (by position) goes to the
    /// holdout. Returns (train, holdout) index lists.
    pub fn split_holdout(&self, holdout_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let period = if holdout_fraction <= 0.0 {
            usize::MAX
        } else {
            (1.0 / holdout_fraction).round().max(2.0) as usize
        };
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        for idx in 0..self.interactions.len() {
            if idx % period == period - 1 {
                holdout.push(idx);
            } else {
                train.push(idx);
            }
        }
        (train, holdout)
    }

    pub fn write_csv(&self, path: &Path, provenance: &str) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "# provenance: {provenance}")?;
        let mut header = vec!["user_id".to_string(), "item_id".to_string()];
        header.extend(self.schema.column_names());
        header.extend(["watch_time".into(), "like".into(), "loop".into(), "t".into()]);
        let mut w = csv::Writer::from_writer(file);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in &self.interactions {
            record.clear();
            record.push(i.user_id.to_string());
            record.push(i.item_id.to_string());
            for f in &i.features {
                record.push(format_float(*f));
            }
            record.push(format_float(i.watch_time_seconds));
            record.push(i.like.to_string());
            record.push(i.looped.to_string());
            record.push(i.time_index.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a dataset written by [`Dataset::write_csv`]. The schema (column
    /// names, groups) must be supplied by the caller; the header is checked
    /// against it.
    pub fn read_csv(path: &Path, schema: FeatureSchema) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if !line.starts_with('#') {
                lines.push(line);
            }
        }
        let joined = lines.join("\n");
        let mut reader = csv::Reader::from_reader(joined.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
        let expected_feature_count = schema.width();
        let expected_len = 2 + expected_feature_count + 4;
        if header.len() != expected_len {
            return Err(CoreError::ShapeMismatch {
                context: "dataset header".into(),
                expected: format!("{expected_len} columns"),
                actual: format!("{} columns", header.len()),
            });
        }
        for (name, col) in schema.column_names().iter().zip(&header[2..]) {
            if name != col {
                return Err(CoreError::InvalidConfig(format!(
                    "dataset column `{col}` does not match schema column `{name}`"
                )));
            }
        }
        let mut interactions = Vec::new();
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            let get = |j: usize| -> Result<&str> {
                record.get(j).ok_or(CoreError::MalformedRow {
                    row: row_idx,
                    reason: format!("missing column {j}"),
                })
            };
            let parse_f = |j: usize| -> Result<f64> {
                get(j)?.parse().map_err(|e| CoreError::MalformedRow {
                    row: row_idx,
                    reason: format!("column {j}: {e}"),
                })
            };
            let mut features = Vec::with_capacity(expected_feature_count);
            for j in 0..expected_feature_count {
                features.push(parse_f(2 + j)?);
            }
            let base = 2 + expected_feature_count;
            interactions.push(Interaction {
                user_id: parse_f(0)? as u64,
                item_id: parse_f(1)? as u64,
                features,
                watch_time_seconds: parse_f(base)?,
                like: parse_f(base + 1)? as u8,
                looped: parse_f(base + 2)? as u8,
                time_index: parse_f(base + 3)? as u32,
            });
        }
        Ok(Dataset { schema, interactions })
    }
}

/// Shortest decimal that round-trips the exact f64 value.
pub fn format_float(v: f64) -> String {
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // serde_json uses ryu internally; formatting through it keeps float text
    // identical across the dataset and JSON artifacts.
    serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnKind, ColumnSpec};
    use std::collections::BTreeMap;

    fn tiny_dataset() -> Dataset {
        let schema = FeatureSchema::new(
            vec![
                ColumnSpec { name: "f0".into(), kind: ColumnKind::Continuous },
                ColumnSpec { name: "f1".into(), kind: ColumnKind::Continuous },
            ],
            BTreeMap::new(),
        )
        .unwrap();
        Dataset {
            schema,
            interactions: vec![
                Interaction {
                    user_id: 3,
                    item_id: 9,
                    features: vec![0.1, -2.5e-7],
                    watch_time_seconds: 12.75,
                    like: 1,
                    looped: 0,
                    time_index: 2,
                },
                Interaction {
                    user_id: 4,
                    item_id: 1,
                    features: vec![1.0 / 3.0, 600.0],
                    watch_time_seconds: 0.0,
                    like: 0,
                    looped: 1,
                    time_index: 0,
                },
            ],
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        ds.write_csv(&path, "test seed=1").unwrap();
        let loaded = Dataset::read_csv(&path, ds.schema.clone()).unwrap();
        assert_eq!(loaded.interactions, ds.interactions);
    }

    #[test]
    fn header_mismatch_rejected() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        ds.write_csv(&path, "test").unwrap();
        let other = FeatureSchema::new(
            vec![ColumnSpec { name: "zz".into(), kind: ColumnKind::Continuous }],
            BTreeMap::new(),
        )
        .unwrap();
        assert!(Dataset::read_csv(&path, other).is_err());
    }

    #[test]
    fn holdout_split_is_deterministic_and_disjoint() {
        let ds = tiny_dataset();
        let (train, holdout) = ds.split_holdout(0.5);
        assert_eq!(train.len() + holdout.len(), ds.len());
        let (t2, h2) = ds.split_holdout(0.5);
        assert_eq!(train, t2);
        assert_eq!(holdout, h2);
    }
}
