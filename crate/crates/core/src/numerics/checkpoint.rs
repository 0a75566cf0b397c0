//! Versioned parameter checkpoints.
//!
//! JSON container with named shapes, flat value arrays, and the creating
//! seed. Values are written through serde_json's shortest-round-trip float
//! formatting, so finite values survive a save/load cycle bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numerics::params::ParamStore;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_store<S: Scalar>(store: &ParamStore<S>, seed: u64) -> Result<Self> {
        let mut params = Vec::with_capacity(store.len());
        for id in store.param_ids() {
            let values: Vec<f64> = store.values(id).iter().map(|v| v.to_f64_lossy()).collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite(format!(
                    "checkpoint of parameter `{}`",
                    store.name_of(id)
                )));
            }
            params.push(ParamRecord {
                name: store.name_of(id).to_string(),
                shape: store.shape(id).to_vec(),
                values,
            });
        }
        Ok(Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            seed,
            params,
        })
    }

    /// Rebuild a store with parameters in their original registration order.
    pub fn into_store<S: Scalar>(&self) -> Result<ParamStore<S>> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported checkpoint format version {}",
                self.format_version
            )));
        }
        let mut store = ParamStore::new();
        for rec in &self.params {
            let values = rec.values.iter().map(|&v| S::from_f64_lossy(v)).collect();
            store.register(&rec.name, &rec.shape, values)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
