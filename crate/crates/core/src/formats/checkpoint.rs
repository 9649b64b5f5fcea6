//! Single-file JSON checkpoint: format version, the training config, and
//! every parameter as name, shape and 32-bit values.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{GemError, Result};
use crate::pipeline::{GemModel, TrainConfig};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub params: Vec<ParamEntry>,
}

impl Checkpoint {
    pub fn from_store<T: Scalar>(config: &TrainConfig, store: &ParamStore<T>) -> Self {
        let params = store
            .iter()
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.values().iter().map(|v| v.to_f32().unwrap()).collect(),
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).map_err(|e| GemError::Format(format!("checkpoint: {e}")))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(GemError::Format(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GemError::Format(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Copies the stored values into `store`. Every entry must name a
    /// parameter of `store` with the same shape, and every parameter of
    /// `store` must be covered.
    pub fn restore_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.params {
            let id = store
                .id(&e.name)
                .ok_or_else(|| GemError::Shape(format!("checkpoint parameter '{}' is unknown to the model", e.name)))?;
            if !seen.insert(id) {
                return Err(GemError::Format(format!("checkpoint repeats parameter '{}'", e.name)));
            }
            let t = store.get_mut(id);
            if t.shape() != e.shape.as_slice() || e.values.len() != t.len() {
                return Err(GemError::Shape(format!(
                    "checkpoint parameter '{}' has shape {:?} with {} values, model expects {:?}",
                    e.name,
                    e.shape,
                    e.values.len(),
                    t.shape()
                )));
            }
            let values: Vec<T> = e.values.iter().map(|&v| T::lit(v as f64)).collect();
            *t = Tensor::new(&e.shape, values)?.with_requires_grad(true);
        }
        if let Some(id) = store.ids().find(|id| !seen.contains(id)) {
            return Err(GemError::Shape(format!(
                "checkpoint lacks parameter '{}'",
                store.name(id)
            )));
        }
        Ok(())
    }

    /// Rebuilds the model recorded in the checkpoint with its parameters.
    pub fn into_model<T: Scalar>(&self) -> Result<(GemModel, ParamStore<T>)> {
        let (model, mut store) = GemModel::new::<T>(&self.config)?;
        self.restore_into(&mut store)?;
        Ok((model, store))
    }
}
