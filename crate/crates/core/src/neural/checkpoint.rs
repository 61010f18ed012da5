//! JSON model checkpoints. Floats are written in shortest round-trip form, so
//! loading restores every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MlpModel, NeuralError};
use crate::features::{FeatureLayout, Normalizer};

pub const CHECKPOINT_MAGIC: &str = "plume-dd-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub subdomain: usize,
    pub pollutant: String,
    pub seed: u64,
    pub iterations: usize,
    pub lambda: f64,
    pub kappa: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub version: u32,
    pub meta: CheckpointMeta,
    pub layout: FeatureLayout,
    pub normalizer: Normalizer,
    pub model: MlpModel,
}

impl Checkpoint {
    pub fn new(model: MlpModel, normalizer: Normalizer, layout: FeatureLayout, meta: CheckpointMeta) -> Self {
        Self { magic: CHECKPOINT_MAGIC.into(), version: CHECKPOINT_VERSION, meta, layout, normalizer, model }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NeuralError> {
        serde_json::to_vec(self).map_err(|e| NeuralError::Format(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| NeuralError::Format(format!("unreadable: {e}")))?;
        match value.get("magic").and_then(|m| m.as_str()) {
            Some(CHECKPOINT_MAGIC) => {}
            Some(other) => return Err(NeuralError::Format(format!("bad magic {other:?}"))),
            None => return Err(NeuralError::Format("missing magic".into())),
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(NeuralError::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| NeuralError::Format(format!("corrupt: {e}")))?;
        ck.model.check_shapes()?;
        if ck.normalizer.width() != ck.model.input_width || ck.layout.width() != ck.model.input_width {
            return Err(NeuralError::Format("normalizer, layout and model widths disagree".into()));
        }
        Ok(ck)
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), NeuralError> {
    std::fs::write(path, ck.to_bytes()?).map_err(|e| NeuralError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NeuralError> {
    let bytes = std::fs::read(path).map_err(|e| NeuralError::Io(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}
