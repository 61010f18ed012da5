use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use plume_dd::ddtrain::DdConfig;
use plume_dd::scenario::ScenarioConfig;

use crate::Failure;

/// Everything a training run was started with; echoed into summary.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub out: PathBuf,
    pub scenario_dir: PathBuf,
    pub scenario_hash: String,
    pub scenario: ScenarioConfig,
    pub dd: DdConfig,
    pub pollutants: Vec<String>,
}

/// Recursively overlays `patch` onto `base`; non-object values replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `base` overlaid with the JSON file at `path`, if any.
pub fn layered<T: Serialize + DeserializeOwned>(base: &T, path: Option<&Path>) -> Result<T, Failure> {
    let mut value = serde_json::to_value(base).map_err(|e| Failure::Runtime(e.into()))?;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Usage)?;
        let patch: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(Failure::Usage)?;
        if !patch.is_object() {
            return Err(Failure::Usage(anyhow!("config {} must be a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    serde_json::from_value(value)
        .map_err(|e| Failure::Usage(anyhow!("invalid config{}: {e}", path.map(|p| format!(" {}", p.display())).unwrap_or_default())))
}

pub fn scenario_preset(name: &str) -> Result<ScenarioConfig, Failure> {
    ScenarioConfig::preset(name)
        .ok_or_else(|| Failure::Usage(anyhow!("unknown preset {name:?} (expected paper-mini or paper-full)")))
}
