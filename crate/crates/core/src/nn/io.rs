use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, Network, NetworkWeights, NnError, Scaler, ARCHITECTURE};

pub const WEIGHTS_FORMAT: &str = "fcmpc-weights";
pub const WEIGHTS_VERSION: u32 = 1;

/// On-disk layout of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub format: String,
    pub version: u32,
    pub architecture: Vec<usize>,
    pub layers: Vec<Layer>,
    pub scaler: Scaler,
    /// Free-form provenance, e.g. the dataset/config hash of the training run.
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

pub fn save_weights(
    network: &Network,
    metadata: serde_json::Map<String, serde_json::Value>,
    path: &Path,
) -> Result<(), NnError> {
    let file = WeightsFile {
        format: WEIGHTS_FORMAT.into(),
        version: WEIGHTS_VERSION,
        architecture: network.weights.widths(),
        layers: network.weights.layers.clone(),
        scaler: network.scaler.clone(),
        metadata,
    };
    let io = |source| NnError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| NnError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|source| NnError::Io { path: path.display().to_string(), source })
}

/// Load a model with the controller architecture `(5, 16, 32, 8, 2)`.
pub fn load_weights(path: &Path) -> Result<(Network, WeightsFile), NnError> {
    load_weights_with_architecture(path, &ARCHITECTURE)
}

pub fn load_weights_with_architecture(path: &Path, expected: &[usize]) -> Result<(Network, WeightsFile), NnError> {
    let load_err = |msg: String| NnError::Load { path: path.display().to_string(), msg };
    let text = fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
    let file: WeightsFile = serde_json::from_str(&text).map_err(|e| load_err(format!("corrupt weights file: {e}")))?;
    if file.format != WEIGHTS_FORMAT {
        return Err(load_err(format!("unknown format `{}`", file.format)));
    }
    if file.version != WEIGHTS_VERSION {
        return Err(load_err(format!(
            "weights version {} is not supported (expected {WEIGHTS_VERSION})",
            file.version
        )));
    }
    let weights = NetworkWeights { layers: file.layers.clone() };
    weights.validate(expected).map_err(|e| load_err(e.to_string()))?;
    if file.architecture != weights.widths() {
        return Err(load_err(format!(
            "declared architecture {:?} does not match layers {:?}",
            file.architecture,
            weights.widths()
        )));
    }
    let network = Network::new(weights, file.scaler.clone()).map_err(|e| load_err(e.to_string()))?;
    Ok((network, file))
}
