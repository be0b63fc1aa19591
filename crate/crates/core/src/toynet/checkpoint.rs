//! JSON checkpoint: magic string and version, topology, training settings,
//! and the flat parameter vector.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Topology, ToyNet};
use super::train::TrainConfig;
use super::NetError;
use crate::losses::LossConfig;

pub const CHECKPOINT_MAGIC: &str = "polardet-toynet";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub version: u32,
    pub topology: Topology,
    pub input_width: usize,
    pub input_height: usize,
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// How the regression loss is reduced within an image.
    pub regression_reduction: String,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        net: &ToyNet,
        input_width: usize,
        input_height: usize,
        train: TrainConfig,
        loss: LossConfig,
    ) -> Self {
        Self {
            magic: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            topology: *net.topology(),
            input_width,
            input_height,
            train,
            loss,
            regression_reduction: "mean-over-pole-cells".to_string(),
            params: net.params.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| NetError::Version(format!("not a checkpoint: {e}")))?;
        let magic = value.get("magic").and_then(|m| m.as_str()).unwrap_or("");
        if magic != CHECKPOINT_MAGIC {
            return Err(NetError::Version(format!("bad magic string {magic:?}")));
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(NetError::Version(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        serde_json::from_value(value)
            .map_err(|e| NetError::Version(format!("malformed checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn network(&self) -> Result<ToyNet, NetError> {
        ToyNet::from_params(self.topology, self.params.clone())
            .map_err(|e| NetError::Version(format!("parameters do not fit topology: {e}")))
    }
}
