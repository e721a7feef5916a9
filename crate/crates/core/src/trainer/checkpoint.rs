//! Policy checkpoints.
//!
//! A checkpoint is one line of JSON (format tag, version, spaces, configs,
//! config hash, step count, layer sizes) followed by the parameters as
//! little-endian `f64`s. Saving what was loaded reproduces the file byte for
//! byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::EnvConfig;
use crate::spaces::SpaceDescriptor;
use crate::trainer::mlp::Mlp;
use crate::trainer::policy::{ActionMap, GreedyPolicy};
use crate::trainer::{TrainError, TrainerConfig};

pub const FORMAT: &str = "stepnet-policy";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyCheckpoint {
    pub spaces: SpaceDescriptor,
    pub trainer: TrainerConfig,
    pub env: EnvConfig,
    pub steps: u64,
    pub net: Mlp,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    steps: u64,
    layers: Vec<usize>,
    config_hash: String,
    spaces: SpaceDescriptor,
    trainer: TrainerConfig,
    env: EnvConfig,
}

fn corrupt(version: Option<u32>, reason: impl Into<String>) -> TrainError {
    TrainError::CorruptCheckpoint { version, reason: reason.into() }
}

/// SHA-256 over the JSON of both configs.
pub fn config_hash(trainer: &TrainerConfig, env: &EnvConfig) -> String {
    let text = serde_json::to_string(&(trainer, env)).expect("configs serialise");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl PolicyCheckpoint {
    pub fn policy(&self) -> GreedyPolicy {
        GreedyPolicy { net: self.net.clone(), map: ActionMap::new(&self.spaces, self.trainer.action_grid) }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            steps: self.steps,
            layers: self.net.sizes().to_vec(),
            config_hash: config_hash(&self.trainer, &self.env),
            spaces: self.spaces.clone(),
            trainer: self.trainer.clone(),
            env: self.env.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serialises");
        out.push(b'\n');
        for p in self.net.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt(None, "no header line"))?;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes[..split]).map_err(|e| corrupt(None, format!("header is not JSON: {e}")))?;
        let version = value.get("version").and_then(|v| v.as_u64()).map(|v| v as u32);
        if value.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
            return Err(corrupt(version, format!("not a {FORMAT} file")));
        }
        if version != Some(VERSION) {
            return Err(corrupt(version, format!("unsupported version, this build reads version {VERSION}")));
        }
        let header: Header =
            serde_json::from_value(value).map_err(|e| corrupt(version, format!("bad header: {e}")))?;
        if header.config_hash != config_hash(&header.trainer, &header.env) {
            return Err(corrupt(version, "config hash does not match the stored configs"));
        }
        let payload = &bytes[split + 1..];
        if payload.len() % 8 != 0 {
            return Err(corrupt(version, format!("parameter block of {} bytes is not whole f64s", payload.len())));
        }
        let params: Vec<f64> =
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let got = params.len();
        let net = Mlp::from_params(&header.layers, params).ok_or_else(|| {
            corrupt(version, format!("{got} parameters do not fit layers {:?}", header.layers))
        })?;
        if net.inputs() != header.spaces.observation_len() {
            return Err(corrupt(version, "network input does not match the observation space"));
        }
        Ok(PolicyCheckpoint { spaces: header.spaces, trainer: header.trainer, env: header.env, steps: header.steps, net })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| TrainError::Io { path: path.to_owned(), source })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|source| TrainError::Io { path: path.to_owned(), source })?;
        Self::from_bytes(&bytes)
    }

    /// Refuses to act in an environment with different spaces.
    pub fn check_spaces(&self, spaces: &SpaceDescriptor) -> Result<(), TrainError> {
        if self.spaces != *spaces {
            return Err(corrupt(
                Some(VERSION),
                format!("checkpoint spaces {:?} do not match environment spaces {:?}", self.spaces, spaces),
            ));
        }
        Ok(())
    }
}
