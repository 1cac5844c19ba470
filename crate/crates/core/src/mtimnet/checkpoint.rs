use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::Mtimnet;
use super::params::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mtimnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl Mtimnet {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config().clone(),
            tensors: self.params().tensors().to_vec(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!(
                "not a checkpoint: format {:?}",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        Mtimnet::from_tensors(file.config, file.tensors)
    }
}

/// Writes the checkpoint through a temporary file in the same directory.
pub fn save_checkpoint(model: &Mtimnet, path: &Path) -> Result<()> {
    let text = model.to_json()?;
    crate::io::write_atomic(path, |f| f.write_all(text.as_bytes()))
}

pub fn load_checkpoint(path: &Path) -> Result<Mtimnet> {
    Mtimnet::from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            window: 16,
            n_experts: 4,
            feat_dim: 8,
            expert_dim: 5,
            conv_channels: 4,
            kernel: 5,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Mtimnet::new(small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.params().flat().iter().zip(m.params().flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let m = Mtimnet::new(small()).unwrap();
        let text = m.to_json().unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(Mtimnet::from_json(&bumped).is_err());
        let other = ModelConfig {
            expert_dim: 6,
            ..small()
        };
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["config"] = serde_json::to_value(other).unwrap();
        assert!(Mtimnet::from_json(&v.to_string()).is_err());
        assert!(Mtimnet::from_json("{}").is_err());
    }
}
