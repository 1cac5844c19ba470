//! Run configuration: one TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use pedaltrack_core::mtimnet::{ModelConfig, TrainConfig};
use pedaltrack_core::pws::{BikeGeometry, PwsConfig};
use pedaltrack_core::seed::sub_seed;
use pedaltrack_core::synth::NoiseSpec;
use pedaltrack_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// How training windows are cut from a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Start-to-start spacing of the one-second training windows, in ticks
    /// of the 10 Hz truth grid. 10 gives disjoint windows.
    pub stride: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
        }
    }
}

pub const DEFAULT_STRIDE: usize = 3;

/// Initial state handed to the trackers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackStart {
    /// Compass heading, rad.
    pub heading: f64,
    /// Speed along the heading, m/s (dead reckoning only).
    pub speed: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Top-level seed. The model, train, dropout and noise seeds are derived
    /// from it by name and override the per-section values.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub pws: PwsConfig,
    pub geom: BikeGeometry,
    pub noise: NoiseSpec,
    pub start: TrackStart,
    pub paths: Paths,
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` in order, then the seed.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    fn derive_seeds(&mut self) {
        self.model.seed = sub_seed(self.seed, "init");
        self.train.seed = sub_seed(self.seed, "train");
        self.train.dropout_seed = sub_seed(self.seed, "dropout");
        self.noise.seed = sub_seed(self.seed, "noise");
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.pws.validate()?;
        self.geom.validate()?;
        self.noise.validate()?;
        if self.dataset.stride == 0 {
            return Err(Error::Config("dataset.stride must be positive".into()));
        }
        for p in [&self.paths.corpus, &self.paths.checkpoint]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "path {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// Every key with its default value, as TOML.
    pub fn default_toml() -> String {
        toml::to_string(&RunConfig::default()).expect("default config serializes")
    }
}

/// `a.b.c=value`; the value is parsed as TOML and falls back to a string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?} crosses a value")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_load_and_derive_seeds() {
        let a = RunConfig::load(None, &[], None).unwrap();
        let b = RunConfig::load(None, &[], Some(1)).unwrap();
        assert_eq!(a.train.epochs, 50);
        assert_ne!(a.train.seed, b.train.seed);
        assert_ne!(a.noise.seed, a.train.seed);
    }

    #[test]
    fn overrides_apply() {
        let o = vec![
            "train.epochs=2".to_string(),
            "pws.use_cpc=false".into(),
            "geom.r=0.3".into(),
        ];
        let c = RunConfig::load(None, &o, None).unwrap();
        assert_eq!(c.train.epochs, 2);
        assert!(!c.pws.use_cpc);
        assert_eq!(c.geom.r, 0.3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for o in ["train.epoch=2", "bogus=1", "train=3", "noequals"] {
            assert!(
                RunConfig::load(None, &[o.to_string()], None).is_err(),
                "{o}"
            );
        }
    }

    #[test]
    fn missing_paths_are_rejected() {
        let o = vec!["paths.corpus=\"/definitely/not/here\"".to_string()];
        assert!(RunConfig::load(None, &o, None).is_err());
    }

    #[test]
    fn default_toml_round_trips() {
        let text = RunConfig::default_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
