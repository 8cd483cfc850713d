use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::EnsembleConfig;
use crate::dataset::synthetic::SyntheticConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::AblationConfig;
use crate::refine::AscConfig;
use crate::signal::MelConfig;
use crate::train::{AscTrainConfig, SteTrainConfig};

/// Every tunable of the pipeline. Loaded from TOML, then overridden key by
/// key from the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; stages derive their own seeds from it unless set.
    pub seed: u64,
    /// Clip length tau in seconds.
    pub clip_s: f64,
    pub synthetic: SyntheticConfig,
    pub mel: MelConfig,
    pub encoder: EncoderConfig,
    pub ste_train: SteTrainConfig,
    pub ensemble: EnsembleConfig,
    pub asc: AscConfig,
    pub asc_train: AscTrainConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clip_s: 2.25 / 11.0,
            synthetic: SyntheticConfig::default(),
            mel: MelConfig::default(),
            encoder: EncoderConfig::default(),
            ste_train: SteTrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            asc: AscConfig::default(),
            asc_train: AscTrainConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn to_value(cfg: &RunConfig) -> toml::Value {
    toml::Value::try_from(cfg).expect("config serializes")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` where `key` is a dotted path such as
    /// `ste_train.epochs`. The value is read as a TOML literal, falling
    /// back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let value = parse_literal(raw.trim());
        let mut root = to_value(self);
        let bad = || Error::Config(format!("`{key}` is not a config key"));
        let parts: Vec<&str> = key.split('.').collect();
        let (last, path) = parts.split_last().ok_or_else(bad)?;
        let mut node = &mut root;
        for part in path {
            node = node.as_table_mut().and_then(|t| t.get_mut(*part)).ok_or_else(bad)?;
        }
        let entry = node.as_table_mut().and_then(|t| t.get_mut(*last)).ok_or_else(bad)?;
        if entry.is_table() {
            return Err(Error::Config(format!("`{key}` is a section, not a key")));
        }
        *entry = coerce(entry, value);
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        Ok(())
    }

    /// Every settable key with its current value, one `key = value` per line.
    pub fn keys(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        flatten("", &to_value(self), &mut out);
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.mel.validate()?;
        self.encoder.validate()?;
        self.ste_train.validate()?;
        self.ensemble.validate()?;
        self.asc.validate()?;
        self.asc_train.validate()
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Integers given where floats are expected become floats.
fn coerce(current: &toml::Value, value: toml::Value) -> toml::Value {
    match (current, &value) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(*i as f64),
        _ => value,
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Help text listing every key.
pub fn keys_help() -> String {
    let mut s = String::from("Configuration keys (set with --set KEY=VALUE or in the --config TOML file):\n");
    for (k, v) in RunConfig::default().keys() {
        s.push_str(&format!("  {k} = {v}\n"));
    }
    s
}
