//! Run configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tinypeft_core::eval::config_hash;
use tinypeft_core::model::{ModelConfig, PRESET_NAMES};
use tinypeft_core::peft::{AdapterConfig, LoraConfig, Method, Peft};
use tinypeft_core::training::TrainConfig;

use crate::error::{CliError, Result};

/// A preset name or a full inline shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(String),
    Inline(ModelConfig),
}

/// Training settings. `epochs` and `learning_rate` fall back to the
/// per-method presets when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    pub batch_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub max_seq_len: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let p = TrainConfig::preset(Method::Lora);
        TrainSection {
            epochs: None,
            batch_size: p.batch_size,
            learning_rate: None,
            weight_decay: p.weight_decay,
            betas: p.betas,
            eps: p.eps,
            max_seq_len: p.max_seq_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora: Option<LoraConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<AdapterConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| tinypeft_core::Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model_config()?;
        for method in [Method::None, Method::Lora, Method::Adapter] {
            self.peft(method).and_then(|p| match p {
                Peft::Lora(c) => c.targets().map(|_| ()),
                Peft::Adapter(c) => c.validate(),
                Peft::None => Ok(()),
            })?;
            self.train_config(method).validate()?;
        }
        if self.train.max_seq_len > model.max_seq_len {
            return Err(CliError::Config(format!(
                "train.max_seq_len {} exceeds the model's max_seq_len {}",
                self.train.max_seq_len, model.max_seq_len
            )));
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = match &self.model {
            ModelSpec::Preset(name) => ModelConfig::preset(name).map_err(|_| {
                CliError::Config(format!(
                    "unknown model preset {name:?}; expected one of {}",
                    PRESET_NAMES.join(", ")
                ))
            })?,
            ModelSpec::Inline(cfg) => cfg.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The PEFT attachment for `method`, from its section or the defaults.
    pub fn peft(&self, method: Method) -> tinypeft_core::Result<Peft> {
        Ok(match method {
            Method::None => Peft::None,
            Method::Lora => Peft::Lora(self.lora.clone().unwrap_or_default()),
            Method::Adapter => Peft::Adapter(self.adapter.clone().unwrap_or_default()),
        })
    }

    pub fn train_config(&self, method: Method) -> TrainConfig {
        let preset = TrainConfig::preset(method);
        let t = &self.train;
        TrainConfig {
            method,
            epochs: t.epochs.unwrap_or(preset.epochs),
            batch_size: t.batch_size,
            learning_rate: t.learning_rate.unwrap_or(preset.learning_rate),
            weight_decay: t.weight_decay,
            betas: t.betas,
            eps: t.eps,
            seed: self.seed,
            max_seq_len: t.max_seq_len,
        }
    }

    /// Sections that are filled in but unused by `method`.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.lora.is_some() && self.method != Method::Lora {
            out.push(format!("lora section is ignored because method is {}", self.method));
        }
        if self.adapter.is_some() && self.method != Method::Adapter {
            out.push(format!("adapter section is ignored because method is {}", self.method));
        }
        out
    }

    /// This config with a different method.
    pub fn with_method(&self, method: Method) -> Self {
        RunConfig {
            method,
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        config_hash(self.to_json().as_bytes())
    }
}
