use serde::{Deserialize, Serialize};

use crate::data::VOCAB_SIZE;
use crate::error::{Error, Result};

/// Shape of a decoder-only classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub n_classes: usize,
}

pub const PRESET_NAMES: [&str; 4] = ["tinyllama", "phi2", "opt13b", "micro"];

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < VOCAB_SIZE {
            return Err(Error::Config(format!(
                "vocab_size {} is smaller than the byte vocabulary ({VOCAB_SIZE})",
                self.vocab_size
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        Ok(())
    }

    /// A published backbone shape, or the desk-scale `micro` shape.
    ///
    /// Only layer/head/width/context numbers come from the published models;
    /// the MLP width is `4·d_model` and the vocabulary is the byte tokenizer's.
    pub fn preset(name: &str) -> Result<Self> {
        let (n_layers, n_heads, d_model, max_seq_len) = match name {
            "tinyllama" => (22, 16, 2048, 2048),
            // 32 heads of width 32
            "phi2" => (24, 32, 32 * 32, 2048),
            "opt13b" => (24, 32, 2048, 2048),
            "micro" => {
                return Ok(ModelConfig {
                    n_layers: 4,
                    n_heads: 4,
                    d_model: 64,
                    d_ff: 256,
                    vocab_size: VOCAB_SIZE,
                    max_seq_len: 128,
                    n_classes: 2,
                })
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown model preset {other:?}; expected one of {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Ok(ModelConfig {
            n_layers,
            n_heads,
            d_model,
            d_ff: 4 * d_model,
            vocab_size: VOCAB_SIZE,
            max_seq_len,
            n_classes: 2,
        })
    }
}

pub fn preset_config(name: &str) -> Result<ModelConfig> {
    ModelConfig::preset(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_shapes() {
        let t = ModelConfig::preset("tinyllama").unwrap();
        assert_eq!((t.n_layers, t.n_heads, t.d_model, t.max_seq_len), (22, 16, 2048, 2048));
        let p = ModelConfig::preset("phi2").unwrap();
        assert_eq!((p.n_layers, p.n_heads, p.head_dim(), p.max_seq_len), (24, 32, 32, 2048));
        let o = ModelConfig::preset("opt13b").unwrap();
        assert_eq!((o.n_layers, o.n_heads, o.d_model), (24, 32, 2048));
        for name in PRESET_NAMES {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn micro_shape() {
        let m = ModelConfig::preset("micro").unwrap();
        assert_eq!(
            m,
            ModelConfig {
                n_layers: 4,
                n_heads: 4,
                d_model: 64,
                d_ff: 256,
                vocab_size: 259,
                max_seq_len: 128,
                n_classes: 2
            }
        );
    }

    #[test]
    fn unknown_preset_lists_valid_names() {
        let err = ModelConfig::preset("gpt5").unwrap_err().to_string();
        assert!(err.contains("tinyllama") && err.contains("micro"), "{err}");
    }

    #[test]
    fn validation() {
        let mut c = ModelConfig::preset("micro").unwrap();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        c.n_heads = 4;
        c.vocab_size = 100;
        assert!(c.validate().is_err());
    }
}
