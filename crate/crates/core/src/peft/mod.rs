//! Parameter-efficient fine-tuning: LoRA and bottleneck adapters.

mod adapter;
mod count;
mod lora;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use adapter::{attach_adapters, AdapterConfig, AdapterSlot, BottleneckAdapter, Nonlinearity, ADAPTER_POSITIONS};
pub use count::{count_trainable, param_plan, ParamCount, ParamSpec};
pub use lora::{attach_lora, merge_lora, LoraAdapter, LoraConfig};

use crate::error::Result;
use crate::model::ClassifierModel;

/// Fine-tuning method selector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    None,
    Lora,
    Adapter,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Lora => "lora",
            Method::Adapter => "adapter",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What is attached to a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Peft {
    #[default]
    None,
    Lora(LoraConfig),
    Adapter(AdapterConfig),
}

impl Peft {
    pub fn method(&self) -> Method {
        match self {
            Peft::None => Method::None,
            Peft::Lora(_) => Method::Lora,
            Peft::Adapter(_) => Method::Adapter,
        }
    }
}

/// Stops gradient flow into every backbone tensor. The classification head
/// and any attached PEFT tensors stay trainable.
pub fn freeze_base(model: &mut ClassifierModel) {
    model.for_each_param_mut(|name, t| {
        if !ClassifierModel::is_head_param(name) && !ClassifierModel::is_peft_param(name) {
            t.set_requires_grad(false);
            t.clear_grad();
        }
    });
}

/// Attaches the method described by `peft` (no-op for `Peft::None`).
pub fn attach(model: &mut ClassifierModel, peft: &Peft, seed: u64) -> Result<()> {
    match peft {
        Peft::None => Ok(()),
        Peft::Lora(cfg) => attach_lora(model, cfg, seed),
        Peft::Adapter(cfg) => attach_adapters(model, cfg, seed),
    }
}
