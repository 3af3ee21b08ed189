use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassifierModel, INIT_STD};
use crate::rng;
use crate::tensor::{Element, Tape, Tensor, Var};

use super::{freeze_base, Peft};

pub const ADAPTER_POSITIONS: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    #[default]
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    /// Bottleneck width; `max(4, d_model/16)` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bottleneck_dim: Option<usize>,
    /// Adapters per block. Only 2 is supported.
    pub positions_per_block: usize,
    pub nonlinearity: Nonlinearity,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            bottleneck_dim: None,
            positions_per_block: ADAPTER_POSITIONS,
            nonlinearity: Nonlinearity::Gelu,
        }
    }
}

impl AdapterConfig {
    pub fn bottleneck(&self, d_model: usize) -> usize {
        self.bottleneck_dim.unwrap_or((d_model / 16).max(4))
    }

    pub fn validate(&self) -> Result<()> {
        if self.bottleneck_dim == Some(0) {
            return Err(Error::Config("adapter bottleneck_dim must be at least 1".into()));
        }
        if self.positions_per_block != ADAPTER_POSITIONS {
            return Err(Error::Config(format!(
                "adapter positions_per_block must be {ADAPTER_POSITIONS}, got {}",
                self.positions_per_block
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AdapterSlot {
    PostAttn,
    PostMlp,
}

impl AdapterSlot {
    pub const ALL: [AdapterSlot; 2] = [AdapterSlot::PostAttn, AdapterSlot::PostMlp];

    pub fn as_str(self) -> &'static str {
        match self {
            AdapterSlot::PostAttn => "post_attn",
            AdapterSlot::PostMlp => "post_mlp",
        }
    }
}

impl fmt::Display for AdapterSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Residual bottleneck: `h + gelu(h·W_down + b_down)·W_up + b_up`.
#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckAdapter {
    /// `d_model × m`
    pub down: Tensor,
    pub down_bias: Tensor,
    /// `m × d_model`
    pub up: Tensor,
    pub up_bias: Tensor,
    pub layer: usize,
    pub slot: AdapterSlot,
}

impl BottleneckAdapter {
    pub fn new(layer: usize, slot: AdapterSlot, d_model: usize, m: usize, seed: u64) -> Self {
        let name = format!("adapter.{layer}.{slot}.down.weight");
        BottleneckAdapter {
            down: rng::normal_tensor(seed, &name, &[d_model, m], INIT_STD).with_requires_grad(true),
            down_bias: Tensor::zeros([m]).with_requires_grad(true),
            up: Tensor::zeros([m, d_model]).with_requires_grad(true),
            up_bias: Tensor::zeros([d_model]).with_requires_grad(true),
            layer,
            slot,
        }
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, h: Var) -> Result<Var> {
        let p = format!("adapter.{}.{}", self.layer, self.slot);
        let down = tape.param(&format!("{p}.down.weight"), &self.down);
        let down_bias = tape.param(&format!("{p}.down.bias"), &self.down_bias);
        let up = tape.param(&format!("{p}.up.weight"), &self.up);
        let up_bias = tape.param(&format!("{p}.up.bias"), &self.up_bias);
        let z = tape.matmul(h, down)?;
        let z = tape.add_bias(z, down_bias)?;
        let z = tape.gelu(z)?;
        let z = tape.matmul(z, up)?;
        let z = tape.add_bias(z, up_bias)?;
        tape.add(h, z)
    }
}

/// Freezes the backbone and installs two adapters in every block.
pub fn attach_adapters(model: &mut ClassifierModel, cfg: &AdapterConfig, seed: u64) -> Result<()> {
    if model.peft != Peft::None {
        return Err(Error::State(format!("{} already attached", model.peft.method())));
    }
    cfg.validate()?;
    freeze_base(model);
    let d = model.config.d_model;
    let m = cfg.bottleneck(d);
    for (layer, block) in model.blocks.iter_mut().enumerate() {
        for (i, slot) in AdapterSlot::ALL.into_iter().enumerate() {
            block.adapters[i] = Some(BottleneckAdapter::new(layer, slot, d, m, seed));
        }
    }
    model.peft = Peft::Adapter(cfg.clone());
    Ok(())
}
