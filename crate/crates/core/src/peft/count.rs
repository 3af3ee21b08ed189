use serde::Serialize;

use crate::error::Result;
use crate::model::{ClassifierModel, ModelConfig, ProjName};

use super::{AdapterSlot, Peft};

/// Trainable versus total parameter counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
    /// Trainable parameters inside LoRA/adapter tensors.
    pub peft: usize,
    /// Trainable parameters in the classification head.
    pub head: usize,
}

impl ParamCount {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.trainable as f64 / self.total as f64
        }
    }

    /// Trainable fraction counting only PEFT tensors.
    pub fn peft_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.peft as f64 / self.total as f64
        }
    }

    fn add(&mut self, name: &str, numel: usize, trainable: bool) {
        self.total += numel;
        if trainable {
            self.trainable += numel;
            if ClassifierModel::is_peft_param(name) {
                self.peft += numel;
            } else if ClassifierModel::is_head_param(name) {
                self.head += numel;
            }
        }
    }

    fn zero() -> Self {
        ParamCount {
            trainable: 0,
            total: 0,
            peft: 0,
            head: 0,
        }
    }

    pub fn from_plan(plan: &[ParamSpec]) -> Self {
        let mut c = Self::zero();
        for p in plan {
            c.add(&p.name, p.shape.iter().product(), p.trainable);
        }
        c
    }
}

/// Counts parameters by their `requires_grad` flag.
pub fn count_trainable(model: &ClassifierModel) -> ParamCount {
    let mut c = ParamCount::zero();
    model.for_each_param(|name, t| c.add(name, t.numel(), t.requires_grad()));
    c
}

/// A parameter as it would exist, without allocating it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// Names, shapes and trainability of every parameter of `cfg` with `peft`
/// attached, in canonical order, as [`ClassifierModel::init`] followed by
/// attaching would produce them. Lets full-size presets be counted without
/// materializing billions of weights.
pub fn param_plan(cfg: &ModelConfig, peft: &Peft) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let base_trainable = *peft == Peft::None;
    let (d, ff) = (cfg.d_model, cfg.d_ff);
    let mut plan = Vec::new();
    let mut push = |name: String, shape: &[usize], trainable: bool| {
        plan.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            trainable,
        })
    };
    push("tok_emb.weight".into(), &[cfg.vocab_size, d], base_trainable);
    push("pos_emb.weight".into(), &[cfg.max_seq_len, d], base_trainable);
    for i in 0..cfg.n_layers {
        let p = format!("blocks.{i}");
        push(format!("{p}.norm1.weight"), &[d], base_trainable);
        for name in ProjName::ALL {
            push(format!("{p}.attn.{name}.weight"), &[d, d], base_trainable);
            push(format!("{p}.attn.{name}.bias"), &[d], base_trainable);
        }
        push(format!("{p}.norm2.weight"), &[d], base_trainable);
        push(format!("{p}.mlp.w_in.weight"), &[d, ff], base_trainable);
        push(format!("{p}.mlp.w_in.bias"), &[ff], base_trainable);
        push(format!("{p}.mlp.w_out.weight"), &[ff, d], base_trainable);
        push(format!("{p}.mlp.w_out.bias"), &[d], base_trainable);
    }
    push("final_norm.weight".into(), &[d], base_trainable);
    push("head.weight".into(), &[d, cfg.n_classes], true);
    push("head.bias".into(), &[cfg.n_classes], true);
    match peft {
        Peft::None => {}
        Peft::Lora(lora) => {
            let targets = lora.targets()?;
            for i in 0..cfg.n_layers {
                for t in &targets {
                    push(format!("lora.{i}.{t}.A"), &[lora.r, d], true);
                    push(format!("lora.{i}.{t}.B"), &[d, lora.r], true);
                }
            }
        }
        Peft::Adapter(adapter) => {
            adapter.validate()?;
            let m = adapter.bottleneck(d);
            for i in 0..cfg.n_layers {
                for slot in AdapterSlot::ALL {
                    let p = format!("adapter.{i}.{slot}");
                    push(format!("{p}.down.weight"), &[d, m], true);
                    push(format!("{p}.down.bias"), &[m], true);
                    push(format!("{p}.up.weight"), &[m, d], true);
                    push(format!("{p}.up.bias"), &[d], true);
                }
            }
        }
    }
    Ok(plan)
}
