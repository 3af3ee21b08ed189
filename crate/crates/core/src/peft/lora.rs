use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassifierModel, Mode, ProjName, INIT_STD};
use crate::rng;
use crate::tensor::{Element, Tape, Tensor, Var};

use super::{freeze_base, Peft};

/// LoRA hyperparameters. Defaults are rank 2, alpha 16, dropout 0.05 on the
/// key and value projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraConfig {
    pub r: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub target_modules: Vec<String>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            r: 2,
            alpha: 16.0,
            dropout: 0.05,
            target_modules: vec!["k_proj".into(), "v_proj".into()],
        }
    }
}

impl LoraConfig {
    /// Validates the config and resolves the target projections, in
    /// canonical q/k/v/o order.
    pub fn targets(&self) -> Result<Vec<ProjName>> {
        if self.r == 0 {
            return Err(Error::Config("lora r must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("lora dropout {} not in [0, 1)", self.dropout)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("lora alpha must be finite".into()));
        }
        if self.target_modules.is_empty() {
            return Err(Error::Config("lora target_modules is empty".into()));
        }
        let mut targets = Vec::new();
        for name in &self.target_modules {
            let p = ProjName::parse(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown lora target {name:?}; expected q_proj, k_proj, v_proj or o_proj"
                ))
            })?;
            if !targets.contains(&p) {
                targets.push(p);
            }
        }
        targets.sort();
        Ok(targets)
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.r as f64
    }
}

/// Low-rank update `ΔW = scaling·B·A` for one projection.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    /// `r × d_in`
    pub a: Tensor,
    /// `d_out × r`
    pub b: Tensor,
    pub scaling: f64,
    pub dropout: f64,
    pub layer: usize,
    pub target: ProjName,
}

impl LoraAdapter {
    pub fn new(cfg: &LoraConfig, layer: usize, target: ProjName, d_in: usize, d_out: usize, seed: u64) -> Self {
        let name = format!("lora.{layer}.{target}");
        let a = rng::normal_tensor(seed, &format!("{name}.A"), &[cfg.r, d_in], INIT_STD);
        LoraAdapter {
            a: a.with_requires_grad(true),
            b: Tensor::zeros([d_out, cfg.r]).with_requires_grad(true),
            scaling: cfg.scaling(),
            dropout: cfg.dropout,
            layer,
            target,
        }
    }

    pub fn rank(&self) -> usize {
        self.a.shape()[0]
    }

    /// `scaling · (dropout(x)·Aᵀ)·Bᵀ`; dropout only in train mode.
    pub fn branch<T: Element>(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let name = format!("lora.{}.{}", self.layer, self.target);
        let a = tape.param(&format!("{name}.A"), &self.a);
        let b = tape.param(&format!("{name}.B"), &self.b);
        let input = match mode {
            Mode::Train { dropout_seed } if self.dropout > 0.0 => {
                let mut rng = rng::stream(dropout_seed, &name);
                tape.dropout(x, self.dropout, &mut rng)?
            }
            _ => x,
        };
        let low = tape.matmul_t(input, a)?;
        let up = tape.matmul_t(low, b)?;
        tape.scale(up, T::from_f64(self.scaling))
    }

    /// `scaling·B·A`, the dense `d_out × d_in` update, accumulated in f64.
    pub fn delta(&self) -> Vec<f64> {
        let (r, d_in) = (self.a.shape()[0], self.a.shape()[1]);
        let d_out = self.b.shape()[0];
        let (a, b) = (self.a.data(), self.b.data());
        let mut out = vec![0.0f64; d_out * d_in];
        for o in 0..d_out {
            for k in 0..r {
                let bv = b[o * r + k] as f64;
                if bv == 0.0 {
                    continue;
                }
                for i in 0..d_in {
                    out[o * d_in + i] += bv * a[k * d_in + i] as f64;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= self.scaling);
        out
    }
}

/// Freezes the backbone and installs one adapter per (layer, target).
pub fn attach_lora(model: &mut ClassifierModel, cfg: &LoraConfig, seed: u64) -> Result<()> {
    if model.peft != Peft::None {
        return Err(Error::State(format!("{} already attached", model.peft.method())));
    }
    let targets = cfg.targets()?;
    freeze_base(model);
    let d = model.config.d_model;
    for (layer, block) in model.blocks.iter_mut().enumerate() {
        for &t in &targets {
            block.attn.get_mut(t).lora = Some(LoraAdapter::new(cfg, layer, t, d, d, seed));
        }
    }
    model.peft = Peft::Lora(cfg.clone());
    Ok(())
}

/// Folds every adapter into its projection weight and removes it.
pub fn merge_lora(model: &mut ClassifierModel) -> Result<()> {
    if !matches!(model.peft, Peft::Lora(_)) {
        return Err(Error::State("no LoRA adapters attached".into()));
    }
    for block in &mut model.blocks {
        for name in ProjName::ALL {
            let proj = block.attn.get_mut(name);
            if let Some(lora) = proj.lora.take() {
                for (w, d) in proj.weight.data_mut().iter_mut().zip(lora.delta()) {
                    if d != 0.0 {
                        *w = (*w as f64 + d) as f32;
                    }
                }
            }
        }
    }
    model.peft = Peft::None;
    Ok(())
}
