//! AdamW and the epoch/batch training loop.

mod adamw;
mod batches;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adamw::{adamw_step, adamw_step_tensors, AdamWState};
pub use batches::{batch_of, epoch_order, make_batches, Batch};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ClassifierModel, Mode};
use crate::peft::{count_trainable, Method, ParamCount};
use crate::rng;
use crate::tensor::Tape;

pub const LORA_LEARNING_RATE: f64 = 2e-4;
pub const ADAPTER_LEARNING_RATE: f64 = 1e-4;
pub const MICRO_LEARNING_RATE: f64 = 5e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    pub max_seq_len: usize,
}

impl TrainConfig {
    /// LoRA: 3 epochs at 2e-4. Adapter: 5 epochs at 1e-4. `none` trains the
    /// head only and shares the LoRA schedule.
    pub fn preset(method: Method) -> Self {
        let (epochs, learning_rate) = match method {
            Method::Lora | Method::None => (3, LORA_LEARNING_RATE),
            Method::Adapter => (5, ADAPTER_LEARNING_RATE),
        };
        TrainConfig {
            method,
            epochs,
            batch_size: 8,
            learning_rate,
            weight_decay: 0.001,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            max_seq_len: 128,
        }
    }

    /// The preset schedule with the desk-scale learning rate.
    pub fn micro(method: Method) -> Self {
        TrainConfig {
            learning_rate: MICRO_LEARNING_RATE,
            ..Self::preset(method)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return fail(format!("betas must lie in [0, 1), got {:?}", self.betas));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return fail(format!("eps must be positive, got {}", self.eps));
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub method: Method,
    pub epoch_losses: Vec<f64>,
    /// Accuracy of the training-mode forward passes within each epoch.
    pub epoch_accuracies: Vec<f64>,
    pub steps: u64,
    pub learning_rate: f64,
    pub params: ParamCount,
    /// Informational only; excluded from equality-sensitive output.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.epoch_accuracies.last().copied().unwrap_or(f64::NAN)
    }
}

/// The dropout seed for one optimizer step.
fn step_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ rng::fnv1a64(format!("dropout.{epoch}.{batch}").as_bytes())
}

/// Forward, loss, backward and AdamW over `epochs × batches`. The model must
/// already carry the PEFT method named by `cfg.method`. Epoch and batch
/// numbers in errors are 1-based.
pub fn train(model: &mut ClassifierModel, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let attached = model.peft.method();
    if attached != cfg.method {
        return Err(Error::Config(format!(
            "train config asks for {} but the model carries {attached}",
            cfg.method
        )));
    }
    if cfg.max_seq_len > model.config.max_seq_len {
        return Err(Error::Config(format!(
            "train max_seq_len {} exceeds the model's {}",
            cfg.max_seq_len, model.config.max_seq_len
        )));
    }

    let start = Instant::now();
    let params = count_trainable(model);
    let mut state = AdamWState::new();
    let mut report = TrainReport {
        method: cfg.method,
        epoch_losses: Vec::with_capacity(cfg.epochs),
        epoch_accuracies: Vec::with_capacity(cfg.epochs),
        steps: 0,
        learning_rate: cfg.learning_rate,
        params,
        wall_seconds: 0.0,
    };
    model.zero_grads();
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let batches = make_batches(ds, cfg.batch_size, cfg.max_seq_len, cfg.seed, epoch)?;
        for (b, batch) in batches.iter().enumerate() {
            let numeric = |e: Error| {
                if e.is_numeric() {
                    Error::NonFiniteLoss {
                        epoch: epoch + 1,
                        batch: b + 1,
                    }
                } else {
                    e
                }
            };
            let mut tape = Tape::<f32>::new();
            let mode = Mode::Train {
                dropout_seed: step_seed(cfg.seed, epoch, b),
            };
            let logits = model.forward(&mut tape, &batch.tokens, mode).map_err(numeric)?;
            correct += count_correct(tape.value(logits).data(), &batch.targets);
            let loss = tape.nll_loss(logits, &batch.targets).map_err(numeric)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(numeric(Error::NonFinite { op: "nll_loss" }));
            }
            loss_sum += value * batch.targets.len() as f64;
            let grads = tape.backward(loss).map_err(numeric)?;
            model.accumulate_grads(&grads)?;
            adamw_step(model, &mut state, cfg).map_err(numeric)?;
        }
        report.epoch_losses.push(loss_sum / ds.len() as f64);
        report.epoch_accuracies.push(correct as f64 / ds.len() as f64);
    }
    report.steps = state.t;
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Argmax predictions against targets; ties go to class 0.
fn count_correct(logits: &[f32], targets: &[usize]) -> usize {
    let classes = logits.len() / targets.len().max(1);
    logits
        .chunks(classes)
        .zip(targets)
        .filter(|(row, &t)| argmax(row) == t)
        .count()
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
