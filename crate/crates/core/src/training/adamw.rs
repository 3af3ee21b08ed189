use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::ClassifierModel;
use crate::tensor::Tensor;

use super::TrainConfig;

/// First and second moments per parameter name, plus the shared step count.
/// Moments are kept in f64.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamWState {
    pub t: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamWState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    fn update(&mut self, name: &str, param: &mut Tensor, cfg: &TrainConfig) -> Result<()> {
        let Some(grad) = param.take_grad() else {
            return Ok(());
        };
        let n = param.numel();
        let (m, v) = self
            .moments
            .entry(name.to_owned())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        if m.len() != n {
            return Err(Error::Contract(format!(
                "optimizer state for {name} has {} entries, parameter has {n}",
                m.len()
            )));
        }
        let (b1, b2) = cfg.betas;
        let t = self.t as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = cfg.learning_rate;
        let decay = 1.0 - lr * cfg.weight_decay;
        for (((w, &g), m), v) in param.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g as f64;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            let next = *w as f64 * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
            *w = next as f32;
        }
        if !param.all_finite() {
            return Err(Error::NonFinite { op: "adamw" });
        }
        Ok(())
    }
}

/// One decoupled-weight-decay Adam update of every trainable parameter:
/// `θ ← θ·(1 − lr·wd) − lr·m̂/(√v̂ + eps)`. Gradients are consumed.
pub fn adamw_step(model: &mut ClassifierModel, state: &mut AdamWState, cfg: &TrainConfig) -> Result<()> {
    let mut missing = None;
    model.for_each_param(|name, t| {
        if missing.is_none() && t.requires_grad() && t.grad().is_none() {
            missing = Some(name.to_owned());
        }
    });
    if let Some(name) = missing {
        return Err(Error::Contract(format!("trainable parameter {name} has no gradient")));
    }
    state.t += 1;
    let mut result = Ok(());
    model.for_each_param_mut(|name, t| {
        if result.is_ok() && t.requires_grad() {
            result = state.update(name, t, cfg);
        }
    });
    result
}

/// [`adamw_step`] over a loose list of named tensors.
pub fn adamw_step_tensors(params: &mut [(&str, &mut Tensor)], state: &mut AdamWState, cfg: &TrainConfig) -> Result<()> {
    if let Some((name, _)) = params.iter().find(|(_, t)| t.requires_grad() && t.grad().is_none()) {
        return Err(Error::Contract(format!("trainable parameter {name} has no gradient")));
    }
    state.t += 1;
    for (name, t) in params.iter_mut() {
        if t.requires_grad() {
            state.update(name, t, cfg)?;
        }
    }
    Ok(())
}
