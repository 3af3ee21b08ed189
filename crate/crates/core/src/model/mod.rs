//! Decoder-only transformer with a sequence-classification head.
//!
//! Pre-norm residual blocks with learned absolute positions. Activations are
//! kept as `(batch·seq_len) × d_model` matrices; logits come from the hidden
//! state at each sequence's last non-PAD position.

mod config;

use std::fmt;

pub use config::{preset_config, ModelConfig, PRESET_NAMES};

use crate::data::PAD;
use crate::error::{Error, Result};
use crate::peft::{BottleneckAdapter, LoraAdapter, Peft};
use crate::rng;
use crate::tensor::{AttentionShape, Element, Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;

/// The four attention projections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProjName {
    Q,
    K,
    V,
    O,
}

impl ProjName {
    pub const ALL: [ProjName; 4] = [ProjName::Q, ProjName::K, ProjName::V, ProjName::O];

    pub fn as_str(self) -> &'static str {
        match self {
            ProjName::Q => "q_proj",
            ProjName::K => "k_proj",
            ProjName::V => "v_proj",
            ProjName::O => "o_proj",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for ProjName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Forward-pass mode. Dropout in attached PEFT modules only runs in `Train`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

/// Square attention projection, weight stored `out × in` and applied as
/// `x·Wᵀ + b`. May carry a LoRA adapter.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub weight: Tensor,
    pub bias: Tensor,
    pub lora: Option<LoraAdapter>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub q_proj: Projection,
    pub k_proj: Projection,
    pub v_proj: Projection,
    pub o_proj: Projection,
}

impl AttentionWeights {
    pub fn get(&self, name: ProjName) -> &Projection {
        match name {
            ProjName::Q => &self.q_proj,
            ProjName::K => &self.k_proj,
            ProjName::V => &self.v_proj,
            ProjName::O => &self.o_proj,
        }
    }

    pub fn get_mut(&mut self, name: ProjName) -> &mut Projection {
        match name {
            ProjName::Q => &mut self.q_proj,
            ProjName::K => &mut self.k_proj,
            ProjName::V => &mut self.v_proj,
            ProjName::O => &mut self.o_proj,
        }
    }
}

/// `gelu(x·W_in + b_in)·W_out + b_out`
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub w_in: Tensor,
    pub b_in: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock {
    pub norm1: Tensor,
    pub attn: AttentionWeights,
    pub norm2: Tensor,
    pub mlp: Mlp,
    /// Bottleneck adapter slots: after the attention sublayer, after the MLP.
    pub adapters: [Option<BottleneckAdapter>; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub config: ModelConfig,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: Tensor,
    pub head: Tensor,
    pub head_bias: Tensor,
    pub peft: Peft,
}

/// `L×L` row-major mask; `(i, j)` is allowed iff `j <= i`.
pub fn causal_mask(len: usize) -> Vec<bool> {
    (0..len * len).map(|idx| idx % len <= idx / len).collect()
}

/// A padded batch of token sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    ids: Vec<u32>,
    batch: usize,
    seq_len: usize,
    /// `true` for real tokens, `false` for PAD.
    mask: Vec<bool>,
}

impl TokenBatch {
    pub fn new(ids: Vec<u32>, batch: usize, seq_len: usize, mask: Vec<bool>) -> Result<Self> {
        if batch == 0 || seq_len == 0 || ids.len() != batch * seq_len || mask.len() != ids.len() {
            return Err(Error::Input(format!(
                "token batch {batch}×{seq_len} does not match {} ids / {} mask entries",
                ids.len(),
                mask.len()
            )));
        }
        let tb = TokenBatch { ids, batch, seq_len, mask };
        if let Some(b) = (0..batch).find(|&b| !tb.mask_row(b).contains(&true)) {
            return Err(Error::Input(format!("sequence {b} has no non-PAD token")));
        }
        Ok(tb)
    }

    /// Right-pads every sequence with PAD to the longest one.
    pub fn from_sequences<S: AsRef<[u32]>>(seqs: &[S]) -> Result<Self> {
        let seq_len = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut mask = Vec::with_capacity(seqs.len() * seq_len);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD, seq_len - s.len()));
            mask.extend((0..seq_len).map(|i| i < s.len()));
        }
        Self::new(ids, seqs.len(), seq_len, mask)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn mask_row(&self, b: usize) -> &[bool] {
        &self.mask[b * self.seq_len..(b + 1) * self.seq_len]
    }

    /// Flat row index of each sequence's last non-PAD token.
    pub fn last_positions(&self) -> Vec<usize> {
        (0..self.batch)
            .map(|b| {
                let last = self.mask_row(b).iter().rposition(|&m| m).unwrap();
                b * self.seq_len + last
            })
            .collect()
    }

    /// Causal mask combined with the key-side PAD mask, `batch × L × L`.
    pub fn attention_mask(&self) -> Vec<bool> {
        let l = self.seq_len;
        let causal = causal_mask(l);
        let mut out = Vec::with_capacity(self.batch * l * l);
        for b in 0..self.batch {
            let keys = self.mask_row(b);
            for i in 0..l {
                out.extend((0..l).map(|j| causal[i * l + j] && keys[j]));
            }
        }
        out
    }
}

impl Projection {
    fn init(seed: u64, name: &str, d: usize) -> Self {
        Projection {
            weight: rng::normal_tensor(seed, &format!("{name}.weight"), &[d, d], INIT_STD),
            bias: Tensor::zeros([d]),
            lora: None,
        }
    }

    fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        prefix: &str,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let w = tape.param(&format!("{prefix}.weight"), &self.weight);
        let b = tape.param(&format!("{prefix}.bias"), &self.bias);
        let y = tape.matmul_t(x, w)?;
        let y = tape.add_bias(y, b)?;
        match &self.lora {
            Some(lora) => {
                let delta = lora.branch(tape, x, mode)?;
                tape.add(y, delta)
            }
            None => Ok(y),
        }
    }
}

impl TransformerBlock {
    fn init(seed: u64, layer: usize, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let p = format!("blocks.{layer}");
        let proj = |n: ProjName| Projection::init(seed, &format!("{p}.attn.{n}"), d);
        TransformerBlock {
            norm1: Tensor::full([d], 1.0),
            attn: AttentionWeights {
                q_proj: proj(ProjName::Q),
                k_proj: proj(ProjName::K),
                v_proj: proj(ProjName::V),
                o_proj: proj(ProjName::O),
            },
            norm2: Tensor::full([d], 1.0),
            mlp: Mlp {
                w_in: rng::normal_tensor(seed, &format!("{p}.mlp.w_in.weight"), &[d, cfg.d_ff], INIT_STD),
                b_in: Tensor::zeros([cfg.d_ff]),
                w_out: rng::normal_tensor(seed, &format!("{p}.mlp.w_out.weight"), &[cfg.d_ff, d], INIT_STD),
                b_out: Tensor::zeros([d]),
            },
            adapters: [None, None],
        }
    }

    /// One pre-norm block. `h` is `(batch·L) × d_model`.
    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        layer: usize,
        h: Var,
        shape: AttentionShape,
        mask: &[bool],
        mode: Mode,
    ) -> Result<Var> {
        let p = format!("blocks.{layer}");
        let norm1 = tape.param(&format!("{p}.norm1.weight"), &self.norm1);
        let x = tape.rms_norm(h, norm1, NORM_EPS)?;
        let mut qkv = [None; 3];
        for (slot, name) in qkv.iter_mut().zip([ProjName::Q, ProjName::K, ProjName::V]) {
            let prefix = format!("{p}.attn.{name}");
            *slot = Some(self.attn.get(name).forward(tape, &prefix, x, mode)?);
        }
        let [q, k, v] = qkv.map(Option::unwrap);
        let a = tape.attention(q, k, v, shape, mask.to_vec())?;
        let a = self.attn.o_proj.forward(tape, &format!("{p}.attn.o_proj"), a, mode)?;
        let mut h = tape.add(h, a)?;
        if let Some(adapter) = &self.adapters[0] {
            h = adapter.forward(tape, h)?;
        }

        let norm2 = tape.param(&format!("{p}.norm2.weight"), &self.norm2);
        let x = tape.rms_norm(h, norm2, NORM_EPS)?;
        let w_in = tape.param(&format!("{p}.mlp.w_in.weight"), &self.mlp.w_in);
        let b_in = tape.param(&format!("{p}.mlp.w_in.bias"), &self.mlp.b_in);
        let w_out = tape.param(&format!("{p}.mlp.w_out.weight"), &self.mlp.w_out);
        let b_out = tape.param(&format!("{p}.mlp.w_out.bias"), &self.mlp.b_out);
        let m = tape.matmul(x, w_in)?;
        let m = tape.add_bias(m, b_in)?;
        let m = tape.gelu(m)?;
        let m = tape.matmul(m, w_out)?;
        let m = tape.add_bias(m, b_out)?;
        h = tape.add(h, m)?;
        if let Some(adapter) = &self.adapters[1] {
            h = adapter.forward(tape, h)?;
        }
        Ok(h)
    }

    fn visit<'a>(&'a self, layer: usize, f: &mut dyn FnMut(String, &'a Tensor)) {
        let p = format!("blocks.{layer}");
        f(format!("{p}.norm1.weight"), &self.norm1);
        for name in ProjName::ALL {
            let proj = self.attn.get(name);
            f(format!("{p}.attn.{name}.weight"), &proj.weight);
            f(format!("{p}.attn.{name}.bias"), &proj.bias);
        }
        f(format!("{p}.norm2.weight"), &self.norm2);
        f(format!("{p}.mlp.w_in.weight"), &self.mlp.w_in);
        f(format!("{p}.mlp.w_in.bias"), &self.mlp.b_in);
        f(format!("{p}.mlp.w_out.weight"), &self.mlp.w_out);
        f(format!("{p}.mlp.w_out.bias"), &self.mlp.b_out);
    }

    fn visit_mut(&mut self, layer: usize, f: &mut dyn FnMut(String, &mut Tensor)) {
        let p = format!("blocks.{layer}");
        f(format!("{p}.norm1.weight"), &mut self.norm1);
        for name in ProjName::ALL {
            let proj = self.attn.get_mut(name);
            f(format!("{p}.attn.{name}.weight"), &mut proj.weight);
            f(format!("{p}.attn.{name}.bias"), &mut proj.bias);
        }
        f(format!("{p}.norm2.weight"), &mut self.norm2);
        f(format!("{p}.mlp.w_in.weight"), &mut self.mlp.w_in);
        f(format!("{p}.mlp.w_in.bias"), &mut self.mlp.b_in);
        f(format!("{p}.mlp.w_out.weight"), &mut self.mlp.w_out);
        f(format!("{p}.mlp.w_out.bias"), &mut self.mlp.b_out);
    }

    fn visit_peft<'a>(&'a self, layer: usize, f: &mut dyn FnMut(String, &'a Tensor)) {
        for name in ProjName::ALL {
            if let Some(lora) = &self.attn.get(name).lora {
                f(format!("lora.{layer}.{name}.A"), &lora.a);
                f(format!("lora.{layer}.{name}.B"), &lora.b);
            }
        }
        for adapter in self.adapters.iter().flatten() {
            let p = format!("adapter.{layer}.{}", adapter.slot);
            f(format!("{p}.down.weight"), &adapter.down);
            f(format!("{p}.down.bias"), &adapter.down_bias);
            f(format!("{p}.up.weight"), &adapter.up);
            f(format!("{p}.up.bias"), &adapter.up_bias);
        }
    }

    fn visit_peft_mut(&mut self, layer: usize, f: &mut dyn FnMut(String, &mut Tensor)) {
        for name in ProjName::ALL {
            if let Some(lora) = &mut self.attn.get_mut(name).lora {
                f(format!("lora.{layer}.{name}.A"), &mut lora.a);
                f(format!("lora.{layer}.{name}.B"), &mut lora.b);
            }
        }
        for adapter in self.adapters.iter_mut().flatten() {
            let p = format!("adapter.{layer}.{}", adapter.slot);
            f(format!("{p}.down.weight"), &mut adapter.down);
            f(format!("{p}.down.bias"), &mut adapter.down_bias);
            f(format!("{p}.up.weight"), &mut adapter.up);
            f(format!("{p}.up.bias"), &mut adapter.up_bias);
        }
    }
}

impl ClassifierModel {
    /// Fresh model with `Normal(0, 0.02)` weights, zero biases and unit norm
    /// weights. Each tensor draws from its own named stream under `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let model = ClassifierModel {
            config: config.clone(),
            tok_emb: rng::normal_tensor(seed, "tok_emb.weight", &[config.vocab_size, d], INIT_STD),
            pos_emb: rng::normal_tensor(seed, "pos_emb.weight", &[config.max_seq_len, d], INIT_STD),
            blocks: (0..config.n_layers)
                .map(|i| TransformerBlock::init(seed, i, config))
                .collect(),
            final_norm: Tensor::full([d], 1.0),
            head: rng::normal_tensor(seed, "head.weight", &[d, config.n_classes], INIT_STD),
            head_bias: Tensor::zeros([config.n_classes]),
            peft: Peft::None,
        };
        let mut model = model;
        model.for_each_param_mut(|_, t| t.set_requires_grad(true));
        Ok(model)
    }

    /// Visits every parameter under its canonical dotted name: backbone
    /// tensors first, then head, then PEFT tensors layer by layer.
    pub fn for_each_param<'a>(&'a self, mut f: impl FnMut(&str, &'a Tensor)) {
        let mut g = |name: String, t: &'a Tensor| f(&name, t);
        g("tok_emb.weight".into(), &self.tok_emb);
        g("pos_emb.weight".into(), &self.pos_emb);
        for (i, block) in self.blocks.iter().enumerate() {
            block.visit(i, &mut g);
        }
        g("final_norm.weight".into(), &self.final_norm);
        g("head.weight".into(), &self.head);
        g("head.bias".into(), &self.head_bias);
        for (i, block) in self.blocks.iter().enumerate() {
            block.visit_peft(i, &mut g);
        }
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        let mut g = |name: String, t: &mut Tensor| f(&name, t);
        g("tok_emb.weight".into(), &mut self.tok_emb);
        g("pos_emb.weight".into(), &mut self.pos_emb);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_mut(i, &mut g);
        }
        g("final_norm.weight".into(), &mut self.final_norm);
        g("head.weight".into(), &mut self.head);
        g("head.bias".into(), &mut self.head_bias);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_peft_mut(i, &mut g);
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.for_each_param(|name, t| out.push((name.to_owned(), t)));
        out
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        let mut found = None;
        self.for_each_param(|n, t| {
            if n == name {
                found = Some(t);
            }
        });
        found
    }

    pub fn is_head_param(name: &str) -> bool {
        name.starts_with("head.")
    }

    pub fn is_peft_param(name: &str) -> bool {
        name.starts_with("lora.") || name.starts_with("adapter.")
    }

    /// Adds gradients from a backward pass into the parameters that require
    /// grad.
    pub fn accumulate_grads(&mut self, grads: &crate::tensor::Gradients<f32>) -> Result<()> {
        let mut result = Ok(());
        self.for_each_param_mut(|name, t| {
            if result.is_err() || !t.requires_grad() {
                return;
            }
            if let Some(g) = grads.named(name) {
                result = t.accumulate_grad(g);
            }
        });
        result
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param_mut(|_, t| t.clear_grad());
    }

    fn check_input(&self, batch: &TokenBatch) -> Result<()> {
        let cfg = &self.config;
        if batch.seq_len() > cfg.max_seq_len {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_seq_len {}",
                batch.seq_len(),
                cfg.max_seq_len
            )));
        }
        if let Some((pos, &id)) = batch
            .ids()
            .iter()
            .enumerate()
            .find(|(_, &id)| id as usize >= cfg.vocab_size)
        {
            return Err(Error::Input(format!(
                "token id {id} at position {pos} is outside the vocabulary ({})",
                cfg.vocab_size
            )));
        }
        Ok(())
    }

    /// Residual stream after the last block, `(batch·L) × d_model`.
    pub fn hidden_states<T: Element>(&self, tape: &mut Tape<T>, batch: &TokenBatch, mode: Mode) -> Result<Var> {
        self.check_input(batch)?;
        let tok = tape.param("tok_emb.weight", &self.tok_emb);
        let pos = tape.param("pos_emb.weight", &self.pos_emb);
        let ids: Vec<usize> = batch.ids().iter().map(|&id| id as usize).collect();
        let positions: Vec<usize> = (0..batch.batch()).flat_map(|_| 0..batch.seq_len()).collect();
        let te = tape.embedding(tok, &ids)?;
        let pe = tape.embedding(pos, &positions)?;
        let mut h = tape.add(te, pe)?;

        let shape = AttentionShape {
            batch: batch.batch(),
            seq_len: batch.seq_len(),
            heads: self.config.n_heads,
        };
        let mask = batch.attention_mask();
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(tape, i, h, shape, &mask, mode)?;
        }
        Ok(h)
    }

    /// Class logits, `batch × n_classes`.
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, batch: &TokenBatch, mode: Mode) -> Result<Var> {
        let h = self.hidden_states(tape, batch, mode)?;
        let norm = tape.param("final_norm.weight", &self.final_norm);
        let h = tape.rms_norm(h, norm, NORM_EPS)?;
        let pooled = tape.embedding(h, &batch.last_positions())?;
        let head = tape.param("head.weight", &self.head);
        let bias = tape.param("head.bias", &self.head_bias);
        let logits = tape.matmul(pooled, head)?;
        tape.add_bias(logits, bias)
    }

    /// Eval-mode logits without keeping the tape.
    pub fn logits(&self, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::<f32>::new();
        let out = self.forward(&mut tape, batch, Mode::Eval)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests;
