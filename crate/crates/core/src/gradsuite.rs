//! Finite-difference checks of every differentiable primitive and of a full
//! micro transformer block.
//!
//! Each probe turns an op into a scalar by projecting its output onto a fixed
//! random tensor, then compares the tape gradient for one operand against
//! central differences. Inputs are drawn from `U[-2, 2]`.

use rand::Rng;
use rand_distr::Uniform;

use crate::error::Result;
use crate::model::{causal_mask, ClassifierModel, ModelConfig, Mode, ProjName, TransformerBlock};
use crate::peft::{AdapterConfig, AdapterSlot, BottleneckAdapter, LoraAdapter, LoraConfig};
use crate::rng;
use crate::tensor::{AttentionShape, Element, GradCheck, OpKind, ScalarFn, Tape, Tensor, Var};

pub const EPS: f64 = 1e-3;
pub const SAMPLES: usize = 24;
pub const THRESHOLD: f64 = 1e-2;

const ATTN: AttentionShape = AttentionShape {
    batch: 2,
    seq_len: 3,
    heads: 2,
};
const GATHER_IDS: [usize; 5] = [2, 0, 2, 4, 1];
const NLL_TARGETS: [usize; 4] = [0, 2, 1, 2];
const DROPOUT_P: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    MatMul,
    MatMulT,
    Add,
    AddBias,
    Mul,
    Scale,
    Sum,
    Softmax,
    RmsNorm,
    Gelu,
    Embedding,
    Dropout,
    Attention,
    NllLoss,
}

impl Kind {
    const ALL: [Kind; 14] = [
        Kind::MatMul,
        Kind::MatMulT,
        Kind::Add,
        Kind::AddBias,
        Kind::Mul,
        Kind::Scale,
        Kind::Sum,
        Kind::Softmax,
        Kind::RmsNorm,
        Kind::Gelu,
        Kind::Embedding,
        Kind::Dropout,
        Kind::Attention,
        Kind::NllLoss,
    ];

    fn op(self) -> OpKind {
        match self {
            Kind::MatMul => OpKind::MatMul,
            Kind::MatMulT => OpKind::MatMulT,
            Kind::Add => OpKind::Add,
            Kind::AddBias => OpKind::AddBias,
            Kind::Mul => OpKind::Mul,
            Kind::Scale => OpKind::Scale,
            Kind::Sum => OpKind::Sum,
            Kind::Softmax => OpKind::Softmax,
            Kind::RmsNorm => OpKind::RmsNorm,
            Kind::Gelu => OpKind::Gelu,
            Kind::Embedding => OpKind::Gather,
            Kind::Dropout => OpKind::Dropout,
            Kind::Attention => OpKind::Attention,
            Kind::NllLoss => OpKind::NllLoss,
        }
    }

    /// Operand shapes.
    fn shapes(self) -> Vec<Vec<usize>> {
        let rows = ATTN.batch * ATTN.seq_len;
        match self {
            Kind::MatMul => vec![vec![3, 4], vec![4, 5]],
            Kind::MatMulT => vec![vec![3, 4], vec![5, 4]],
            Kind::Add | Kind::Mul => vec![vec![3, 4], vec![3, 4]],
            Kind::AddBias => vec![vec![3, 4], vec![4]],
            Kind::Scale | Kind::Sum | Kind::Gelu | Kind::Dropout => vec![vec![3, 4]],
            Kind::Softmax => vec![vec![3, 5]],
            Kind::RmsNorm => vec![vec![3, 6], vec![6]],
            Kind::Embedding => vec![vec![5, 3]],
            Kind::Attention => vec![vec![rows, 4]; 3],
            Kind::NllLoss => vec![vec![4, 3]],
        }
    }

    fn apply<T: Element>(self, tape: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        match self {
            Kind::MatMul => tape.matmul(v[0], v[1]),
            Kind::MatMulT => tape.matmul_t(v[0], v[1]),
            Kind::Add => tape.add(v[0], v[1]),
            Kind::AddBias => tape.add_bias(v[0], v[1]),
            Kind::Mul => tape.mul(v[0], v[1]),
            Kind::Scale => tape.scale(v[0], T::from_f64(-1.75)),
            Kind::Sum => tape.sum(v[0]),
            Kind::Softmax => tape.softmax(v[0], 1),
            Kind::RmsNorm => tape.rms_norm(v[0], v[1], 1e-5),
            Kind::Gelu => tape.gelu(v[0]),
            Kind::Embedding => tape.embedding(v[0], &GATHER_IDS),
            Kind::Dropout => {
                // the same mask on every evaluation
                let mut r = rng::stream(0, "gradcheck.dropout");
                tape.dropout(v[0], DROPOUT_P, &mut r)
            }
            Kind::Attention => {
                let l = ATTN.seq_len;
                let mut mask = causal_mask(l).repeat(ATTN.batch);
                // a padded key in the second sequence
                for i in 0..l {
                    mask[l * l + i * l + l - 1] = false;
                }
                tape.attention(v[0], v[1], v[2], ATTN, mask)
            }
            Kind::NllLoss => tape.nll_loss(v[0], &NLL_TARGETS),
        }
    }
}

fn uniform(seed: u64, name: &str, shape: &[usize]) -> Tensor {
    let mut r = rng::stream(seed, name);
    let dist = Uniform::new_inclusive(-2.0f32, 2.0).expect("valid range");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.sample(dist)).collect()).expect("shape matches")
}

/// `sum(out ⊙ R)` for a fixed random `R`; scalar outputs pass through.
fn project<T: Element>(tape: &mut Tape<T>, out: Var, r: &Tensor) -> Result<Var> {
    if tape.value(out).numel() == 1 {
        return Ok(out);
    }
    let r = tape.constant(r.cast().reshape(tape.shape(out).to_vec())?);
    let y = tape.mul(out, r)?;
    tape.sum(y)
}

struct OpProbe {
    kind: Kind,
    operand: usize,
    inputs: Vec<Tensor>,
    projection: Tensor,
}

impl ScalarFn for OpProbe {
    fn eval<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let vars: Vec<Var> = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, t)| if i == self.operand { x } else { tape.constant(t.cast()) })
            .collect();
        let out = self.kind.apply(tape, &vars)?;
        project(tape, out, &self.projection)
    }
}

/// nll(head(last_token(block(x)))) for one micro block carrying a LoRA
/// branch on every projection and both adapters, all with non-zero weights.
struct BlockProbe {
    block: TransformerBlock,
    head: Tensor,
    shape: AttentionShape,
    targets: Vec<usize>,
}

impl BlockProbe {
    fn new(seed: u64) -> Result<Self> {
        let cfg = ModelConfig::preset("micro")?;
        let model = ClassifierModel::init(&cfg, seed)?;
        let mut block = model.blocks[0].clone();
        let d = cfg.d_model;
        let lora = LoraConfig::default();
        for p in ProjName::ALL {
            let mut a = LoraAdapter::new(&lora, 0, p, d, d, seed);
            a.b = rng::normal_tensor(seed, &format!("gradcheck.lora.{p}"), &[d, lora.r], 0.02);
            block.attn.get_mut(p).lora = Some(a);
        }
        let m = AdapterConfig::default().bottleneck(d);
        for (i, slot) in AdapterSlot::ALL.into_iter().enumerate() {
            let mut a = BottleneckAdapter::new(0, slot, d, m, seed);
            a.up = rng::normal_tensor(seed, &format!("gradcheck.adapter.{slot}"), &[m, d], 0.02);
            block.adapters[i] = Some(a);
        }
        Ok(BlockProbe {
            block,
            head: model.head.clone(),
            shape: AttentionShape {
                batch: 2,
                seq_len: 4,
                heads: cfg.n_heads,
            },
            targets: vec![1, 0],
        })
    }

    fn input_shape(&self) -> [usize; 2] {
        [self.shape.batch * self.shape.seq_len, self.head.rows()]
    }
}

impl ScalarFn for BlockProbe {
    fn eval<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let l = self.shape.seq_len;
        let mask = causal_mask(l).repeat(self.shape.batch);
        let h = self.block.forward(tape, 0, x, self.shape, &mask, Mode::Eval)?;
        let last: Vec<usize> = (0..self.shape.batch).map(|b| b * l + l - 1).collect();
        let pooled = tape.embedding(h, &last)?;
        let head = tape.constant(self.head.cast());
        let logits = tape.matmul(pooled, head)?;
        tape.nll_loss(logits, &self.targets)
    }
}

/// Worst relative error for one primitive over all of its operands.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Runs every probe. `fault` corrupts the backward rule of one op kind.
pub fn run_suite(seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    let check = GradCheck {
        eps: EPS,
        samples: SAMPLES,
        seed,
        fault,
    };
    let mut out = Vec::new();
    for kind in Kind::ALL {
        let name = kind.op().name();
        let inputs: Vec<Tensor> = kind
            .shapes()
            .iter()
            .enumerate()
            .map(|(i, s)| uniform(seed, &format!("gradcheck.{name}.{i}"), s))
            .collect();
        let mut tape = Tape::<f32>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out_var = kind.apply(&mut tape, &vars)?;
        let projection = uniform(seed, &format!("gradcheck.{name}.r"), &[tape.value(out_var).numel()]);

        let mut worst = 0.0f64;
        for operand in 0..inputs.len() {
            let probe = OpProbe {
                kind,
                operand,
                inputs: inputs.clone(),
                projection: projection.clone(),
            };
            worst = worst.max(check.run(&probe, &inputs[operand])?);
        }
        out.push(result(name, worst));
    }

    let block = BlockProbe::new(seed)?;
    let x = uniform(seed, "gradcheck.block.x", &block.input_shape());
    out.push(result("micro_block", check.run(&block, &x)?));
    Ok(out)
}

fn result(name: &str, err: f64) -> CheckResult {
    CheckResult {
        name: name.to_owned(),
        max_rel_error: err,
        passed: err <= THRESHOLD,
    }
}
