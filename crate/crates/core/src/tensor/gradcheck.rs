//! Central-difference verification of the tape's backward rules.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Element, OpKind, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// A scalar-valued function that can be evaluated at any precision.
///
/// Implementations record their computation on the provided tape starting
/// from the input `x` and return the scalar output.
pub trait ScalarFn {
    fn eval<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var>;
}

/// Settings for a gradient check. The autodiff gradient is taken in `f32`,
/// the finite differences in `f64`.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    pub samples: usize,
    pub seed: u64,
    pub fault: Option<OpKind>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-3,
            samples: 24,
            seed: 0,
            fault: None,
        }
    }
}

/// `|a - b| / max(1e-8, |a| + |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

impl GradCheck {
    /// Returns the largest relative error between autodiff and central
    /// differences over the sampled coordinates of `point`.
    pub fn run<F: ScalarFn>(&self, f: &F, point: &Tensor<f32>) -> Result<f64> {
        if !(self.eps > 0.0 && self.eps <= 1e-1) {
            return Err(Error::Contract(format!("grad_check eps {} not in (0, 0.1]", self.eps)));
        }
        if self.samples == 0 {
            return Err(Error::Contract("grad_check needs at least one sample".into()));
        }

        let mut tape = Tape::<f32>::new();
        if let Some(kind) = self.fault {
            tape.inject_fault(kind);
        }
        let x = tape.leaf(point.clone(), true);
        let y = f.eval(&mut tape, x)?;
        if tape.value(y).numel() != 1 {
            return Err(Error::Contract(format!(
                "grad_check needs a scalar function, got shape {:?}",
                tape.shape(y)
            )));
        }
        let grads = tape.backward(y)?;
        let analytic = grads.wrt(x).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; point.numel()]);

        let n = point.numel();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let coords = sample(&mut rng, n, self.samples.min(n));

        let base = point.cast::<f64>();
        let mut worst = 0.0f64;
        for i in coords {
            let plus = eval_f64(f, &base, i, self.eps)?;
            let minus = eval_f64(f, &base, i, -self.eps)?;
            let numeric = (plus - minus) / (2.0 * self.eps);
            worst = worst.max(relative_error(analytic[i] as f64, numeric));
        }
        Ok(worst)
    }
}

fn eval_f64<F: ScalarFn>(f: &F, base: &Tensor<f64>, coord: usize, delta: f64) -> Result<f64> {
    let mut shifted = base.clone();
    shifted.data_mut()[coord] += delta;
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(shifted);
    let y = f.eval(&mut tape, x)?;
    Ok(tape.value(y).item())
}

/// [`GradCheck::run`] with an explicit step and sample count.
pub fn grad_check<F: ScalarFn>(f: &F, point: &Tensor<f32>, eps: f64, samples: usize) -> Result<f64> {
    GradCheck {
        eps,
        samples,
        ..GradCheck::default()
    }
    .run(f, point)
}
