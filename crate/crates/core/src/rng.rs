//! Deterministic random streams.
//!
//! All randomness comes from ChaCha8 seeded with the run seed. Independent
//! consumers (each parameter tensor, each dropout site, each shuffle) select
//! their own ChaCha stream by hashing a name with 64-bit FNV-1a, so adding or
//! reordering consumers never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// The generator for consumer `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(name.as_bytes()));
    rng
}

/// A tensor of `Normal(0, std)` draws from the stream named `name`.
pub fn normal_tensor(seed: u64, name: &str, shape: &[usize], std: f64) -> Tensor {
    let mut rng = stream(seed, name);
    let dist = Normal::new(0.0f64, std).expect("std must be finite and positive");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(&mut rng) as f32).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches draw count")
}
