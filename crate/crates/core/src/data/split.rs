//! Seeded label-stratified train/val/test partition.

use rand::seq::SliceRandom;

use super::{Dataset, Label};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Original indices of each part, ascending.
    pub indices: [Vec<usize>; 3],
}

/// Each class is shuffled on its own stream, then cut: val and test get
/// `max(1, round(n_c * f))` examples, train keeps the rest. Parts keep the
/// parent's order.
pub fn stratified_split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (f_train, f_val, f_test) = fractions;
    let fs = [f_train, f_val, f_test];
    if fs.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::Config(format!("split fractions must be positive, got {fractions:?}")));
    }
    let sum: f64 = fs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must sum to 1, got {sum}")));
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    for label in Label::ALL {
        let mut idx: Vec<usize> = ds
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let n = idx.len();
        if n < 3 {
            return Err(Error::Dataset(format!(
                "class {label} has {n} examples; stratified splitting needs at least 3"
            )));
        }
        let mut rng = rng::stream(seed, &format!("split.{label}"));
        idx.shuffle(&mut rng);

        let cut = |f: f64| ((n as f64 * f).round() as usize).max(1);
        let (mut n_val, mut n_test) = (cut(f_val), cut(f_test));
        while n_val + n_test >= n {
            if n_val >= n_test {
                n_val -= 1;
            } else {
                n_test -= 1;
            }
        }
        parts[1].extend_from_slice(&idx[..n_val]);
        parts[2].extend_from_slice(&idx[n_val..n_val + n_test]);
        parts[0].extend_from_slice(&idx[n_val + n_test..]);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let name = &ds.name;
    Ok(Split {
        train: ds.subset(format!("{name}.train"), &parts[0])?,
        val: ds.subset(format!("{name}.val"), &parts[1])?,
        test: ds.subset(format!("{name}.test"), &parts[2])?,
        indices: parts,
    })
}
