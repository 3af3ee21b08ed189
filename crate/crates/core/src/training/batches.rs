use rand::seq::SliceRandom;

use crate::data::{tokenize, Dataset};
use crate::error::Result;
use crate::model::TokenBatch;
use crate::rng;

/// A padded mini-batch and the dataset rows it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub tokens: TokenBatch,
    pub targets: Vec<usize>,
}

/// The dataset order for one epoch: a permutation drawn from the stream
/// `batches.{epoch}` under `seed`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &format!("batches.{epoch}")));
    order
}

/// Shuffled mini-batches for one epoch. The last batch may be short.
pub fn make_batches(ds: &Dataset, batch_size: usize, max_seq_len: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    let order = epoch_order(ds.len(), seed, epoch);
    order
        .chunks(batch_size.max(1))
        .map(|idx| batch_of(ds, idx, max_seq_len))
        .collect()
}

/// Tokenizes and pads the given rows, in order.
pub fn batch_of(ds: &Dataset, indices: &[usize], max_seq_len: usize) -> Result<Batch> {
    let examples = ds.examples();
    let seqs: Vec<Vec<u32>> = indices
        .iter()
        .map(|&i| tokenize(&examples[i].text, max_seq_len).ids)
        .collect();
    Ok(Batch {
        indices: indices.to_vec(),
        tokens: TokenBatch::from_sequences(&seqs)?,
        targets: indices.iter().map(|&i| examples[i].label.index()).collect(),
    })
}
