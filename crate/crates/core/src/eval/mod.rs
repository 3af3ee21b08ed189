//! Classification metrics, evaluation and the method comparison table.

mod compare;
mod metrics;

pub use compare::{compare_runs, config_hash, Comparison, ComparisonRow, RunSpec};
pub use metrics::{Confusion, Metrics};

use crate::data::{Dataset, Label};
use crate::error::Result;
use crate::model::ClassifierModel;
use crate::training::{argmax, batch_of};

const EVAL_BATCH: usize = 32;

/// Eval-mode argmax predictions in dataset order. Ties predict `nothate`.
pub fn predict(model: &ClassifierModel, ds: &Dataset, max_seq_len: usize) -> Result<Vec<Label>> {
    let classes = model.config.n_classes;
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = batch_of(ds, chunk, max_seq_len)?;
        let logits = model.logits(&batch.tokens)?;
        for row in logits.data().chunks(classes) {
            // classes beyond the two labels never win a binary decision
            let label = Label::from_index(argmax(&row[..2])).expect("binary argmax");
            out.push(label);
        }
    }
    Ok(out)
}

pub fn evaluate(model: &ClassifierModel, ds: &Dataset, max_seq_len: usize) -> Result<Metrics> {
    let predictions = predict(model, ds, max_seq_len)?;
    let labels: Vec<Label> = ds.examples().iter().map(|e| e.label).collect();
    Ok(Metrics::from_pairs(&labels, &predictions))
}

#[cfg(test)]
mod tests;
