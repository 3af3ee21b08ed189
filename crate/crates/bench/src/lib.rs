//! Inputs shared by the benchmarks.

use tinypeft_core::data::make_synthetic;
use tinypeft_core::model::{ModelConfig, TokenBatch};
use tinypeft_core::peft::{attach, Method, Peft};
use tinypeft_core::rng::normal_tensor;
use tinypeft_core::{ClassifierModel, Dataset, Tensor};

/// A `rows × cols` matrix of N(0, 1) values.
pub fn matrix(rows: usize, cols: usize, name: &str) -> Tensor {
    normal_tensor(0, name, &[rows, cols], 1.0)
}

/// The micro model with `method` attached using default settings.
pub fn micro_model(method: Method) -> ClassifierModel {
    let cfg = ModelConfig::preset("micro").expect("micro preset");
    let mut model = ClassifierModel::init(&cfg, 0).expect("init");
    let peft = match method {
        Method::None => Peft::None,
        Method::Lora => Peft::Lora(Default::default()),
        Method::Adapter => Peft::Adapter(Default::default()),
    };
    attach(&mut model, &peft, 0).expect("attach");
    model
}

pub fn synthetic(n: usize) -> Dataset {
    make_synthetic(n, 0).expect("synthetic set")
}

/// `batch` sequences of `len` byte tokens each.
pub fn token_batch(batch: usize, len: usize) -> TokenBatch {
    let seqs: Vec<Vec<u32>> = (0..batch)
        .map(|b| (0..len).map(|i| ((b * 31 + i * 7) % 256) as u32).collect())
        .collect();
    TokenBatch::from_sequences(&seqs).expect("token batch")
}
