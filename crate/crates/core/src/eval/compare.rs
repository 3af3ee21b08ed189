use std::fmt::Write;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{evaluate, Metrics};
use crate::data::{stratified_split, Dataset, DEFAULT_FRACTIONS};
use crate::error::{Error, Result};
use crate::model::ClassifierModel;
use crate::peft::{attach, count_trainable, freeze_base, Method, Peft};
use crate::training::{train, TrainConfig};

/// One method to run, with the hash of the configuration it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub peft: Peft,
    pub train: TrainConfig,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub epochs: usize,
    /// Parameters updated by training; 0 for the frozen base.
    pub trainable: usize,
    pub total: usize,
    pub trainable_fraction: f64,
    pub train_accuracy: Option<f64>,
    /// Held-out (test split) metrics.
    pub metrics: Metrics,
    pub config_hash: String,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub dataset: String,
    pub train_size: usize,
    pub test_size: usize,
    pub rows: Vec<ComparisonRow>,
}

/// Hex SHA-256 of `bytes`.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Trains each method from the same base model on the same stratified split
/// and scores it on the test part. The `none` method is the untrained frozen
/// base.
pub fn compare_runs(
    factory: impl Fn() -> Result<ClassifierModel>,
    ds: &Dataset,
    runs: &[RunSpec],
) -> Result<Comparison> {
    let Some(first) = runs.first() else {
        return Err(Error::Config("compare needs at least one method".into()));
    };
    let seed = first.train.seed;
    for run in runs {
        if run.train.seed != seed {
            return Err(Error::Config("all compared runs must share one seed".into()));
        }
        if run.train.method != run.peft.method() {
            return Err(Error::Config(format!(
                "run for {} carries a {} train config",
                run.peft.method(),
                run.train.method
            )));
        }
    }
    let split = stratified_split(ds, DEFAULT_FRACTIONS, seed)?;

    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let start = Instant::now();
        let mut model = factory()?;
        let method = run.peft.method();
        let (epochs, trainable, train_accuracy) = match method {
            Method::None => {
                freeze_base(&mut model);
                (0, 0, None)
            }
            _ => {
                attach(&mut model, &run.peft, seed)?;
                let report = train(&mut model, &split.train, &run.train)?;
                (run.train.epochs, report.params.trainable, Some(report.final_accuracy()))
            }
        };
        let total = count_trainable(&model).total;
        let metrics = evaluate(&model, &split.test, run.train.max_seq_len)?;
        rows.push(ComparisonRow {
            method,
            epochs,
            trainable,
            total,
            trainable_fraction: trainable as f64 / total as f64,
            train_accuracy,
            metrics,
            config_hash: run.config_hash.clone(),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(Comparison {
        dataset: ds.name.clone(),
        train_size: split.train.len(),
        test_size: split.test.len(),
        rows,
    })
}

impl Comparison {
    /// Fixed-width table. Wall-clock time is only included on request so the
    /// default rendering is reproducible byte for byte.
    pub fn render(&self, timings: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "dataset {} (train {}, test {})",
            self.dataset, self.train_size, self.test_size
        );
        let _ = write!(
            out,
            "{:<8} {:>6} {:>10} {:>10} {:>9} {:>9} {:>8} {:>8} {:>8}  {:<12}",
            "method", "epochs", "trainable", "total", "fraction", "train_acc", "accuracy", "f1", "macro_f1", "config"
        );
        if timings {
            let _ = write!(out, " {:>9}", "seconds");
        }
        out.push('\n');
        for r in &self.rows {
            let train_acc = r.train_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
            let _ = write!(
                out,
                "{:<8} {:>6} {:>10} {:>10} {:>8.4}% {:>9} {:>8.4} {:>8.4} {:>8.4}  {:<12}",
                r.method.as_str(),
                r.epochs,
                r.trainable,
                r.total,
                r.trainable_fraction * 100.0,
                train_acc,
                r.metrics.accuracy,
                r.metrics.f1,
                r.metrics.macro_f1,
                &r.config_hash[..r.config_hash.len().min(12)],
            );
            if timings {
                let _ = write!(out, " {:>9.2}", r.wall_seconds);
            }
            out.push('\n');
        }
        out
    }

    pub fn row(&self, method: Method) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}
