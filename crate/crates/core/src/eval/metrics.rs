use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Label;

/// Binary confusion counts with `hate` as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(labels: &[Label], predictions: &[Label]) -> Self {
        assert_eq!(labels.len(), predictions.len(), "one prediction per label");
        let mut c = Confusion::default();
        for (&y, &p) in labels.iter().zip(predictions) {
            c.add(y, p);
        }
        c
    }

    pub fn add(&mut self, label: Label, prediction: Label) {
        match (label, prediction) {
            (Label::Hate, Label::Hate) => self.tp += 1,
            (Label::NotHate, Label::Hate) => self.fp += 1,
            (Label::NotHate, Label::NotHate) => self.tn += 1,
            (Label::Hate, Label::NotHate) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same counts with `nothate` as the positive class.
    pub fn swapped(&self) -> Self {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }

    pub fn metrics(&self) -> Metrics {
        let (precision, recall, f1) = prf(self);
        let (_, _, f1_neg) = prf(&self.swapped());
        Metrics {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1,
            macro_f1: (f1 + f1_neg) / 2.0,
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }
}

/// 0 when the denominator is 0.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn prf(c: &Confusion) -> (f64, f64, f64) {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Accuracy, binary scores for `hate`, and macro-F1 over both classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Metrics {
    pub fn from_pairs(labels: &[Label], predictions: &[Label]) -> Self {
        Confusion::from_pairs(labels, predictions).metrics()
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy   {:.4}", self.accuracy)?;
        writeln!(f, "precision  {:.4}", self.precision)?;
        writeln!(f, "recall     {:.4}", self.recall)?;
        writeln!(f, "f1         {:.4}", self.f1)?;
        writeln!(f, "macro_f1   {:.4}", self.macro_f1)?;
        write!(f, "tp {}  fp {}  tn {}  fn {}", self.tp, self.fp, self.tn, self.fn_)
    }
}
