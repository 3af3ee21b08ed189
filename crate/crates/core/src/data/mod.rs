//! Labelled text datasets: CSV ingestion, byte tokenization, stratified
//! splitting and a synthetic desk-scale corpus.

mod csv_io;
mod split;
mod synthetic;
mod tokenizer;

use std::fmt;

use serde::Serialize;

pub use csv_io::{load_csv, read_csv, serialize_csv, write_csv};
pub use split::{stratified_split, Split, DEFAULT_FRACTIONS};
pub use synthetic::{make_synthetic, HATE_POOL, NEUTRAL_POOL};
pub use tokenizer::{tokenize, TokenizedExample, BOS, EOS, PAD, VOCAB_SIZE};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NotHate = 0,
    Hate = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NotHate, Label::Hate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::NotHate),
            1 => Some(Label::Hate),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NotHate => "nothate",
            Label::Hate => "hate",
        }
    }

    /// Case-insensitive `hate` / `nothate`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("hate") {
            Some(Label::Hate)
        } else if s.eq_ignore_ascii_case("nothate") {
            Some(Label::NotHate)
        } else {
            None
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    pub label: Label,
}

impl Example {
    pub fn new(text: impl Into<String>, label: Label) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Dataset("example text is empty".into()));
        }
        Ok(Example { text, label })
    }
}

/// An ordered, non-empty list of examples. Order is load order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    examples: Vec<Example>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassStats {
    pub hate: usize,
    pub nothate: usize,
    pub hate_fraction: f64,
    pub nothate_fraction: f64,
}

impl Dataset {
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> Result<Self> {
        let name = name.into();
        if examples.is_empty() {
            return Err(Error::Dataset(format!("dataset {name:?} is empty")));
        }
        Ok(Dataset { name, examples })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn stats(&self) -> ClassStats {
        let hate = self.examples.iter().filter(|e| e.label == Label::Hate).count();
        let nothate = self.len() - hate;
        let n = self.len() as f64;
        ClassStats {
            hate,
            nothate,
            hate_fraction: hate as f64 / n,
            nothate_fraction: nothate as f64 / n,
        }
    }

    /// Subset by indices, keeping the given order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Self> {
        Dataset::new(name, indices.iter().map(|&i| self.examples[i].clone()).collect())
    }
}

pub fn dataset_stats(ds: &Dataset) -> ClassStats {
    ds.stats()
}
