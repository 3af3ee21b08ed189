use rand::Rng;

use super::*;
use crate::data::{make_synthetic, Example};
use crate::model::{ClassifierModel, ModelConfig};
use crate::peft::{AdapterConfig, LoraConfig, Method, Peft};
use crate::rng;
use crate::training::TrainConfig;

const H: Label = Label::Hate;
const N: Label = Label::NotHate;

fn pairs(tp: usize, fp: usize, fn_: usize, tn: usize) -> (Vec<Label>, Vec<Label>) {
    let mut y = Vec::new();
    let mut p = Vec::new();
    for (label, pred, n) in [(H, H, tp), (N, H, fp), (H, N, fn_), (N, N, tn)] {
        y.extend(std::iter::repeat_n(label, n));
        p.extend(std::iter::repeat_n(pred, n));
    }
    (y, p)
}

/// Counts by brute force over the pairs and applies the textbook formulas.
fn reference(y: &[Label], p: &[Label]) -> [f64; 5] {
    let count = |a: Label, b: Label| y.iter().zip(p).filter(|(&l, &q)| l == a && q == b).count() as f64;
    let score = |pos: Label, neg: Label| {
        let tp = count(pos, pos);
        let fp = count(neg, pos);
        let fn_ = count(pos, neg);
        let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        (precision, recall, f1)
    };
    let correct = y.iter().zip(p).filter(|(a, b)| a == b).count() as f64;
    let accuracy = if y.is_empty() { 0.0 } else { correct / y.len() as f64 };
    let (precision, recall, f1) = score(H, N);
    let (_, _, f1_neg) = score(N, H);
    [accuracy, precision, recall, f1, (f1 + f1_neg) / 2.0]
}

fn as_array(m: &Metrics) -> [f64; 5] {
    [m.accuracy, m.precision, m.recall, m.f1, m.macro_f1]
}

#[test]
fn hand_computed_confusion() {
    let (y, p) = pairs(3, 1, 2, 4);
    let m = Metrics::from_pairs(&y, &p);
    assert_eq!((m.tp, m.fp, m.fn_, m.tn), (3, 1, 2, 4));
    assert_eq!(m.precision, 0.75);
    assert_eq!(m.recall, 0.6);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(m.accuracy, 0.7);
}

#[test]
fn degenerate_predictors() {
    let (y, p) = pairs(5, 0, 0, 5);
    let m = Metrics::from_pairs(&y, &p);
    assert_eq!((m.accuracy, m.f1, m.macro_f1), (1.0, 1.0, 1.0));

    let y: Vec<Label> = [H, N].repeat(10);
    let m = Metrics::from_pairs(&y, &[N; 20]);
    assert_eq!((m.accuracy, m.f1, m.precision, m.recall), (0.5, 0.0, 0.0, 0.0));
    let m = Metrics::from_pairs(&y, &[H; 20]);
    assert_eq!((m.accuracy, m.recall), (0.5, 1.0));
    let m = Metrics::from_pairs(&[N; 4], &[N; 4]);
    assert_eq!((m.accuracy, m.f1, m.macro_f1), (1.0, 0.0, 0.5));
}

#[test]
fn matches_brute_force_on_random_pairs() {
    let mut r = rng::stream(7, "test.metrics");
    for trial in 0..200 {
        let n = r.random_range(1..40);
        let bias = r.random_range(0.0..1.0);
        let y: Vec<Label> = (0..n).map(|_| if r.random_bool(bias) { H } else { N }).collect();
        let p: Vec<Label> = (0..n).map(|_| if r.random_bool(0.5) { H } else { N }).collect();
        assert_eq!(as_array(&Metrics::from_pairs(&y, &p)), reference(&y, &p), "trial {trial}");
    }
}

#[test]
fn f1_equals_macro_under_symmetry() {
    // swapping both labels and predictions leaves this set unchanged
    let (mut y, mut p) = pairs(4, 2, 2, 4);
    let m = Metrics::from_pairs(&y, &p);
    assert_eq!(m.f1, m.macro_f1);
    y.iter_mut().chain(p.iter_mut()).for_each(|l| *l = if *l == H { N } else { H });
    assert_eq!(Metrics::from_pairs(&y, &p), m);
}

#[test]
fn json_keys() {
    let (y, p) = pairs(1, 2, 3, 4);
    let v = serde_json::to_value(Metrics::from_pairs(&y, &p)).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["accuracy", "f1", "fn", "fp", "macro_f1", "precision", "recall", "tn", "tp"]);
}

#[test]
fn evaluate_counts_every_example() {
    let cfg = ModelConfig::preset("micro").unwrap();
    let model = ClassifierModel::init(&cfg, 0).unwrap();
    let ds = make_synthetic(80, 3).unwrap();
    let m = evaluate(&model, &ds, 128).unwrap();
    assert_eq!(m.tp + m.fp + m.tn + m.fn_, 80);
    // one batch at a time must agree with the chunked path
    let preds = predict(&model, &ds, 128).unwrap();
    for (i, ex) in ds.examples().iter().enumerate().step_by(13) {
        let one = Dataset::new("one", vec![Example::new(ex.text.clone(), ex.label).unwrap()]).unwrap();
        assert_eq!(predict(&model, &one, 128).unwrap()[0], preds[i]);
    }
}

#[test]
fn argmax_ties_predict_nothate() {
    let mut model = ClassifierModel::init(&ModelConfig::preset("micro").unwrap(), 0).unwrap();
    model.head.data_mut().iter_mut().for_each(|w| *w = 0.0);
    let ds = make_synthetic(16, 0).unwrap();
    assert!(predict(&model, &ds, 128).unwrap().iter().all(|&l| l == N));
}

fn spec(peft: Peft, seed: u64) -> RunSpec {
    let mut train = TrainConfig::micro(peft.method());
    train.seed = seed;
    train.epochs = 1;
    RunSpec {
        config_hash: config_hash(format!("{peft:?}").as_bytes()),
        peft,
        train,
    }
}

#[test]
fn compare_shape_and_errors() {
    let ds = make_synthetic(64, 1).unwrap();
    let factory = || ClassifierModel::init(&ModelConfig::preset("micro").unwrap(), 1);
    assert!(matches!(compare_runs(factory, &ds, &[]), Err(crate::Error::Config(_))));
    let mixed = [spec(Peft::None, 1), spec(Peft::Lora(LoraConfig::default()), 2)];
    assert!(matches!(compare_runs(factory, &ds, &mixed), Err(crate::Error::Config(_))));

    let runs = [
        spec(Peft::None, 1),
        spec(Peft::Adapter(AdapterConfig::default()), 1),
        spec(Peft::Lora(LoraConfig::default()), 1),
    ];
    let c = compare_runs(factory, &ds, &runs).unwrap();
    assert_eq!(c.rows.len(), 3);
    for (row, run) in c.rows.iter().zip(&runs) {
        assert_eq!(row.method, run.peft.method());
        assert_eq!(row.config_hash, run.config_hash);
        assert_eq!(row.metrics.tp + row.metrics.fp + row.metrics.tn + row.metrics.fn_, c.test_size);
    }
    let none = c.row(Method::None).unwrap();
    assert_eq!((none.epochs, none.trainable, none.train_accuracy), (0, 0, None));
    assert_eq!(c.row(Method::Lora).unwrap().trainable, 2048 + 130);

    let again = compare_runs(factory, &ds, &runs).unwrap();
    assert_eq!(c.render(false), again.render(false));
    let table = c.render(false);
    assert_eq!(table.lines().count(), 5);
    let header = table.lines().nth(1).unwrap();
    let cols: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(cols, ["method", "epochs", "trainable", "total", "fraction", "train_acc", "accuracy", "f1", "macro_f1", "config"]);
}

#[test]
fn config_hash_is_sha256_hex() {
    assert_eq!(
        config_hash(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}

