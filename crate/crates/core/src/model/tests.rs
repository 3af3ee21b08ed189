use super::*;
use crate::data::{tokenize, BOS};

fn micro() -> ModelConfig {
    ModelConfig::preset("micro").unwrap()
}

fn small() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        vocab_size: 259,
        max_seq_len: 24,
        n_classes: 2,
    }
}

fn ids(text: &str) -> Vec<u32> {
    tokenize(text, 64).ids
}

fn close(a: &[f32], b: &[f32], tol: f32) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn causal_mask_pattern() {
    assert_eq!(causal_mask(1), vec![true]);
    let m = causal_mask(3);
    assert_eq!(m.iter().filter(|&&x| x).count(), 6);
    assert_eq!(m, vec![true, false, false, true, true, false, true, true, true]);
    for l in 1..10 {
        let m = causal_mask(l);
        for i in 0..l {
            assert_eq!(m[i * l..(i + 1) * l].iter().filter(|&&x| x).count(), i + 1);
        }
    }
}

#[test]
fn init_is_deterministic_and_seed_dependent() {
    let a = ClassifierModel::init(&small(), 1).unwrap();
    let b = ClassifierModel::init(&small(), 1).unwrap();
    let c = ClassifierModel::init(&small(), 2).unwrap();
    assert_eq!(a, b);
    for ((_, x), (_, y)) in a.params().iter().zip(b.params()) {
        let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb);
    }
    assert_ne!(a.param("tok_emb.weight"), c.param("tok_emb.weight"));
    assert_ne!(a.param("blocks.0.attn.q_proj.weight"), c.param("blocks.0.attn.q_proj.weight"));
}

#[test]
fn init_values() {
    let m = ClassifierModel::init(&micro(), 0).unwrap();
    assert!(m.param("blocks.1.attn.k_proj.bias").unwrap().data().iter().all(|&x| x == 0.0));
    assert!(m.param("blocks.1.norm2.weight").unwrap().data().iter().all(|&x| x == 1.0));
    assert!(m.param("final_norm.weight").unwrap().data().iter().all(|&x| x == 1.0));
    let w = m.param("tok_emb.weight").unwrap().data();
    let n = w.len() as f64;
    let mean = w.iter().map(|&x| x as f64).sum::<f64>() / n;
    let std = (w.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-3, "mean {mean}");
    assert!((std - 0.02).abs() < 1e-3, "std {std}");
}

#[test]
fn micro_param_count_matches_closed_form() {
    let cfg = micro();
    let (v, l, d, ff, c, ctx) = (259, 4, 64, 256, 2, 128);
    let block = d + 4 * (d * d + d) + d + (d * ff + ff) + (ff * d + d);
    let expected = v * d + ctx * d + l * block + d + d * c + c;
    assert_eq!(expected, 224_386);
    let m = ClassifierModel::init(&cfg, 0).unwrap();
    let total: usize = m.params().iter().map(|(_, t)| t.numel()).sum();
    assert_eq!(total, expected);
    assert_eq!(m.blocks.len(), cfg.n_layers);
}

#[test]
fn canonical_names_and_order() {
    let m = ClassifierModel::init(&small(), 0).unwrap();
    let names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names[0], "tok_emb.weight");
    assert_eq!(names[1], "pos_emb.weight");
    assert_eq!(names[2], "blocks.0.norm1.weight");
    assert_eq!(names[3], "blocks.0.attn.q_proj.weight");
    assert_eq!(&names[names.len() - 3..], ["final_norm.weight", "head.weight", "head.bias"]);
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
}

#[test]
fn single_token_shape() {
    let m = ClassifierModel::init(&micro(), 0).unwrap();
    let batch = TokenBatch::from_sequences(&[vec![BOS]]).unwrap();
    assert_eq!(m.logits(&batch).unwrap().shape(), &[1, 2]);
}

#[test]
fn pad_invariance() {
    let m = ClassifierModel::init(&micro(), 3).unwrap();
    for text in ["hello", "a somewhat longer sentence", "x"] {
        let seq = ids(text);
        let plain = m.logits(&TokenBatch::from_sequences(std::slice::from_ref(&seq)).unwrap()).unwrap();
        for extra in [1, 5, 17] {
            let mut padded = seq.clone();
            padded.extend(std::iter::repeat_n(PAD, extra));
            let mut mask = vec![true; seq.len()];
            mask.extend(std::iter::repeat_n(false, extra));
            let batch = TokenBatch::new(padded.clone(), 1, padded.len(), mask).unwrap();
            let out = m.logits(&batch).unwrap();
            assert!(close(plain.data(), out.data(), 1e-5), "{text} +{extra}");
        }
    }
}

#[test]
fn batched_equals_individual() {
    let m = ClassifierModel::init(&micro(), 4).unwrap();
    let seqs = [ids("short"), ids("a much longer example here"), ids("mid length")];
    let all = m.logits(&TokenBatch::from_sequences(&seqs).unwrap()).unwrap();
    for (i, s) in seqs.iter().enumerate() {
        let one = m.logits(&TokenBatch::from_sequences(&[s]).unwrap()).unwrap();
        assert!(close(&all.data()[i * 2..i * 2 + 2], one.data(), 1e-5));
    }
}

#[test]
fn batch_permutation() {
    let m = ClassifierModel::init(&micro(), 5).unwrap();
    let seqs = [ids("one"), ids("two two"), ids("three three three"), ids("4")];
    let perm = [2, 0, 3, 1];
    let base = m.logits(&TokenBatch::from_sequences(&seqs).unwrap()).unwrap();
    let permuted: Vec<_> = perm.iter().map(|&i| seqs[i].clone()).collect();
    let out = m.logits(&TokenBatch::from_sequences(&permuted).unwrap()).unwrap();
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(&out.data()[row * 2..row * 2 + 2], &base.data()[src * 2..src * 2 + 2]);
    }
}

#[test]
fn causality() {
    let m = ClassifierModel::init(&small(), 6).unwrap();
    let seq = ids("causal check!");
    let hidden = |s: &[u32]| {
        let mut tape = Tape::<f32>::new();
        let batch = TokenBatch::from_sequences(&[s]).unwrap();
        let h = m.hidden_states(&mut tape, &batch, Mode::Eval).unwrap();
        tape.value(h).data().to_vec()
    };
    let base = hidden(&seq);
    let d = m.config.d_model;
    for t in 1..seq.len() {
        let mut changed = seq.clone();
        changed[t] = (changed[t] + 1) % 256;
        let h = hidden(&changed);
        assert_eq!(&h[..t * d], &base[..t * d], "positions before {t} moved");
        assert_ne!(&h[t * d..(t + 1) * d], &base[t * d..(t + 1) * d]);
    }
}

#[test]
fn deterministic_logits() {
    let m = ClassifierModel::init(&micro(), 9).unwrap();
    let batch = TokenBatch::from_sequences(&[ids("same"), ids("input")]).unwrap();
    let a: Vec<u32> = m.logits(&batch).unwrap().data().iter().map(|x| x.to_bits()).collect();
    let b: Vec<u32> = m.logits(&batch).unwrap().data().iter().map(|x| x.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn every_trainable_param_gets_a_grad() {
    let mut m = ClassifierModel::init(&small(), 7).unwrap();
    let batch = TokenBatch::from_sequences(&[ids("grad flow"), ids("to all")]).unwrap();
    let mut tape = Tape::<f32>::new();
    let logits = m.forward(&mut tape, &batch, Mode::Eval).unwrap();
    let loss = tape.nll_loss(logits, &[0, 1]).unwrap();
    let grads = tape.backward(loss).unwrap();
    m.accumulate_grads(&grads).unwrap();
    m.for_each_param(|name, t| {
        assert!(t.grad().is_some(), "{name} has no grad");
        assert_eq!(t.grad().unwrap().len(), t.numel());
    });
    m.zero_grads();
    m.for_each_param(|_, t| assert!(t.grad().is_none()));
}

#[test]
fn input_errors() {
    let m = ClassifierModel::init(&small(), 0).unwrap();
    let too_long = TokenBatch::from_sequences(&[vec![65u32; 25]]).unwrap();
    assert!(matches!(m.logits(&too_long), Err(Error::Input(_))));
    let bad_id = TokenBatch::from_sequences(&[vec![BOS, 300]]).unwrap();
    assert!(matches!(m.logits(&bad_id), Err(Error::Input(_))));
    assert!(TokenBatch::new(vec![PAD, PAD], 1, 2, vec![false, false]).is_err());
    assert!(TokenBatch::new(vec![1, 2, 3], 1, 2, vec![true; 3]).is_err());
}
