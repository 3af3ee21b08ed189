use super::*;
use crate::data::{make_synthetic, Example, Label};
use crate::model::ModelConfig;
use crate::peft::{attach, AdapterConfig, LoraConfig, Peft};
use crate::tensor::Tensor;

fn micro() -> ModelConfig {
    ModelConfig::preset("micro").unwrap()
}

fn hp(lr: f64, wd: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        weight_decay: wd,
        ..TrainConfig::preset(Method::None)
    }
}

fn tensor_with_grad(values: &[f32], grad: &[f32]) -> Tensor {
    let mut t = Tensor::new([values.len()], values.to_vec()).unwrap().with_requires_grad(true);
    t.accumulate_grad(grad).unwrap();
    t
}

fn small_dataset() -> Dataset {
    let rows = [
        ("they are vermin", Label::Hate),
        ("they are lovely", Label::NotHate),
        ("fans are scum", Label::Hate),
        ("fans are kind", Label::NotHate),
        ("honestly tourists are rats", Label::Hate),
        ("honestly tourists are sunny", Label::NotHate),
        ("filthy neighbours", Label::Hate),
        ("music neighbours", Label::NotHate),
        ("my coworkers are worthless", Label::Hate),
        ("my coworkers are friendly", Label::NotHate),
    ];
    let ex = rows.iter().map(|(t, l)| Example::new(*t, *l).unwrap()).collect();
    Dataset::new("small", ex).unwrap()
}

fn with_peft(peft: &Peft) -> ClassifierModel {
    let mut m = ClassifierModel::init(&micro(), 0).unwrap();
    attach(&mut m, peft, 0).unwrap();
    m
}

fn bits(m: &ClassifierModel) -> Vec<(String, Vec<u32>, bool)> {
    m.params()
        .into_iter()
        .map(|(n, t)| (n, t.data().iter().map(|x| x.to_bits()).collect(), t.requires_grad()))
        .collect()
}

#[test]
fn adamw_first_step() {
    let mut t = tensor_with_grad(&[0.5, -2.0], &[1.0, 1.0]);
    let mut state = AdamWState::new();
    adamw_step_tensors(&mut [("w", &mut t)], &mut state, &hp(0.1, 0.0)).unwrap();
    // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps)
    let step = 0.1 / (1.0 + 1e-8);
    assert_eq!(t.data()[0], (0.5f64 - step) as f32);
    assert_eq!(t.data()[1], (-2.0f64 - step) as f32);
    assert_eq!(state.t, 1);
    assert!(t.grad().is_none(), "grads are cleared after the step");
}

#[test]
fn adamw_zero_grad_no_decay_is_bitwise_noop() {
    let values = [0.3f32, -1.7, 1e-20, 123.456];
    let mut t = tensor_with_grad(&values, &[0.0; 4]);
    let mut state = AdamWState::new();
    adamw_step_tensors(&mut [("w", &mut t)], &mut state, &hp(0.1, 0.0)).unwrap();
    let before: Vec<u32> = values.iter().map(|x| x.to_bits()).collect();
    let after: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
    assert_eq!(before, after);
}

#[test]
fn adamw_pure_decay() {
    let values = [0.3f32, -1.7, 2.0, 123.456];
    let mut t = tensor_with_grad(&values, &[0.0; 4]);
    adamw_step_tensors(&mut [("w", &mut t)], &mut AdamWState::new(), &hp(0.1, 0.001)).unwrap();
    for (got, &v) in t.data().iter().zip(&values) {
        assert_eq!(*got, (v as f64 * (1.0 - 1e-4)) as f32);
    }
}

#[test]
fn adamw_matches_reference_over_several_steps() {
    let cfg = TrainConfig {
        betas: (0.8, 0.95),
        ..hp(0.05, 0.01)
    };
    let grads = [[0.5f32, -1.0], [0.25, 2.0], [-0.75, 0.0], [1.5, -0.5]];
    let mut t = Tensor::new([2], vec![1.0f32, -1.0]).unwrap().with_requires_grad(true);
    let mut state = AdamWState::new();
    // reference written from the update rule, all in f64
    let (mut theta, mut m, mut v) = ([1.0f64, -1.0], [0.0f64; 2], [0.0f64; 2]);
    for (step, g) in grads.iter().enumerate() {
        t.accumulate_grad(g).unwrap();
        adamw_step_tensors(&mut [("w", &mut t)], &mut state, &cfg).unwrap();
        let k = (step + 1) as i32;
        for i in 0..2 {
            let gi = g[i] as f64;
            m[i] = 0.8 * m[i] + 0.2 * gi;
            v[i] = 0.95 * v[i] + 0.05 * gi * gi;
            let mh = m[i] / (1.0 - 0.8f64.powi(k));
            let vh = v[i] / (1.0 - 0.95f64.powi(k));
            theta[i] = theta[i] - 0.05 * mh / (vh.sqrt() + 1e-8) - 0.05 * 0.01 * theta[i];
            // stored weights are f32
            theta[i] = theta[i] as f32 as f64;
        }
        for (&got, &want) in t.data().iter().zip(&theta) {
            assert!((got as f64 - want).abs() < 1e-6, "step {step}");
        }
    }
    let (m_state, v_state) = state.moments("w").unwrap();
    for i in 0..2 {
        assert!((m_state[i] - m[i]).abs() < 1e-12);
        assert!((v_state[i] - v[i]).abs() < 1e-12);
    }
}

#[test]
fn adamw_missing_grad_is_contract_error() {
    let mut t = Tensor::new([2], vec![1.0f32, 2.0]).unwrap().with_requires_grad(true);
    let r = adamw_step_tensors(&mut [("w", &mut t)], &mut AdamWState::new(), &hp(0.1, 0.0));
    assert!(matches!(r, Err(Error::Contract(_))));

    let mut m = with_peft(&Peft::Lora(LoraConfig::default()));
    let r = adamw_step(&mut m, &mut AdamWState::new(), &hp(0.1, 0.0));
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn batches() {
    let ds = small_dataset();
    let b = make_batches(&ds, 8, 64, 3, 0).unwrap();
    assert_eq!(b.iter().map(|b| b.indices.len()).collect::<Vec<_>>(), vec![8, 2]);
    assert_eq!(b, make_batches(&ds, 8, 64, 3, 0).unwrap());
    let mut all: Vec<usize> = b.iter().flat_map(|b| b.indices.clone()).collect();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    for batch in &b {
        let longest = batch.indices.iter().map(|&i| ds.examples()[i].text.len() + 1).max().unwrap();
        assert_eq!(batch.tokens.seq_len(), longest);
        for (&i, &t) in batch.indices.iter().zip(&batch.targets) {
            assert_eq!(t, ds.examples()[i].label.index());
        }
    }
}

#[test]
fn epoch_orders_differ() {
    // captured from the seed-0 streams
    assert_eq!(epoch_order(10, 0, 0), EPOCH0_FIXTURE);
    assert_ne!(epoch_order(10, 0, 0), epoch_order(10, 0, 1));
    assert_eq!(epoch_order(10, 0, 1), epoch_order(10, 0, 1));
}

const EPOCH0_FIXTURE: [usize; 10] = [1, 3, 9, 7, 8, 5, 6, 0, 4, 2];

#[test]
fn method_mismatch() {
    let ds = small_dataset();
    let mut m = with_peft(&Peft::Adapter(AdapterConfig::default()));
    let r = train(&mut m, &ds, &TrainConfig::micro(Method::Lora));
    assert!(matches!(r, Err(Error::Config(_))));
    let mut m = ClassifierModel::init(&micro(), 0).unwrap();
    let r = train(&mut m, &ds, &TrainConfig::micro(Method::Adapter));
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn config_validation() {
    let ok = TrainConfig::micro(Method::Lora);
    ok.validate().unwrap();
    for bad in [
        TrainConfig { epochs: 0, ..ok.clone() },
        TrainConfig { batch_size: 0, ..ok.clone() },
        TrainConfig { learning_rate: 0.0, ..ok.clone() },
        TrainConfig { weight_decay: -1.0, ..ok.clone() },
        TrainConfig { betas: (1.0, 0.9), ..ok.clone() },
        TrainConfig { eps: 0.0, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
    let mut m = with_peft(&Peft::Lora(LoraConfig::default()));
    let too_long = TrainConfig { max_seq_len: 129, ..ok };
    assert!(matches!(train(&mut m, &small_dataset(), &too_long), Err(Error::Config(_))));
}

#[test]
fn presets() {
    let l = TrainConfig::preset(Method::Lora);
    assert_eq!((l.epochs, l.batch_size, l.learning_rate, l.weight_decay), (3, 8, 2e-4, 0.001));
    let a = TrainConfig::preset(Method::Adapter);
    assert_eq!((a.epochs, a.learning_rate), (5, 1e-4));
    assert_eq!(TrainConfig::micro(Method::Adapter).learning_rate, 5e-4);
}

#[test]
fn frozen_params_bitwise_unchanged() {
    let ds = small_dataset();
    for (peft, method) in [
        (Peft::Lora(LoraConfig::default()), Method::Lora),
        (Peft::Adapter(AdapterConfig::default()), Method::Adapter),
    ] {
        let mut m = with_peft(&peft);
        let before = bits(&m);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::micro(method)
        };
        train(&mut m, &ds, &cfg).unwrap();
        let after = bits(&m);
        let mut moved = 0;
        for ((name, b, trainable), (_, a, _)) in before.iter().zip(&after) {
            if *trainable {
                moved += (a != b) as usize;
            } else {
                assert_eq!(a, b, "{method}: frozen {name} changed");
            }
        }
        assert!(moved > 0);
    }
}

#[test]
fn training_is_deterministic() {
    let ds = small_dataset();
    let run = || {
        let mut m = with_peft(&Peft::Lora(LoraConfig::default()));
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::micro(Method::Lora)
        };
        let r = train(&mut m, &ds, &cfg).unwrap();
        (r, bits(&m))
    };
    let (r1, w1) = run();
    let (r2, w2) = run();
    assert_eq!(r1.epoch_losses, r2.epoch_losses);
    assert_eq!(r1.epoch_accuracies, r2.epoch_accuracies);
    assert_eq!(r1.steps, r2.steps);
    assert_eq!(r1.steps, 4);
    assert_eq!(w1, w2);
}

#[test]
fn single_example_is_memorised_within_200_steps() {
    let ds = Dataset::new("one", vec![Example::new("a single training text", Label::Hate).unwrap()]).unwrap();
    let mut m = ClassifierModel::init(&micro(), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 1,
        ..TrainConfig::micro(Method::None)
    };
    let r = train(&mut m, &ds, &cfg).unwrap();
    let first = r.epoch_losses.iter().position(|&l| l < 0.01);
    assert!(first.is_some(), "final loss {}", r.final_loss());
}

#[test]
fn non_finite_loss_reports_coordinates() {
    let ds = small_dataset();
    let mut m = ClassifierModel::init(&micro(), 0).unwrap();
    m.head.data_mut()[0] = f32::MAX;
    m.head.data_mut()[1] = -f32::MAX;
    let r = train(&mut m, &ds, &TrainConfig::micro(Method::None));
    match r {
        Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (1, 1)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn losses_fall_over_first_epochs_on_synthetic() {
    let ds = make_synthetic(512, 0).unwrap();
    let mut m = with_peft(&Peft::Lora(LoraConfig::default()));
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::micro(Method::Lora)
    };
    let r = train(&mut m, &ds, &cfg).unwrap();
    assert_eq!(r.epoch_losses.len(), 5);
    for w in r.epoch_losses.windows(2) {
        assert!(w[1] <= w[0], "{:?}", r.epoch_losses);
    }
    assert!(r.epoch_losses.iter().all(|l| l.is_finite()));
    assert_eq!(r.params.peft, 2048);
}

