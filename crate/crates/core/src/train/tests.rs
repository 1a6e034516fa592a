use super::*;
use crate::models::{ArchTag, Architecture, ConvSpec, PoolSpec};
use crate::tensor::Padding;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn schedule_values() {
    let cfg = TrainConfig::default();
    let peak = 0.05 / 128f64.sqrt();
    assert!((cfg.peak_lr - peak).abs() < 1e-18);
    assert!((peak - 4.4194e-3).abs() < 1e-7);
    assert!((lr_at(4000, &cfg).unwrap() - peak).abs() < 1e-18);
    assert!((lr_at(1000, &cfg).unwrap() - 0.25 * peak).abs() < 1e-18);
    assert!((lr_at(16000, &cfg).unwrap() - 0.5 * peak).abs() < 1e-18);
    assert!(lr_at(0, &cfg).is_err());
    // continuity at the joint
    let before = lr_at(3999, &cfg).unwrap();
    let after = lr_at(4001, &cfg).unwrap();
    assert!((before - peak).abs() < peak * 1e-3 && (after - peak).abs() < peak * 1e-3);
}

#[test]
fn default_config_values() {
    let c = TrainConfig::default();
    assert_eq!((c.beta1, c.beta2, c.adam_epsilon), (0.9, 0.98, 1e-9));
    assert_eq!((c.warmup_steps, c.d_model, c.batch_size), (4000, 128, 64));
    assert_eq!((c.l2_weight, c.dropout), (1e-6, 0.1));
    assert_eq!(c.class_weighting, ClassWeighting::Balanced);
    let parsed: TrainConfig = serde_json::from_str("{\"epochs\": 3}").unwrap();
    assert_eq!(parsed.epochs, 3);
    assert!(serde_json::from_str::<TrainConfig>("{\"epoch\": 3}").is_err());
}

#[test]
fn class_weight_examples() {
    assert_eq!(class_weights(&[2, 2]).unwrap(), vec![1.0, 1.0]);
    let w = class_weights(&[100, 50, 50]).unwrap();
    let want = [2.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0];
    for (a, b) in w.iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(class_weights(&[3, 0]).is_err());
}

proptest! {
    #[test]
    fn weighted_mean_of_weights_is_one(counts in prop::collection::vec(1usize..500, 1..16)) {
        let w = class_weights(&counts).unwrap();
        let n: usize = counts.iter().sum();
        let mean: f64 = counts.iter().zip(&w).map(|(&c, &w)| c as f64 * w).sum::<f64>() / n as f64;
        prop_assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_is_bounded_by_peak(step in 1u64..1_000_000) {
        let cfg = TrainConfig::default();
        let lr = lr_at(step, &cfg).unwrap();
        prop_assert!(lr > 0.0 && lr <= cfg.peak_lr * (1.0 + 1e-15));
    }
}

fn one_param(v: f64) -> Tensor<f64> {
    Tensor::new(vec![1], vec![v]).unwrap().with_grad()
}

#[test]
fn adam_one_step_by_hand() {
    let cfg = TrainConfig {
        l2_weight: 0.0,
        ..TrainConfig::default()
    };
    let mut p = one_param(0.5);
    let mut st = OptimizerState::new([&p]);
    let lr = 1e-3;
    adam_step(&mut [&mut p], &[&[1.0]], &["p".into()], &mut st, lr, &cfg).unwrap();
    assert!((p.data()[0] - (0.5 - lr / (1.0 + 1e-9))).abs() < 1e-15);
}

#[test]
fn adam_zero_gradient_is_noop() {
    let cfg = TrainConfig {
        l2_weight: 0.0,
        ..TrainConfig::default()
    };
    let mut p = one_param(0.5);
    let mut st = OptimizerState::new([&p]);
    adam_step(&mut [&mut p], &[&[0.0]], &["p".into()], &mut st, 1e-3, &cfg).unwrap();
    assert_eq!(p.data()[0], 0.5);
}

#[test]
fn adam_identical_params_move_together() {
    let cfg = TrainConfig::default();
    let mut a = one_param(0.3);
    let mut b = one_param(0.3);
    let mut st = OptimizerState::new([&a, &b]);
    for g in [0.7, -0.2, 1.5] {
        adam_step(&mut [&mut a, &mut b], &[&[g], &[g]], &["a".into(), "b".into()], &mut st, 1e-2, &cfg).unwrap();
    }
    assert_eq!(a.data(), b.data());
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let cfg = TrainConfig::default();
    let mut p = one_param(0.5);
    let mut st = OptimizerState::new([&p]);
    match adam_step(&mut [&mut p], &[&[f64::NAN]], &["dense.bias".into()], &mut st, 1e-3, &cfg) {
        Err(Error::Numeric(m)) => assert!(m.contains("dense.bias")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn adam_descends_quadratic_bowl() {
    // f(p) = 0.5 * sum (p - c)^2, gradient p - c
    let cfg = TrainConfig::default();
    let c = [1.0, -2.0, 0.5];
    let mut p = Tensor::new(vec![3], vec![0.0; 3]).unwrap().with_grad();
    let f = |p: &Tensor<f64>| p.data().iter().zip(c).map(|(a, b)| 0.5 * (a - b).powi(2)).sum::<f64>();
    let mut st = OptimizerState::new([&p]);
    let before = f(&p);
    let g: Vec<f64> = p.data().iter().zip(c).map(|(a, b)| a - b).collect();
    adam_step(&mut [&mut p], &[&g], &["p".into()], &mut st, cfg.peak_lr, &cfg).unwrap();
    assert!(f(&p) < before);
}

fn tiny_arch(tag: ArchTag, classes: usize) -> Architecture {
    Architecture {
        tag,
        conv_spec: vec![ConvSpec { kernel: 3, filters: 6 }, ConvSpec { kernel: 2, filters: 6 }],
        pool: PoolSpec { size: 2, stride: 2 },
        lstm_units: 4,
        n_classes: classes,
        padding: Padding::Valid,
        input_frames: 24,
        input_coefs: 2,
    }
}

/// Class 0 has a positive first coefficient, class 1 a negative one.
fn separable_set<T: Real>(n: usize, seed: u64) -> LabeledSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = LabeledSet::default();
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 0 { 1.0 } else { -1.0 };
        let values = (0..48)
            .map(|j| {
                let base = if j % 2 == 0 { sign } else { 0.0 };
                T::from_f64_lossy(base + rng.random_range(-0.3..0.3))
            })
            .collect();
        set.features.push(FeatureMatrix {
            rows: 24,
            cols: 2,
            values,
            n_valid_frames: 24,
        });
        set.labels.push(label);
    }
    set
}

fn fast_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        warmup_steps: 10,
        peak_lr: 0.01,
        batch_size: 8,
        epochs,
        dropout: 0.0,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_initial_model() {
    let model = Model::<f32>::new(tiny_arch(ArchTag::Cnn, 2), 1).unwrap();
    let data = separable_set::<f32>(8, 2);
    let out = train(model.clone(), &data, &data, &fast_cfg(0), |_| {}).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.best, model);
    assert_eq!(out.last, model);
}

#[test]
fn training_loss_decreases_on_separable_data() {
    let model = Model::<f32>::new(tiny_arch(ArchTag::Cnn, 2), 3).unwrap();
    let data = separable_set::<f32>(64, 4);
    let out = train(model, &data, &data, &fast_cfg(5), |_| {}).unwrap();
    let losses: Vec<f64> = out.log.iter().map(|e| e.train_loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
    assert!(out.log.last().unwrap().val_accuracy > 0.9);
}

#[test]
fn training_is_deterministic() {
    for tag in ArchTag::ALL {
        let run = || {
            let model = Model::<f32>::new(tiny_arch(tag, 2), 5).unwrap();
            let data = separable_set::<f32>(24, 6);
            let cfg = TrainConfig {
                dropout: 0.1,
                ..fast_cfg(2)
            };
            train(model, &data, &data, &cfg, |_| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log[0].train_loss.to_bits(), b.log[0].train_loss.to_bits());
        assert_eq!(a.last, b.last);
    }
}

#[test]
fn missing_class_is_rejected() {
    let model = Model::<f32>::new(tiny_arch(ArchTag::Cnn, 3), 1).unwrap();
    let data = separable_set::<f32>(8, 2);
    assert!(matches!(
        train(model, &data, &data, &fast_cfg(1), |_| {}),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn best_checkpoint_tracks_validation_accuracy() {
    let model = Model::<f32>::new(tiny_arch(ArchTag::Crnn, 2), 7).unwrap();
    let data = separable_set::<f32>(32, 8);
    let out = train(model, &data, &data, &fast_cfg(4), |_| {}).unwrap();
    let best = out
        .log
        .iter()
        .map(|e| e.val_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let epoch = out.best_epoch.unwrap();
    assert_eq!(out.log[epoch - 1].val_accuracy, best);
    let (_, acc) = evaluate_loss(&out.best, &data, 16).unwrap();
    assert_eq!(acc, best);
}

#[test]
fn epoch_log_serializes_with_expected_keys() {
    let e = EpochLog {
        epoch: 1,
        train_loss: 0.5,
        val_loss: 0.6,
        val_accuracy: 0.7,
        lr_last: 1e-4,
        seconds: 2.0,
    };
    let v: serde_json::Value = serde_json::to_value(&e).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["epoch", "train_loss", "val_loss", "val_accuracy", "lr_last", "seconds"] {
        assert!(keys.contains(&k));
    }
}

#[test]
fn duplicating_a_class_leaves_balanced_gradient_unchanged() {
    let model = Model::<f64>::new(tiny_arch(ArchTag::CrnnAttn, 2), 9).unwrap();
    let base = separable_set::<f64>(6, 10);
    for k in [2usize, 3] {
        let grad_for = |set: &LabeledSet<f64>| {
            let w = class_weights(&set.class_counts(2)).unwrap();
            let sw: Vec<f64> = set.labels.iter().map(|&l| w[l]).collect();
            let refs: Vec<&FeatureMatrix<f64>> = set.features.iter().collect();
            batch_gradients(&model, &refs, &set.labels, Some(&sw), None).unwrap().1
        };
        let mut dup = base.clone();
        for (f, &l) in base.features.iter().zip(&base.labels) {
            if l == 1 {
                for _ in 1..k {
                    dup.features.push(f.clone());
                    dup.labels.push(l);
                }
            }
        }
        let (ga, gb) = (grad_for(&base), grad_for(&dup));
        for (a, b) in ga.iter().flatten().zip(gb.iter().flatten()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}
