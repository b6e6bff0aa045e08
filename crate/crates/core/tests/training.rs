use locust_core::models::{Architecture, Example, InputShape, ModelConfig, Network};
use locust_core::synth::class_signal_points;
use locust_core::tensorkit::Tensor;
use locust_core::training::{
    adam_step, adamw_step, epoch_batches, evaluate, AdamHyper, EarlyStopping, Moments, OptimizerKind,
    SelectionMetric, TrainConfig, TrainError, Trainer,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hyper(lr: f64, wd: f64) -> AdamHyper {
    AdamHyper {
        lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: wd,
    }
}

#[test]
fn adam_zero_gradient_is_a_no_op_and_adamw_shrinks() {
    let h = hyper(1e-3, 0.1);
    let mut a: Tensor<f64> = Tensor::from_vec(vec![0.5, -2.0]);
    let mut m = Moments::zeros(&[2]);
    adam_step(&mut a, &Tensor::zeros(&[2]), &mut m, 1, &h);
    assert_eq!(a.data(), &[0.5, -2.0]);

    let mut w: Tensor<f64> = Tensor::from_vec(vec![0.5, -2.0]);
    let mut m = Moments::zeros(&[2]);
    adamw_step(&mut w, &Tensor::zeros(&[2]), &mut m, 1, &h);
    let f: f64 = 1.0 - 1e-3 * 0.1;
    assert!((w.data()[0] - 0.5 * f).abs() < 1e-15);
    assert!((w.data()[1] + 2.0 * f).abs() < 1e-15);
}

/// Hand-derived moments for a constant gradient g:
/// m_t = (1 - b1^t) g and v_t = (1 - b2^t) g^2, so both bias-corrected
/// estimates equal g and g^2 and every step moves by lr * g / (|g| + eps).
#[test]
fn constant_gradient_steps_match_closed_form() {
    for &(g, theta0) in &[(0.3, 1.0), (-2.5, -0.4), (1e-3, 7.0)] {
        for (kind, wd) in [(OptimizerKind::Adam, 0.0), (OptimizerKind::Adamw, 0.1)] {
            let h = hyper(1e-2, wd);
            let mut theta = Tensor::from_vec(vec![theta0]);
            let mut mom = Moments::zeros(&[1]);
            let mut expect = theta0;
            for t in 1..=3u64 {
                match kind {
                    OptimizerKind::Adam => adam_step(&mut theta, &Tensor::from_vec(vec![g]), &mut mom, t, &h),
                    OptimizerKind::Adamw => adamw_step(&mut theta, &Tensor::from_vec(vec![g]), &mut mom, t, &h),
                }
                expect = expect * (1.0 - 0.01 * wd) - 0.01 * g / (g.abs() + 1e-8);
                assert!((theta.data()[0] - expect).abs() < 1e-12, "t={t} {kind:?}");
                let m_t = (1.0 - 0.9f64.powi(t as i32)) * g;
                let v_t = (1.0 - 0.999f64.powi(t as i32)) * g * g;
                assert!((mom.m.data()[0] - m_t).abs() < 1e-12);
                assert!((mom.v.data()[0] - v_t).abs() < 1e-12);
            }
        }
    }
}

/// Second step with a changed gradient, against the textbook recurrence.
#[test]
fn two_step_update_matches_recurrence() {
    let h = hyper(0.05, 0.0);
    let (g1, g2): (f64, f64) = (0.7, -1.3);
    let mut theta = Tensor::from_vec(vec![0.2]);
    let mut mom = Moments::zeros(&[1]);
    adam_step(&mut theta, &Tensor::from_vec(vec![g1]), &mut mom, 1, &h);
    adam_step(&mut theta, &Tensor::from_vec(vec![g2]), &mut mom, 2, &h);
    let m1 = 0.1 * g1;
    let v1 = 0.001 * g1 * g1;
    let x1 = 0.2 - 0.05 * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
    let m2 = 0.9 * m1 + 0.1 * g2;
    let v2 = 0.999 * v1 + 0.001 * g2 * g2;
    let x2 = x1 - 0.05 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
    assert!((theta.data()[0] - x2).abs() < 1e-12);
}

#[test]
fn adam_minimises_a_quadratic() {
    let h = hyper(1e-2, 0.0);
    let mut x: Tensor<f64> = Tensor::from_vec(vec![1.0]);
    let mut mom = Moments::zeros(&[1]);
    let mut reached = None;
    for t in 1..=2000u64 {
        let g = Tensor::from_vec(vec![2.0 * x.data()[0]]);
        adam_step(&mut x, &g, &mut mom, t, &h);
        if reached.is_none() && x.data()[0].abs() < 1e-2 {
            reached = Some(t);
        }
    }
    assert!(reached.is_some(), "final x = {}", x.data()[0]);
}

#[test]
fn patience_stops_ten_epochs_after_last_improvement() {
    let mut es = EarlyStopping::new(10);
    let mut stopped = None;
    for epoch in 1..=100 {
        let value = if epoch <= 5 { epoch as f64 * 0.1 } else { 0.2 };
        if es.observe(epoch, value).stop {
            stopped = Some(epoch);
            break;
        }
    }
    assert_eq!(stopped, Some(15));
    assert_eq!(es.best_epoch, Some(5));
}

#[test]
fn ties_do_not_count_as_improvement() {
    let mut es = EarlyStopping::new(2);
    assert!(es.observe(1, 0.5).improved);
    assert!(!es.observe(2, 0.5).improved);
    assert!(es.observe(3, 0.5).stop);
    let mut es = EarlyStopping::new(3);
    es.observe(1, f64::NAN);
    assert!(es.observe(2, 0.1).improved);
    assert!(!es.observe(3, f64::NAN).improved);
}

proptest! {
    #[test]
    fn never_runs_past_patience(trace in proptest::collection::vec(0.0f64..1.0, 1..80), patience in 1usize..12) {
        let mut es = EarlyStopping::new(patience);
        for (i, v) in trace.iter().enumerate() {
            let d = es.observe(i + 1, *v);
            let best = es.best_epoch.unwrap();
            prop_assert!(i + 1 - best <= patience);
            if d.stop {
                prop_assert_eq!(i + 1 - best, patience);
                break;
            }
        }
    }

    #[test]
    fn batches_cover_every_index_once(n in 1usize..200, bs in 1usize..40, seed in 0u64..1000) {
        let batches = epoch_batches(n, bs, seed, 3);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        let dropped = bs > 1 && n > bs && n % bs == 1;
        prop_assert_eq!(seen.len(), if dropped { n - 1 } else { n });
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), if dropped { n - 1 } else { n });
        prop_assert!(batches.iter().all(|b| b.len() <= bs));
    }
}

#[test]
fn batches_differ_between_epochs_but_not_between_runs() {
    assert_eq!(epoch_batches(50, 8, 7, 1), epoch_batches(50, 8, 7, 1));
    assert_ne!(epoch_batches(50, 8, 7, 1), epoch_batches(50, 8, 7, 2));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let c = TrainConfig { patience: 300, ..TrainConfig::default() };
    assert!(c.validate().is_err());
    let c = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
    assert!(c.validate().is_err());
    let seg = TrainConfig::for_arch(Architecture::PrithviLb);
    assert_eq!((seg.max_epochs, seg.optimizer), (10, OptimizerKind::Adamw));
}

fn blobs(n: usize, seed: u64, gap: f64) -> Vec<Example<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let c = if label == 1 { gap } else { -gap };
            let x = vec![c + rng.gen_range(-1.0..1.0), c + rng.gen_range(-1.0..1.0)];
            Example::point(format!("b{i}"), x, label)
        })
        .collect()
}

fn linear_cfg(arch: Architecture) -> ModelConfig {
    ModelConfig::new(arch, InputShape::Flat { len: 2 })
}

fn fast(cfg: TrainConfig) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        batch_size: 8,
        max_epochs: 60,
        patience: 60,
        ..cfg
    }
}

#[test]
fn separable_blobs_reach_perfect_validation_f1() {
    let train = blobs(40, 1, 2.0);
    let val = blobs(20, 2, 2.0);
    for arch in [Architecture::Logreg, Architecture::Svm] {
        let net = Network::new(linear_cfg(arch)).unwrap();
        let mut tr = Trainer::new(net, fast(TrainConfig::default())).unwrap();
        tr.run(&train, &val, &mut |_| {}).unwrap();
        let best = tr.best_network(&val).unwrap();
        let r = evaluate(&best, &val, "validation").unwrap();
        assert_eq!(r.binary.f1, 1.0, "{arch:?}");
        let train_report = evaluate(&best, &train, "train").unwrap();
        assert_eq!(train_report.binary.accuracy, 1.0, "{arch:?}");
    }
}

#[test]
fn selected_epoch_maximises_the_validation_metric() {
    let train = blobs(40, 3, 0.6);
    let val = blobs(30, 4, 0.6);
    let net = Network::new(linear_cfg(Architecture::Logreg)).unwrap();
    let cfg = TrainConfig {
        selection_metric: SelectionMetric::RocAuc,
        ..fast(TrainConfig::default())
    };
    let mut tr = Trainer::new(net, cfg).unwrap();
    tr.run(&train, &val, &mut |_| {}).unwrap();
    let best = tr.report.best_epoch.unwrap();
    let values: Vec<f64> = tr.report.epochs.iter().map(|e| e.selection_value.unwrap()).collect();
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    assert_eq!(values[best - 1], max);
    // first epoch reaching the maximum
    assert!(values[..best - 1].iter().all(|&v| v < max));
    // the returned model is the best one, not the last
    let net = tr.best_network(&val).unwrap();
    let auc = evaluate(&net, &val, "validation").unwrap().roc_auc.unwrap();
    assert_eq!(auc, max);
}

#[test]
fn training_is_deterministic() {
    let input = InputShape::Point { t: 3, n: 3, v: 2, s: 1 };
    let data = class_signal_points::<f64>(input, 24, 0.5, 5);
    let (train, val) = data.split_at(16);
    let run = || {
        let mut cfg = ModelConfig::new(Architecture::PlanLb, input);
        cfg.hyper.embed_dim = 4;
        cfg.hyper.lstm_hidden = 4;
        let net = Network::new(cfg).unwrap();
        let tc = TrainConfig { batch_size: 5, max_epochs: 4, patience: 4, learning_rate: 1e-2, seed: 3, ..TrainConfig::default() };
        let mut tr = Trainer::new(net, tc).unwrap();
        tr.run(train, val, &mut |_| {}).unwrap();
        (serde_json::to_string(&tr.report).unwrap(), tr.net.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn resume_matches_uninterrupted_run_bit_for_bit() {
    let input = InputShape::Point { t: 3, n: 3, v: 2, s: 1 };
    let data = class_signal_points::<f64>(input, 30, 0.4, 9);
    let (train, val) = data.split_at(20);
    let mut cfg = ModelConfig::new(Architecture::Conv3d, input);
    cfg.hyper.conv_channels = 3;
    cfg.hyper.conv_kernel = [3, 3, 3];
    let tc = TrainConfig {
        batch_size: 6,
        max_epochs: 6,
        patience: 6,
        learning_rate: 5e-3,
        optimizer: OptimizerKind::Adamw,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut full = Trainer::new(Network::<f64>::new(cfg.clone()).unwrap(), tc.clone()).unwrap();
    full.run(train, val, &mut |_| {}).unwrap();

    let mut first = Trainer::new(Network::<f64>::new(cfg).unwrap(), tc).unwrap();
    first.run_until(train, val, 3, &mut |_| {}).unwrap();
    let mut buf = Vec::new();
    locust_core::models::write_checkpoint_to(&mut buf, &first.checkpoint()).unwrap();
    let ck = locust_core::models::read_checkpoint_from(&mut buf.as_slice()).unwrap();
    let mut resumed = Trainer::resume(&ck).unwrap();
    resumed.run(train, val, &mut |_| {}).unwrap();

    assert_eq!(resumed.net.params, full.net.params);
    assert_eq!(resumed.optimizer, full.optimizer);
    assert_eq!(resumed.best, full.best);
    assert_eq!(
        serde_json::to_string(&resumed.report).unwrap(),
        serde_json::to_string(&full.report).unwrap()
    );
}

#[test]
fn divergence_is_reported_with_location() {
    let mut train = blobs(8, 5, 1.0);
    train[3].x.data_mut()[0] = f64::NAN;
    let net = Network::new(linear_cfg(Architecture::Logreg)).unwrap();
    let tc = TrainConfig { batch_size: 100, ..fast(TrainConfig::default()) };
    let mut tr = Trainer::new(net, tc).unwrap();
    let err = tr.run(&train, &blobs(4, 6, 1.0), &mut |_| {}).unwrap_err();
    assert!(matches!(err, TrainError::Divergence { epoch: 1, batch: 1, .. }), "{err}");
}

/// Exhaustive search over a fine (w1, w2, b) grid for the minimiser of the
/// same regularised hinge objective; the trained SVM must produce the same
/// sign pattern on the integer lattice away from the oracle's margin.
#[test]
fn svm_matches_grid_search_sign_pattern() {
    let pts: [([f64; 2], usize); 8] = [
        ([0.0, 0.0], 0),
        ([1.0, 0.0], 0),
        ([0.0, 1.0], 0),
        ([1.0, 1.0], 0),
        ([3.0, 3.0], 1),
        ([4.0, 3.0], 1),
        ([3.0, 4.0], 1),
        ([4.0, 4.0], 1),
    ];
    let lambda = 1.0 / (2.0 * 1.0 * pts.len() as f64);
    let objective = |w1: f64, w2: f64, b: f64| {
        let hinge: f64 = pts
            .iter()
            .map(|(x, y)| {
                let s = if *y == 1 { 1.0 } else { -1.0 };
                (1.0 - s * (w1 * x[0] + w2 * x[1] + b)).max(0.0)
            })
            .sum::<f64>()
            / pts.len() as f64;
        hinge + lambda * (w1 * w1 + w2 * w2)
    };
    let mut best = (f64::INFINITY, [0.0; 3]);
    for i in -16..=16 {
        for j in -16..=16 {
            for k in -32..=32 {
                let (w1, w2, b) = (i as f64 / 8.0, j as f64 / 8.0, k as f64 / 8.0);
                let o = objective(w1, w2, b);
                if o < best.0 {
                    best = (o, [w1, w2, b]);
                }
            }
        }
    }
    let [w1, w2, b] = best.1;
    let train: Vec<Example<f64>> = pts
        .iter()
        .enumerate()
        .map(|(i, (x, y))| Example::point(format!("p{i}"), x.to_vec(), *y))
        .collect();
    let net = Network::new(linear_cfg(Architecture::Svm)).unwrap();
    let tc = TrainConfig {
        batch_size: 8,
        max_epochs: 3000,
        patience: 3000,
        learning_rate: 0.02,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(net, tc).unwrap();
    tr.run_until(&train, &train, 3000, &mut |_| {}).unwrap();
    let net = &tr.net;
    for gx in -2..=6 {
        for gy in -2..=6 {
            let p = [gx as f64, gy as f64];
            let oracle = w1 * p[0] + w2 * p[1] + b;
            if oracle.abs() < 0.5 {
                continue; // near the boundary grid resolution decides
            }
            let m = net.svm_margin(&Tensor::from_vec(p.to_vec())).unwrap();
            assert_eq!(m > 0.0, oracle > 0.0, "at {p:?}: svm {m}, oracle {oracle}");
        }
    }
    for (x, y) in &pts {
        let m = net.svm_margin(&Tensor::from_vec(x.to_vec())).unwrap();
        assert_eq!(m > 0.0, *y == 1);
    }
}

#[test]
fn overfit_loss_is_nearly_monotone_after_epoch_five() {
    let input = InputShape::Point { t: 3, n: 3, v: 2, s: 1 };
    let data = class_signal_points::<f64>(input, 32, 0.8, 2);
    let mut cfg = ModelConfig::new(Architecture::Convlstm, input);
    cfg.hyper.convlstm_hidden = 4;
    let tc = TrainConfig { batch_size: 32, max_epochs: 40, patience: 40, learning_rate: 1e-2, ..TrainConfig::default() };
    let mut tr = Trainer::new(Network::new(cfg).unwrap(), tc).unwrap();
    tr.run(&data, &data, &mut |_| {}).unwrap();
    let losses = tr.report.train_losses();
    for w in losses[5..].windows(2) {
        assert!(w[1] <= w[0] * 1.05, "{losses:?}");
    }
}
