//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each, and exits non-zero if any failed. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 3 7`.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{hash_tree, ok, scenario};
use locust_cli::synth::Scenario;
use locust_core::curation::{
    assign_splits, generate_pseudo_absences, BBox, CurationConfig, ObservationRecord, Provenance, Split, SplitSpec,
};
use locust_core::features::{
    build_chip, build_static_block, build_temporal_block, featurize_chips, featurize_points, ChipStacks,
    FeatureConfig, PointStacks,
};
use locust_core::geodata::read_stack;
use locust_core::metrics::{roc_auc, ScoredSample};
use locust_core::models::{examples_from_feature_set, Architecture, Example, InputShape, ModelConfig, Network};
use locust_core::synth::{
    chip_scene, class_signal_chips, class_signal_points, planted_scene, ChipSceneConfig, PlantedConfig,
};
use locust_core::tensorkit::gradcheck::standard_cases;
use locust_core::tensorkit::{Graph, Tensor};
use locust_core::training::{
    adam_step, adamw_step, evaluate, AdamHyper, EarlyStopping, Moments, SelectionMetric, TrainConfig,
    Trainer,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

// ------------------------------------------------------------------ 1

fn shapes() -> Outcome {
    let pc = PlantedConfig { sites: 20, ..PlantedConfig::default() };
    let scene = planted_scene(&pc).map_err(|e| e.to_string())?;
    let mut cc = CurationConfig::new(scene.interior, 1);
    cc.buffer_radius = 0.45;
    let mut records = scene.presences.clone();
    records.extend(generate_pseudo_absences(&scene.presences, &cc).map_err(|e| e.to_string())?);
    let curated = assign_splits(&records, &scene.splits).curated();
    let fc = FeatureConfig::default();
    let stacks = PointStacks { temporal: &scene.temporal, static_: &scene.static_ };
    let f = featurize_points(&curated, &stacks, &fc).map_err(|e| e.to_string())?;
    let m = &f.manifest;
    ensure!(m.temporal_shape == Some([30, 7, 7, 3]), "temporal block {:?}", m.temporal_shape);
    ensure!(m.static_shape == Some([7, 7, 17]), "static block {:?}", m.static_shape);
    ensure!(m.flat_len == Some(5243), "flat length {:?}", m.flat_len);
    let stored = f.sets.values().map(|s| s.samples.len()).sum::<usize>();
    ensure!(stored > 0 && f.sets.values().all(|s| s.sample_len == 5243), "stored sample length");
    let rec = &curated[0].record;
    let tb = build_temporal_block(rec, &scene.temporal, &fc).map_err(|e| e.to_string())?;
    let sb = build_static_block(rec, &scene.static_, &fc).map_err(|e| e.to_string())?;
    ensure!(tb.values.shape() == [30, 7, 7, 3], "temporal array {:?}", tb.values.shape());
    ensure!(sb.values.shape() == [7, 7, 17], "static array {:?}", sb.values.shape());

    let cs = chip_scene(&ChipSceneConfig::default()).map_err(|e| e.to_string())?;
    let mut cc = CurationConfig::new(cs.interior, 1);
    cc.buffer_radius = 0.005;
    let mut records = cs.presences.clone();
    records.extend(generate_pseudo_absences(&cs.presences, &cc).map_err(|e| e.to_string())?);
    let curated = assign_splits(&records, &cs.splits).curated();
    let f = featurize_chips(&curated, &ChipStacks { image: &cs.image }, &fc).map_err(|e| e.to_string())?;
    ensure!(f.manifest.chip_shape == Some([3, 6, 224, 224]), "chip {:?}", f.manifest.chip_shape);
    let chip = build_chip(&curated[0].record, &cs.image, &fc).map_err(|e| e.to_string())?;
    ensure!(chip.values.shape() == [3, 6, 224, 224], "chip array {:?}", chip.values.shape());
    ensure!(chip.mask.shape() == [224, 224], "mask {:?}", chip.mask.shape());
    Ok(format!("(30,7,7,3) (7,7,17) 5243 (3,6,224,224) over {stored} point samples"))
}

// ------------------------------------------------------------------ 2

// Spherical law of cosines, degrees of arc.
fn arc_degrees(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (a, b) = (lat1.to_radians(), lat2.to_radians());
    let c = a.sin() * b.sin() + a.cos() * b.cos() * (lon2 - lon1).to_radians().cos();
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

fn curation() -> Outcome {
    let spec = SplitSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let boundaries = [
        (ymd(2021, 4, 21), Split::Train),
        (ymd(2021, 4, 22), Split::Validation),
        (ymd(2021, 7, 9), Split::Validation),
        (ymd(2021, 7, 10), Split::Test),
    ];
    let mut presences = Vec::new();
    let mut push = |date: NaiveDate, rng: &mut ChaCha8Rng| {
        let id = format!("p{:05}", presences.len());
        presences.push(ObservationRecord {
            id,
            lon: rng.gen_range(32.0..43.0),
            lat: rng.gen_range(12.0..23.0),
            obs_date: date,
            label: 1,
            provenance: Provenance::Presence,
            stage: "laying".into(),
            instar: String::new(),
        });
    };
    for &(d, _) in &boundaries {
        for _ in 0..5 {
            push(d, &mut rng);
        }
    }
    for (split, k) in [(Split::Train, 1700), (Split::Validation, 200), (Split::Test, 580)] {
        let r = spec.range(split);
        let span = (r.end - r.start).num_days() as u64;
        for _ in 0..k {
            push(r.start + Days::new(rng.gen_range(0..=span)), &mut rng);
        }
    }
    let bbox = BBox { west: 30.0, east: 45.0, south: 10.0, north: 25.0 };
    let cfg = CurationConfig::new(bbox, 3);
    let absences = generate_pseudo_absences(&presences, &cfg).map_err(|e| e.to_string())?;
    let all: Vec<ObservationRecord> = presences.iter().chain(&absences).cloned().collect();
    ensure!(all.len() == 5000, "{} records", all.len());
    let a = assign_splits(&all, &spec);
    ensure!(a.rejected.is_empty(), "{} records outside the splits", a.rejected.len());

    // Independent split oracle straight from the boundary dates.
    let oracle = |d: NaiveDate| {
        if d <= ymd(2021, 4, 21) {
            Split::Train
        } else if d <= ymd(2021, 7, 9) {
            Split::Validation
        } else {
            Split::Test
        }
    };
    for s in Split::ALL {
        let members = a.get(s);
        ensure!(members.iter().all(|r| oracle(r.obs_date) == s), "{} holds a record from another range", s.as_str());
        let c = a.counts(s);
        ensure!(c.breeding == c.non_breeding, "{} unbalanced: {} vs {}", s.as_str(), c.breeding, c.non_breeding);
    }
    for (d, s) in boundaries {
        let ok = a.get(s).iter().filter(|r| r.obs_date == d).count();
        ensure!(ok >= 5, "boundary {d} not in {}", s.as_str());
    }

    let mut closest = f64::INFINITY;
    for x in &absences {
        for p in &presences {
            closest = closest.min(arc_degrees(x.lon, x.lat, p.lon, p.lat));
        }
    }
    ensure!(closest > cfg.buffer_radius - 1e-9, "absence at {closest} deg from a presence");
    let c = |s| a.counts(s);
    Ok(format!(
        "5000 records, splits {}/{}/{} per class, closest absence {closest:.4} deg > {}",
        c(Split::Train).breeding,
        c(Split::Validation).breeding,
        c(Split::Test).breeding,
        cfg.buffer_radius
    ))
}

// ------------------------------------------------------------------ 3

fn conv2d_loops(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: [usize; 2]) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (f, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ho = (h + 2 * pad[0] - kh) / stride + 1;
    let wo = (w + 2 * pad[1] - kw) / stride + 1;
    let mut out = Tensor::zeros(&[f, ho, wo]);
    for o in 0..f {
        for i in 0..ho {
            for j in 0..wo {
                let mut s = 0.0;
                for ci in 0..c {
                    for a in 0..kh {
                        for b in 0..kw {
                            let (ii, jj) = ((i * stride + a) as isize - pad[0] as isize, (j * stride + b) as isize - pad[1] as isize);
                            if ii >= 0 && jj >= 0 && ii < h as isize && jj < w as isize {
                                s += k.get(&[o, ci, a, b]) * x.get(&[ci, ii as usize, jj as usize]);
                            }
                        }
                    }
                }
                out.set(&[o, i, j], s);
            }
        }
    }
    out
}

fn conv3d_loops(x: &Tensor<f64>, k: &Tensor<f64>, pad: [usize; 3]) -> Tensor<f64> {
    let xs = x.shape().to_vec();
    let ks = k.shape().to_vec();
    let o: Vec<usize> = (0..3).map(|d| xs[d + 1] + 2 * pad[d] - ks[d + 2] + 1).collect();
    let mut out = Tensor::zeros(&[ks[0], o[0], o[1], o[2]]);
    for f in 0..ks[0] {
        for t in 0..o[0] {
            for i in 0..o[1] {
                for j in 0..o[2] {
                    let mut s = 0.0;
                    for c in 0..xs[0] {
                        for a in 0..ks[2] {
                            for b in 0..ks[3] {
                                for d in 0..ks[4] {
                                    let q = [
                                        (t + a) as isize - pad[0] as isize,
                                        (i + b) as isize - pad[1] as isize,
                                        (j + d) as isize - pad[2] as isize,
                                    ];
                                    if (0..3).all(|e| q[e] >= 0 && q[e] < xs[e + 1] as isize) {
                                        s += k.get(&[f, c, a, b, d]) * x.get(&[c, q[0] as usize, q[1] as usize, q[2] as usize]);
                                    }
                                }
                            }
                        }
                    }
                    out.set(&[f, t, i, j], s);
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mann_whitney(s: &[ScoredSample<f64>]) -> f64 {
    let pos: Vec<f64> = s.iter().filter(|x| x.label == 1).map(|x| x.score).collect();
    let neg: Vec<f64> = s.iter().filter(|x| x.label == 0).map(|x| x.score).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn kernels() -> Outcome {
    let cases = standard_cases();
    let mut worst = (0.0, "");
    for case in &cases {
        for seed in 0..10 {
            let r = case.run(seed, 1e-5).map_err(|e| format!("{}: {e}", case.name))?;
            let e = r.max_rel_error();
            ensure!(e < 1e-6, "{} seed {seed}: relative error {e:e}", case.name);
            if e > worst.0 {
                worst = (e, case.name);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rand_t = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let mut conv_err: f64 = 0.0;
    for i in 0..40 {
        let (c, f) = (1 + i % 3, 1 + (i / 3) % 3);
        let (kh, kw, stride) = (1 + i % 3, 1 + (i / 2) % 3, 1 + i % 2);
        let x = rand_t(&[c, 5 + i % 4, 4 + i % 5]);
        let k = rand_t(&[f, c, kh, kw]);
        let pad = [kh / 2, kw / 2];
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv2d(xv, kv, stride, pad).map_err(|e| e.to_string())?;
        conv_err = conv_err.max(max_abs_diff(g.value(y), &conv2d_loops(&x, &k, stride, pad)));

        let kd = [1 + 2 * (i % 2), 1 + 2 * ((i / 2) % 2), 3];
        let x = rand_t(&[c, 2 + i % 4, 3 + i % 3, 4]);
        let k = rand_t(&[f, c, kd[0], kd[1], kd[2]]);
        let pad = [kd[0] / 2, kd[1] / 2, kd[2] / 2];
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv3d(xv, kv, pad).map_err(|e| e.to_string())?;
        conv_err = conv_err.max(max_abs_diff(g.value(y), &conv3d_loops(&x, &k, pad)));
    }
    ensure!(conv_err < 1e-10, "convolution differs from loops by {conv_err:e}");

    let mut auc_err: f64 = 0.0;
    for i in 0..200 {
        let n = 2 + i % 60;
        let coarse = i % 2 == 0;
        let mut s: Vec<ScoredSample<f64>> = (0..n)
            .map(|j| {
                let score = if coarse { rng.gen_range(0..5) as f64 / 4.0 } else { rng.gen::<f64>() };
                ScoredSample::new(score, if j < 1 { 0 } else if j < 2 { 1 } else { rng.gen_range(0..2) })
            })
            .collect();
        s.rotate_left(i % n);
        let got = roc_auc(&s).map_err(|e| e.to_string())?;
        auc_err = auc_err.max((got - mann_whitney(&s)).abs());
    }
    ensure!(auc_err < 1e-12, "ROC-AUC differs from pair counting by {auc_err:e}");
    Ok(format!(
        "{} ops x 10 seeds, worst {:.1e} ({}); conv {conv_err:.1e}; auc {auc_err:.1e}",
        cases.len(),
        worst.0,
        worst.1
    ))
}

// ------------------------------------------------------------------ 4

fn train_to_accuracy(cfg: ModelConfig, data: &[Example<f32>], max_epochs: usize, lr: f64) -> Result<(f64, usize), String> {
    let tc = TrainConfig {
        batch_size: 8,
        max_epochs,
        patience: max_epochs,
        learning_rate: lr,
        selection_metric: SelectionMetric::Accuracy,
        ..TrainConfig::for_arch(cfg.arch)
    };
    let mut tr = Trainer::new(Network::<f32>::new(cfg).map_err(|e| e.to_string())?, tc).map_err(|e| e.to_string())?;
    let mut acc = 0.0;
    while !tr.finished {
        // Validating on the training set makes each record's accuracy the train accuracy.
        acc = tr.step_epoch(data, data).map_err(|e| e.to_string())?.validation.binary.accuracy;
        if acc >= 0.95 {
            break;
        }
    }
    Ok((acc, tr.epoch))
}

fn capacity() -> Outcome {
    let point = InputShape::Point { t: 10, n: 5, v: 3, s: 4 };
    let flat = InputShape::Flat { len: point.len() };
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for arch in [
        Architecture::Logreg,
        Architecture::Svm,
        Architecture::PlanLb,
        Architecture::Conv3d,
        Architecture::Convlstm,
        Architecture::PrithviLb,
    ] {
        let (cfg, data, max_epochs, lr) = if arch == Architecture::PrithviLb {
            let mut cfg = ModelConfig::new(arch, InputShape::Chip { t: 3, b: 2, size: 64 });
            let h = &mut cfg.hyper;
            h.vit_patch = 8;
            h.vit_dim = 16;
            h.vit_heads = 2;
            h.vit_depth = 1;
            h.decoder_channels = vec![8];
            (cfg, class_signal_chips::<f32>(3, 2, 64, 8, 32, 1.0, 4), 50, 1e-3)
        } else {
            let input = if matches!(arch, Architecture::Logreg | Architecture::Svm) { flat } else { point };
            let mut cfg = ModelConfig::new(arch, input);
            let h = &mut cfg.hyper;
            h.embed_dim = 16;
            h.lstm_hidden = 16;
            h.conv_channels = 8;
            h.conv_kernel = [3, 3, 3];
            h.convlstm_hidden = 8;
            (cfg, class_signal_points::<f32>(point, 32, 0.5, 4), 500, 1e-3)
        };
        let t0 = Instant::now();
        let (acc, epochs) = train_to_accuracy(cfg, &data, max_epochs, lr)?;
        lines.push(format!("{} {:.0}%@{} ({:.0}s)", arch.as_str(), 100.0 * acc, epochs, t0.elapsed().as_secs_f64()));
        if acc < 0.95 {
            failed.push(arch.as_str());
        }
    }
    ensure!(failed.is_empty(), "below 95% train accuracy: {failed:?}; {}", lines.join(", "));
    Ok(lines.join(", "))
}

// ------------------------------------------------------------------ 5

fn planted_signal() -> Outcome {
    let pc = PlantedConfig { sites: 150, static_vars: 2, ..PlantedConfig::default() };
    let scene = planted_scene(&pc).map_err(|e| e.to_string())?;
    let mut cc = CurationConfig::new(scene.interior, 1);
    cc.buffer_radius = 0.45;
    let mut records = scene.presences.clone();
    records.extend(generate_pseudo_absences(&scene.presences, &cc).map_err(|e| e.to_string())?);
    let curated = assign_splits(&records, &scene.splits).curated();
    let stacks = PointStacks { temporal: &scene.temporal, static_: &scene.static_ };
    let f = featurize_points(&curated, &stacks, &FeatureConfig::default()).map_err(|e| e.to_string())?;
    let ex = |s| examples_from_feature_set::<f32>(&f.sets[&s]);
    let (train, val, test) = (ex(Split::Train), ex(Split::Validation), ex(Split::Test));
    let input = InputShape::Point { t: 30, n: 7, v: 3, s: 2 };
    let mut auc = Vec::new();
    for arch in [Architecture::Logreg, Architecture::Conv3d, Architecture::Convlstm] {
        let input = if arch == Architecture::Logreg { InputShape::Flat { len: input.len() } } else { input };
        let mut cfg = ModelConfig::new(arch, input);
        cfg.hyper.conv_channels = 8;
        cfg.hyper.conv_kernel = [3, 3, 3];
        cfg.hyper.convlstm_hidden = 8;
        let tc = TrainConfig {
            max_epochs: 30,
            patience: 10,
            learning_rate: 3e-3,
            selection_metric: SelectionMetric::RocAuc,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(Network::<f32>::new(cfg).map_err(|e| e.to_string())?, tc).map_err(|e| e.to_string())?;
        tr.run(&train, &val, &mut |_| {}).map_err(|e| e.to_string())?;
        let net = tr.best_network(&val).map_err(|e| e.to_string())?;
        let r = evaluate(&net, &test, "test").map_err(|e| e.to_string())?;
        auc.push(r.roc_auc.ok_or("test split holds one class")?);
    }
    let summary = format!(
        "test AUC logreg {:.3}, conv3d {:.3}, convlstm {:.3} ({} test samples)",
        auc[0],
        auc[1],
        auc[2],
        test.len()
    );
    ensure!(auc[1] >= auc[0] + 0.05 && auc[2] >= auc[0] + 0.05, "{summary}");
    Ok(summary)
}

// ------------------------------------------------------------------ 6

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |dir: &Path| {
        ok(dir, &["curate"]);
        ok(dir, &["featurize"]);
        ok(dir, &["train"]);
        ok(dir, &["evaluate"]);
        ok(dir, &["predict-map"]);
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        scenario(d, Scenario::Points, 40, 2, 224);
        common::append(&d.join("config.toml"), "\n[train]\nmax_epochs = 5\npatience = 5\nlearning_rate = 0.003\n");
    }
    ensure!(hash_tree(&a) == hash_tree(&b), "synth output differs between directories");
    run(&a);
    let first = hash_tree(&a.join("out"));
    run(&a);
    let second = hash_tree(&a.join("out"));
    ensure!(first == second, "rerun changed {:?}", first.iter().filter(|(k, v)| second.get(*k) != Some(v)).map(|(k, _)| k).collect::<Vec<_>>());
    // Run manifests hold absolute input paths, so only compare the artifacts across directories.
    run(&b);
    let other = hash_tree(&b.join("out"));
    let artifacts = |m: &std::collections::BTreeMap<String, String>| {
        m.iter().filter(|(k, _)| !k.starts_with("run_manifest")).map(|(k, v)| (k.clone(), v.clone())).collect::<Vec<_>>()
    };
    ensure!(artifacts(&first) == artifacts(&other), "a second directory produced different artifacts");
    Ok(format!("{} output files byte-identical across reruns", first.len()))
}

// ------------------------------------------------------------------ 7

fn stop_oracle(trace: &[f64], patience: usize) -> (usize, usize) {
    let mut best = (1, trace[0]);
    for (i, &v) in trace.iter().enumerate() {
        let epoch = i + 1;
        if v > best.1 {
            best = (epoch, v);
        }
        if epoch - best.0 >= patience {
            return (best.0, epoch);
        }
    }
    (best.0, trace.len())
}

fn protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut traces: Vec<Vec<f64>> = vec![vec![0.5, 0.6, 0.55, 0.7, 0.65, 0.69, 0.7, 0.6, 0.62, 0.71, 0.5, 0.5, 0.5, 0.5, 0.5]];
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        // Coarse values so ties are common.
        traces.push((0..n).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect());
    }
    for (k, trace) in traces.iter().enumerate() {
        for patience in 1..6 {
            let mut es = EarlyStopping::new(patience);
            let mut stopped = trace.len();
            for (i, &v) in trace.iter().enumerate() {
                if es.observe(i + 1, v).stop {
                    stopped = i + 1;
                    break;
                }
            }
            let (best, stop) = stop_oracle(trace, patience);
            ensure!(es.best_epoch == Some(best), "trace {k} patience {patience}: best {:?} vs {best}", es.best_epoch);
            ensure!(stopped == stop, "trace {k} patience {patience}: stopped at {stopped}, expected {stop}");
            if stop < trace.len() {
                ensure!(stop - best == patience, "trace {k}: halted {} epochs after the best", stop - best);
            }
        }
    }

    let mut err: f64 = 0.0;
    for _ in 0..100 {
        let h = AdamHyper {
            lr: rng.gen_range(1e-4..1e-1),
            beta1: rng.gen_range(0.5..0.99),
            beta2: rng.gen_range(0.9..0.9999),
            eps: 1e-8,
            weight_decay: rng.gen_range(0.0..0.5),
        };
        let theta0 = Tensor::from_fn(&[7], |_| rng.gen_range(-2.0..2.0));
        let grad = Tensor::from_fn(&[7], |_| rng.gen_range(-3.0..3.0));
        for decoupled in [false, true] {
            let mut theta = theta0.clone();
            let mut mom = Moments::zeros(&[7]);
            if decoupled {
                adamw_step(&mut theta, &grad, &mut mom, 1, &h);
            } else {
                adam_step(&mut theta, &grad, &mut mom, 1, &h);
            }
            for i in 0..7 {
                let (t0, g) = (theta0.data()[i], grad.data()[i]);
                // After one step the bias-corrected moments are g and g^2.
                let decayed = if decoupled { t0 - h.lr * h.weight_decay * t0 } else { t0 };
                let expect = decayed - h.lr * g / (g.abs() + h.eps);
                err = err.max((theta.data()[i] - expect).abs());
                err = err.max((mom.m.data()[i] - (1.0 - h.beta1) * g).abs());
                err = err.max((mom.v.data()[i] - (1.0 - h.beta2) * g * g).abs());
            }
        }
    }
    ensure!(err < 1e-12, "optimizer step differs from closed form by {err:e}");
    Ok(format!("{} traces x 5 patience values; Adam/AdamW max error {err:.1e}", traces.len()))
}

// ------------------------------------------------------------------ 8

fn map_export() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    scenario(dir, Scenario::Chips, 24, 0, 32);
    common::append(&dir.join("config.toml"), "\n[train]\nmax_epochs = 2\npatience = 2\n");
    ok(dir, &["curate"]);
    ok(dir, &["chip"]);
    ok(dir, &["train"]);
    let image = read_stack(&dir.join("image.lgrs")).map_err(|e| e.to_string())?;
    let gt = image.transform;
    let res = gt.pixel_size_lon;
    let region = |r0: usize, c0: usize, rows: usize, cols: usize| {
        let west = gt.origin_lon + c0 as f64 * res;
        let north = gt.origin_lat - r0 as f64 * res;
        (west, west + cols as f64 * res, north - rows as f64 * res, north)
    };
    let predict = |r0, c0, rows, cols, out: &str| -> Result<(Vec<f32>, (f64, f64, f64, f64)), String> {
        let (w, e, s, n) = region(r0, c0, rows, cols);
        ok(dir, &["--output-dir", out, "predict-map", "--region", &format!("{w},{e},{s},{n}")]);
        // predict-map reads features and the model from the output directory
        let map = read_stack(&dir.join(out).join("map/probability.lgrs")).map_err(|e| e.to_string())?;
        let shape = map.values.shape().to_vec();
        if shape != [1, 1, rows, cols] {
            return Err(format!("map shape {shape:?}, expected {rows}x{cols}"));
        }
        Ok((map.values.iter().copied().collect(), map.transform.footprint()))
    };
    // Tile outputs go to sibling directories that share the trained model.
    let link = |name: &str| -> Result<(), String> {
        let d = dir.join(name);
        fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        for sub in ["model", "features"] {
            copy_dir(&dir.join("out").join(sub), &d.join(sub))?;
        }
        Ok(())
    };

    // 52x50 cells starting at (4,10) need two 32-pixel tiles per axis:
    // rows at 4 and 24, columns at 10 and 28.
    let (r0, c0, rows, cols) = (4, 10, 52, 50);
    let (stitched, footprint) = predict(r0, c0, rows, cols, "out")?;
    let (w, e, s, n) = region(r0, c0, rows, cols);
    let tol = 1e-9;
    ensure!(
        (footprint.0 - w).abs() < tol && (footprint.1 - e).abs() < tol && (footprint.2 - s).abs() < tol && (footprint.3 - n).abs() < tol,
        "extent {footprint:?} != requested ({w}, {e}, {s}, {n})"
    );
    let tiles = [(4, 10), (4, 28), (24, 10), (24, 28)];
    let mut singles = Vec::new();
    for (i, &(tr, tc)) in tiles.iter().enumerate() {
        let name = format!("tile{i}");
        link(&name)?;
        singles.push(predict(tr, tc, 32, 32, &name)?.0);
    }
    let mut overlap = 0;
    for r in r0..r0 + rows {
        for c in c0..c0 + cols {
            let covering: Vec<usize> = (0..4)
                .filter(|&i| (tiles[i].0..tiles[i].0 + 32).contains(&r) && (tiles[i].1..tiles[i].1 + 32).contains(&c))
                .collect();
            if covering.len() > 1 {
                overlap += 1;
            }
            let d2 = |i: usize| {
                let (cr, cc) = (tiles[i].0 as f64 + 15.5, tiles[i].1 as f64 + 15.5);
                (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)
            };
            // First tile wins ties.
            let mut best = covering[0];
            for &i in &covering[1..] {
                if d2(i) < d2(best) {
                    best = i;
                }
            }
            let want = singles[best][(r - tiles[best].0) * 32 + (c - tiles[best].1)];
            let got = stitched[(r - r0) * cols + (c - c0)];
            ensure!(got == want, "cell ({r},{c}) = {got}, tile {best} says {want}");
        }
    }
    Ok(format!("{rows}x{cols} region from 4 tiles, extent exact, {overlap} overlap cells match the nearest tile"))
}

fn copy_dir(from: &Path, to: &Path) -> Result<(), String> {
    fs::create_dir_all(to).map_err(|e| e.to_string())?;
    for entry in fs::read_dir(from).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        let dest = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_dir(&p, &dest)?;
        } else {
            fs::copy(&p, &dest).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

// ------------------------------------------------------------------

type Criterion = (usize, &'static str, Duration, fn() -> Outcome);

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let only: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mins = |m: u64| Duration::from_secs(60 * m);
    let criteria: [Criterion; 8] = [
        (1, "shape fidelity", mins(1), shapes),
        (2, "curation fidelity", mins(1), curation),
        (3, "numerical kernels", mins(5), kernels),
        (4, "model capacity", mins(15), capacity),
        (5, "planted signal ordering", mins(20), planted_signal),
        (6, "determinism", mins(10), determinism),
        (7, "training protocol", mins(1), protocol),
        (8, "map export", mins(5), map_export),
    ];
    let mut failures = 0;
    for (n, name, budget, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let took = t0.elapsed();
        let outcome = match outcome {
            Ok(d) if took > budget => Err(format!("{d}; over the {}s budget", budget.as_secs())),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failures += 1;
        }
        println!("criterion {n} {name:<24} {tag}  {:>6.1}s  {detail}", took.as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
