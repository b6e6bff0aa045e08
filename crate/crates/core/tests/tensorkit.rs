use locust_core::tensorkit::gradcheck::{self, standard_cases};
use locust_core::tensorkit::nn::{self, AttentionWeights, ConvLstmWeights, LstmWeights};
use locust_core::tensorkit::{Graph, Tensor, TensorError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

// Plain nested-loop references, written independently of the library kernels.

fn conv2d_oracle(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    stride: usize,
    pad: [usize; 2],
) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (f, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ho = (h + 2 * pad[0] - kh) / stride + 1;
    let wo = (w + 2 * pad[1] - kw) / stride + 1;
    let mut out = Tensor::zeros(&[f, ho, wo]);
    for fi in 0..f {
        for i in 0..ho {
            for j in 0..wo {
                let mut s = 0.0;
                for ci in 0..c {
                    for a in 0..kh {
                        for b in 0..kw {
                            let ii = (i * stride + a) as isize - pad[0] as isize;
                            let jj = (j * stride + b) as isize - pad[1] as isize;
                            if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                continue;
                            }
                            s += k.get(&[fi, ci, a, b]) * x.get(&[ci, ii as usize, jj as usize]);
                        }
                    }
                }
                out.set(&[fi, i, j], s);
            }
        }
    }
    out
}

fn conv3d_oracle(x: &Tensor<f64>, k: &Tensor<f64>, pad: [usize; 3]) -> Tensor<f64> {
    let xs = x.shape();
    let ks = k.shape();
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
                                    let p = [t + a, i + b, j + d];
                                    let q: Vec<isize> =
                                        (0..3).map(|e| p[e] as isize - pad[e] as isize).collect();
                                    if (0..3).any(|e| q[e] < 0 || q[e] >= xs[e + 1] as isize) {
                                        continue;
                                    }
                                    s += k.get(&[f, c, a, b, d])
                                        * x.get(&[c, q[0] as usize, q[1] as usize, q[2] as usize]);
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
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn forward1(x: Tensor<f64>, f: impl Fn(&mut Graph<f64>, locust_core::tensorkit::Var) -> locust_core::tensorkit::Var) -> Tensor<f64> {
    let mut g = Graph::new();
    let v = g.constant(x);
    let y = f(&mut g, v);
    g.value(y).clone()
}

#[test]
fn every_op_passes_gradient_check_on_ten_seeds() {
    for case in standard_cases() {
        for seed in 0..10 {
            let r = case.run(seed, 1e-5).unwrap();
            assert!(
                r.max_rel_error() < 1e-6,
                "{} seed {seed}: {:?}",
                case.name,
                r.rel_errors
            );
        }
    }
}

#[test]
fn relu_forward_and_mask() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let s = g.sum_all(y);
    let grads = g.backward(s);
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let y = forward1(Tensor::from_vec(vec![0.0, 0.0]), |g, v| g.softmax(v, 0).unwrap());
    assert_eq!(y.data(), &[0.5, 0.5]);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(&[6, 9], |_| rng.gen_range(-20.0..20.0));
    let y = forward1(x, |g, v| g.softmax(v, 1).unwrap());
    for r in 0..6 {
        let s: f64 = y.data()[r * 9..(r + 1) * 9].iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_standardises() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[17]).map(|v| 3.0 * v + 2.0);
    let eps = 1e-5;
    let y = forward1(x.clone(), |g, v| g.layer_norm(v, &[0], eps).unwrap());
    let n = x.len() as f64;
    let mu = x.sum() / n;
    let var = x.data().iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    for (yi, xi) in y.data().iter().zip(x.data()) {
        assert!((yi - (xi - mu) / (var + eps).sqrt()).abs() < 1e-12);
    }
    let m = y.sum() / n;
    let v = y.data().iter().map(|v| v * v).sum::<f64>() / n;
    assert!(m.abs() < 1e-12);
    assert!((v - var / (var + eps)).abs() < 1e-12);
}

#[test]
fn backward_accumulates_aliased_inputs() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.5, -2.0]));
    let y = g.add(x, x).unwrap();
    let s = g.sum_all(y);
    let grads = g.backward(s);
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    let msg = g.add(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
}

#[test]
fn conv2d_identity_and_box_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[1, 5, 5]);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let k1 = g.constant(Tensor::ones(&[1, 1, 1, 1]));
    let y = g.conv2d(xv, k1, 1, [0, 0]).unwrap();
    assert_eq!(g.value(y), &x);

    let ones = g.constant(Tensor::ones(&[1, 5, 5]));
    let k3 = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let y = g.conv2d(ones, k3, 1, [1, 1]).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 5, 5]);
    assert_eq!(g.value(y).get(&[0, 2, 2]), 9.0);
}

#[test]
fn conv3d_delta_kernel_is_identity_and_keeps_extent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[2, 4, 5, 5]);
    let mut k = Tensor::zeros(&[2, 2, 3, 3, 3]);
    k.set(&[0, 0, 1, 1, 1], 1.0);
    k.set(&[1, 1, 1, 1, 1], 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let kv = g.constant(k);
    let y = g.conv3d(xv, kv, [1, 1, 1]).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv3d_default_kernel_shape() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[3, 30, 7, 7]));
    let k = g.constant(Tensor::zeros(&[32, 3, 3, 7, 7]));
    let y = g.conv3d(x, k, [1, 3, 3]).unwrap();
    assert_eq!(g.value(y).shape(), &[32, 30, 7, 7]);
}

#[test]
fn conv_transpose_doubles_and_maps_zero_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[4, 14, 14]));
    let k = g.constant(rand_tensor(&mut rng, &[4, 3, 2, 2]));
    let y = g.conv_transpose2d(x, k, 2).unwrap();
    assert_eq!(g.value(y).shape(), &[3, 28, 28]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_transpose_is_adjoint_of_strided_conv() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // conv2d kernel [F, C, 2, 2] maps [C, 8, 8] -> [F, 4, 4] at stride 2.
        // conv_transpose2d with the same kernel read as [Ci=F, Co=C] maps back.
        let x = rand_tensor(&mut rng, &[3, 8, 8]);
        let y = rand_tensor(&mut rng, &[5, 4, 4]);
        let k = rand_tensor(&mut rng, &[5, 3, 2, 2]);
        let mut g = Graph::new();
        let (xv, yv, kv) = (g.constant(x.clone()), g.constant(y.clone()), g.constant(k));
        let ax = g.conv2d(xv, kv, 2, [0, 0]).unwrap();
        let aty = g.conv_transpose2d(yv, kv, 2).unwrap();
        let lhs = g.value(ax).dot(&y);
        let rhs = x.dot(g.value(aty));
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn lstm_zero_weights_give_zero_hidden() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones(&[1, 3]));
    let h = g.constant(Tensor::zeros(&[1, 4]));
    let c = g.constant(Tensor::zeros(&[1, 4]));
    let w = LstmWeights {
        w_ih: g.constant(Tensor::zeros(&[3, 16])),
        w_hh: g.constant(Tensor::zeros(&[4, 16])),
        bias: g.constant(Tensor::zeros(&[16])),
    };
    let (h1, _) = nn::lstm_cell(&mut g, x, h, c, &w).unwrap();
    assert!(g.value(h1).data().iter().all(|&v| v == 0.0));
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[test]
fn lstm_saturated_forget_gate_keeps_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let hidden = 3;
    let w_ih = rand_tensor(&mut rng, &[2, 4 * hidden]);
    let w_hh = rand_tensor(&mut rng, &[hidden, 4 * hidden]);
    let mut bias = rand_tensor(&mut rng, &[4 * hidden]);
    for j in hidden..2 * hidden {
        bias.data_mut()[j] = 10.0;
    }
    let xs = [rand_tensor(&mut rng, &[1, 2]), rand_tensor(&mut rng, &[1, 2])];

    let mut g = Graph::new();
    let w = LstmWeights {
        w_ih: g.constant(w_ih.clone()),
        w_hh: g.constant(w_hh.clone()),
        bias: g.constant(bias.clone()),
    };
    let mut h = g.constant(Tensor::zeros(&[1, hidden]));
    let mut c = g.constant(Tensor::zeros(&[1, hidden]));
    let mut cells = Vec::new();
    for x in &xs {
        let xv = g.constant(x.clone());
        (h, c) = nn::lstm_cell(&mut g, xv, h, c, &w).unwrap();
        cells.push(g.value(c).clone());
    }

    // manual two-step evaluation, plus the f -> 1 limit c_t ~ c_{t-1} + i*g
    let mut hm = vec![0.0; hidden];
    let mut cm = vec![0.0; hidden];
    for (step, x) in xs.iter().enumerate() {
        let mut pre = bias.data().to_vec();
        for (j, p) in pre.iter_mut().enumerate() {
            for a in 0..2 {
                *p += x.data()[a] * w_ih.get(&[a, j]);
            }
            for a in 0..hidden {
                *p += hm[a] * w_hh.get(&[a, j]);
            }
        }
        for u in 0..hidden {
            let i = sig(pre[u]);
            let f = sig(pre[hidden + u]);
            let gg = pre[2 * hidden + u].tanh();
            let o = sig(pre[3 * hidden + u]);
            let limit = cm[u] + i * gg;
            cm[u] = f * cm[u] + i * gg;
            hm[u] = o * cm[u].tanh();
            assert!((cells[step].data()[u] - cm[u]).abs() < 1e-12);
            assert!((cells[step].data()[u] - limit).abs() < 1e-3);
        }
    }
}

fn lstm_rollout_case(steps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inp, hid) = (2, 3);
    let mut inputs = vec![
        rand_tensor(&mut rng, &[inp, 4 * hid]),
        rand_tensor(&mut rng, &[hid, 4 * hid]),
        rand_tensor(&mut rng, &[4 * hid]),
    ];
    for _ in 0..steps {
        inputs.push(rand_tensor(&mut rng, &[1, inp]));
    }
    gradcheck::check(&inputs, 1e-5, seed, |g, v| {
        let w = LstmWeights {
            w_ih: v[0],
            w_hh: v[1],
            bias: v[2],
        };
        let mut h = g.constant(Tensor::zeros(&[1, hid]));
        let mut c = g.constant(Tensor::zeros(&[1, hid]));
        for &x in &v[3..] {
            (h, c) = nn::lstm_cell(g, x, h, c, &w)?;
        }
        Ok(h)
    })
    .unwrap()
    .max_rel_error()
}

#[test]
fn lstm_three_step_rollout_gradient() {
    for seed in 0..10 {
        assert!(lstm_rollout_case(3, seed) < 1e-6);
    }
}

#[test]
fn convlstm_five_step_rollout_gradient() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ch, hid, n) = (2, 2, 4);
        let mut inputs = vec![
            rand_tensor(&mut rng, &[4 * hid, ch, 3, 3]),
            rand_tensor(&mut rng, &[4 * hid, hid, 3, 3]),
            rand_tensor(&mut rng, &[4 * hid]),
        ];
        for _ in 0..5 {
            inputs.push(rand_tensor(&mut rng, &[ch, n, n]));
        }
        let r = gradcheck::check(&inputs, 1e-5, seed, |g, v| {
            let w = ConvLstmWeights {
                w_x: v[0],
                w_h: v[1],
                bias: v[2],
            };
            let mut h = g.constant(Tensor::zeros(&[hid, n, n]));
            let mut c = g.constant(Tensor::zeros(&[hid, n, n]));
            for &x in &v[3..] {
                (h, c) = nn::convlstm_cell(g, x, h, c, &w)?;
            }
            Ok(h)
        })
        .unwrap();
        assert!(r.max_rel_error() < 1e-6, "{:?}", r.rel_errors);
    }
}

fn attention_weights(g: &mut Graph<f64>, rng: &mut ChaCha8Rng, d: usize) -> AttentionWeights {
    AttentionWeights {
        qkv_w: g.constant(rand_tensor(rng, &[d, 3 * d])),
        qkv_b: g.constant(rand_tensor(rng, &[3 * d])),
        proj_w: g.constant(rand_tensor(rng, &[d, d])),
        proj_b: g.constant(rand_tensor(rng, &[d])),
    }
}

#[test]
fn attention_rows_sum_to_one_and_single_token_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let w = attention_weights(&mut g, &mut rng, 8);
    let x = g.constant(rand_tensor(&mut rng, &[5, 8]));
    let att = nn::multi_head_attention(&mut g, x, &w, 4).unwrap();
    for &a in &att.weights {
        for r in 0..5 {
            let s: f64 = g.value(a).data()[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
    let one = g.constant(rand_tensor(&mut rng, &[1, 8]));
    let att = nn::multi_head_attention(&mut g, one, &w, 2).unwrap();
    for &a in &att.weights {
        assert_eq!(g.value(a).data(), &[1.0]);
    }
}

#[test]
fn attention_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut g = Graph::new();
    let w = attention_weights(&mut g, &mut rng, 8);
    let x = rand_tensor(&mut rng, &[6, 8]);
    let perm = [3, 0, 5, 1, 4, 2];
    let mut xp = Tensor::zeros(&[6, 8]);
    for (i, &p) in perm.iter().enumerate() {
        for j in 0..8 {
            xp.set(&[i, j], x.get(&[p, j]));
        }
    }
    let xv = g.constant(x);
    let xpv = g.constant(xp);
    let y = nn::multi_head_attention(&mut g, xv, &w, 2).unwrap().out;
    let yp = nn::multi_head_attention(&mut g, xpv, &w, 2).unwrap().out;
    for (i, &p) in perm.iter().enumerate() {
        for j in 0..8 {
            assert!((g.value(yp).get(&[i, j]) - g.value(y).get(&[p, j])).abs() < 1e-12);
        }
    }
}

#[test]
fn patch_embedding_token_count() {
    let mut g = Graph::<f64>::new();
    let chip = g.constant(Tensor::zeros(&[3, 6, 224, 224]));
    let k = g.constant(Tensor::zeros(&[8, 6, 1, 16, 16]));
    let b = g.constant(Tensor::zeros(&[8]));
    let tokens = nn::patch_embed_3d(&mut g, chip, k, b, 16).unwrap();
    let mut expected = 0;
    for _frame in 0..3 {
        for _r in (0..224).step_by(16) {
            for _c in (0..224).step_by(16) {
                expected += 1;
            }
        }
    }
    assert_eq!(expected, 588);
    assert_eq!(g.value(tokens).shape(), &[588, 8]);
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::zeros(&[2]));
    let l = nn::cross_entropy(&mut g, z, 0).unwrap();
    assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-15);

    let map = g.constant(Tensor::zeros(&[2, 3, 3]));
    let err = nn::masked_pixel_cross_entropy(&mut g, map, &[None; 9]).unwrap_err();
    assert!(matches!(err, TensorError::EmptyMask));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let k = rng.gen_range(2..6);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let label = rng.gen_range(0..k);
        let denom: f64 = logits.iter().map(|v| v.exp()).sum();
        let oracle = -(logits[label].exp() / denom).ln();
        let lv = g.constant(Tensor::from_vec(logits));
        let l = nn::cross_entropy(&mut g, lv, label).unwrap();
        let got = g.value(l).item();
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
    }
}

#[test]
fn hinge_is_zero_for_confident_correct_scores() {
    let mut g = Graph::<f64>::new();
    let s = g.constant(Tensor::from_vec(vec![5.0, -7.0]));
    let l = g.hinge(s, &[1.0, -1.0], 1.0).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_matches_loop_oracle(
        c in 1usize..5, f in 1usize..5, h in 3usize..10, w in 3usize..10,
        kh in 1usize..4, kw in 1usize..4, stride in 1usize..3, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[c, h, w]);
        let k = rand_tensor(&mut rng, &[f, c, kh, kw]);
        let pad = [kh / 2, kw / 2];
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv2d(xv, kv, stride, pad).unwrap();
        prop_assert!(max_abs_diff(g.value(y), &conv2d_oracle(&x, &k, stride, pad)) < 1e-10);
    }

    #[test]
    fn conv3d_matches_loop_oracle(
        c in 1usize..4, f in 1usize..4, t in 1usize..6, h in 1usize..8, w in 1usize..8,
        kt in 0usize..2, kh in 0usize..3, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kd = [2 * kt + 1, 2 * kh + 1, 2 * kh + 1];
        let x = rand_tensor(&mut rng, &[c, t, h, w]);
        let k = rand_tensor(&mut rng, &[f, c, kd[0], kd[1], kd[2]]);
        let pad = [kt, kh, kh];
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv3d(xv, kv, pad).unwrap();
        prop_assert_eq!(g.value(y).shape(), &[f, t, h, w]);
        prop_assert!(max_abs_diff(g.value(y), &conv3d_oracle(&x, &k, pad)) < 1e-10);
    }

    #[test]
    fn softmax_sums_to_one(v in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
        let y = forward1(Tensor::from_vec(v), |g, x| g.softmax(x, 0).unwrap());
        prop_assert!((y.sum() - 1.0).abs() < 1e-12);
    }
}
