//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, TensorError, Var};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Relative error `|analytic - numeric| / max(|analytic|, |numeric|)` per input (2-norms).
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares analytic gradients of `f` against central differences with step `h`.
///
/// Non-scalar outputs are reduced to `sum(out * r)` with a fixed random `r`
/// drawn from `seed`, so every output element contributes.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, seed: u64, f: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).shape().to_vec()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj = Tensor::from_fn(&probe, |_| rng.gen_range(-1.0..1.0));

    let eval = |xs: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).dot(&proj))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let p = g.constant(proj.clone());
    let weighted = g.mul(out, p)?;
    let loss = g.sum_all(weighted);
    let grads = g.backward(loss);

    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut xs = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut numeric = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = orig - h;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            numeric.data_mut()[j] = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.norm().max(numeric.norm());
        rel_errors.push(if scale < 1e-14 { diff } else { diff / scale });
    }
    Ok(GradCheck { rel_errors })
}

type Build = fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>;

/// A named differentiable operation with an input generator, used to sweep
/// every op through [`check`].
pub struct GradCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    /// Inputs are drawn from `U(lo, hi)`.
    pub range: (f64, f64),
    pub build: Build,
}

fn case(name: &'static str, shapes: &[&[usize]], build: Build) -> GradCase {
    GradCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        range: (-1.0, 1.0),
        build,
    }
}

impl GradCase {
    pub fn inputs(&self, seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = self.range;
        self.shapes
            .iter()
            .map(|s| Tensor::from_fn(s, |_| rng.gen_range(lo..hi)))
            .collect()
    }

    pub fn run(&self, seed: u64, h: f64) -> Result<GradCheck, TensorError> {
        check(&self.inputs(seed), h, seed ^ 0x5eed, self.build)
    }
}

/// Every differentiable graph operation and layer helper.
pub fn standard_cases() -> Vec<GradCase> {
    use super::nn;
    let mut cases = vec![
        case("add", &[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1])),
        case("sub", &[&[3, 4], &[3, 4]], |g, v| g.sub(v[0], v[1])),
        case("mul", &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1])),
        case("scale", &[&[5]], |g, v| Ok(g.scale(v[0], -1.7))),
        case("add_scalar", &[&[5]], |g, v| Ok(g.add_scalar(v[0], 0.3))),
        case("relu", &[&[4, 5]], |g, v| Ok(g.relu(v[0]))),
        case("sigmoid", &[&[4, 5]], |g, v| Ok(g.sigmoid(v[0]))),
        case("tanh", &[&[4, 5]], |g, v| Ok(g.tanh(v[0]))),
        case("exp", &[&[4, 5]], |g, v| Ok(g.exp(v[0]))),
        case("gelu", &[&[4, 5]], |g, v| Ok(g.gelu(v[0]))),
        case("add_axis", &[&[2, 3, 4], &[3]], |g, v| g.add_axis(v[0], v[1], 1)),
        case("mul_axis", &[&[2, 3, 4], &[4]], |g, v| g.mul_axis(v[0], v[1], 2)),
        case("matmul", &[&[3, 4], &[4, 2]], |g, v| g.matmul(v[0], v[1])),
        case("softmax_axis0", &[&[3, 4]], |g, v| g.softmax(v[0], 0)),
        case("softmax_axis1", &[&[2, 3, 4]], |g, v| g.softmax(v[0], 1)),
        case("layer_norm_last", &[&[3, 5]], |g, v| g.layer_norm(v[0], &[1], 1e-5)),
        case("layer_norm_channel", &[&[4, 2, 3]], |g, v| {
            g.layer_norm(v[0], &[0], 1e-5)
        }),
        case("layer_norm_all", &[&[2, 3, 2]], |g, v| {
            g.layer_norm(v[0], &[0, 1, 2], 1e-5)
        }),
        case("mean", &[&[2, 3, 4]], |g, v| g.mean(v[0], &[1, 2])),
        case("sum_all", &[&[2, 3]], |g, v| Ok(g.sum_all(v[0]))),
        case("reshape", &[&[2, 6]], |g, v| g.reshape(v[0], &[3, 4])),
        case("permute", &[&[2, 3, 4]], |g, v| g.permute(v[0], &[2, 0, 1])),
        case("concat", &[&[2, 3], &[2, 2]], |g, v| g.concat(&[v[0], v[1], v[0]], 1)),
        case("slice", &[&[3, 5]], |g, v| g.slice(v[0], 1, 1, 4)),
        case("conv2d_same", &[&[2, 5, 5], &[3, 2, 3, 3]], |g, v| {
            g.conv2d(v[0], v[1], 1, [1, 1])
        }),
        case("conv2d_stride2", &[&[2, 6, 5], &[2, 2, 2, 3]], |g, v| {
            g.conv2d(v[0], v[1], 2, [0, 1])
        }),
        case("conv3d_same", &[&[2, 4, 3, 3], &[2, 2, 3, 3, 3]], |g, v| {
            g.conv3d(v[0], v[1], [1, 1, 1])
        }),
        case("conv_transpose2d", &[&[2, 3, 3], &[2, 3, 2, 2]], |g, v| {
            g.conv_transpose2d(v[0], v[1], 2)
        }),
        case("softmax_cross_entropy", &[&[4, 3]], |g, v| {
            g.softmax_cross_entropy(v[0], &[Some(0), None, Some(2), Some(1)])
        }),
        case("hinge", &[&[6]], |g, v| {
            g.hinge(v[0], &[1.0, -1.0, 1.0, 1.0, -1.0, -1.0], 1.0)
        }),
        case("lstm_cell", &[&[1, 3], &[1, 2], &[1, 2], &[3, 8], &[2, 8], &[8]], |g, v| {
            let w = nn::LstmWeights {
                w_ih: v[3],
                w_hh: v[4],
                bias: v[5],
            };
            let (h, c) = nn::lstm_cell(g, v[0], v[1], v[2], &w)?;
            g.concat(&[h, c], 1)
        }),
        case(
            "convlstm_cell",
            &[&[2, 3, 3], &[2, 3, 3], &[2, 3, 3], &[8, 2, 3, 3], &[8, 2, 3, 3], &[8]],
            |g, v| {
                let w = nn::ConvLstmWeights {
                    w_x: v[3],
                    w_h: v[4],
                    bias: v[5],
                };
                let (h, c) = nn::convlstm_cell(g, v[0], v[1], v[2], &w)?;
                g.concat(&[h, c], 0)
            },
        ),
        case(
            "multi_head_attention",
            &[&[3, 4], &[4, 12], &[12], &[4, 4], &[4]],
            |g, v| {
                let w = nn::AttentionWeights {
                    qkv_w: v[1],
                    qkv_b: v[2],
                    proj_w: v[3],
                    proj_b: v[4],
                };
                Ok(nn::multi_head_attention(g, v[0], &w, 2)?.out)
            },
        ),
        case("patch_embed_3d", &[&[2, 2, 4, 4], &[3, 2, 1, 2, 2], &[3]], |g, v| {
            nn::patch_embed_3d(g, v[0], v[1], v[2], 2)
        }),
        case("masked_pixel_cross_entropy", &[&[2, 2, 3]], |g, v| {
            nn::masked_pixel_cross_entropy(g, v[0], &[Some(1), None, Some(0), None, None, Some(1)])
        }),
    ];
    let mut log = case("log", &[&[4, 5]], |g, v| Ok(g.log(v[0])));
    log.range = (0.5, 2.0);
    cases.push(log);
    cases
}
