//! Parameter layouts and forward passes of every architecture.
//!
//! Parameter names:
//! - logreg, svm: `linear.weight [F,1]`, `linear.bias [1]`; svm adds frozen `platt.a`, `platt.b`.
//! - plan_lb: `temporal_encoder.{weight [E,v,n,n], bias}`, `lstm.{w_ih, w_hh, bias}`,
//!   `static_encoder.{weight [E,s,n,n], bias}`, `head.{weight, bias}`.
//! - conv3d: `block{i}.conv1.weight`, `block{i}.ln1.{gamma,beta}`, `block{i}.conv2.weight`,
//!   `block{i}.ln2.{gamma,beta}`, optional `block{i}.proj.weight`, `head.{weight,bias}`.
//! - convlstm: `convlstm.{w_x, w_h, bias}`, `head.{weight,bias}`.
//! - prithvi_lb: `patch_embed.{weight [D,b,1,p,p], bias}`, `pos_embed [N,D]`,
//!   `blocks.{i}.{norm1,norm2}.{gamma,beta}`, `blocks.{i}.attn.{qkv,proj}.{weight,bias}`,
//!   `blocks.{i}.mlp.{fc1,fc2}.{weight,bias}`, `norm.{gamma,beta}`,
//!   `decoder.{i}.{weight [Ci,Co,2,2], bias}`, `head.{weight [2,C,3,3], bias}`.

use rand::Rng;

use super::{Architecture, InputShape, LossContext, ModelConfig, ModelError};
use crate::num::Scalar;
use crate::tensorkit::nn::{self, AttentionWeights, ConvLstmWeights, LstmWeights};
use crate::tensorkit::{BoundParams, Graph, ParamStore, Tensor, Var};

type R = Result<Var, ModelError>;

fn invalid(m: impl Into<String>) -> ModelError {
    ModelError::InvalidConfig(m.into())
}

pub(super) fn validate(cfg: &ModelConfig) -> Result<(), ModelError> {
    let h = &cfg.hyper;
    let family_ok = match cfg.arch {
        Architecture::Logreg | Architecture::Svm => {
            matches!(cfg.input, InputShape::Flat { .. } | InputShape::Point { .. })
        }
        Architecture::PlanLb | Architecture::Conv3d | Architecture::Convlstm => {
            matches!(cfg.input, InputShape::Point { .. })
        }
        Architecture::PrithviLb => matches!(cfg.input, InputShape::Chip { .. }),
    };
    if !family_ok {
        return Err(invalid(format!(
            "{} cannot consume input {:?}",
            cfg.arch.as_str(),
            cfg.input
        )));
    }
    if cfg.input.is_empty() {
        return Err(invalid("empty input"));
    }
    match cfg.arch {
        Architecture::Svm if !(h.svm_c > 0.0) => return Err(invalid("svm_c must be > 0")),
        Architecture::PlanLb if h.embed_dim == 0 || h.lstm_hidden == 0 => {
            return Err(invalid("plan_lb sizes must be positive"))
        }
        Architecture::Conv3d => {
            if h.conv_channels == 0 || h.conv_kernel.iter().any(|k| k % 2 == 0) {
                return Err(invalid("conv3d needs positive channels and odd kernel extents"));
            }
        }
        Architecture::Convlstm => {
            if h.convlstm_hidden == 0 || h.convlstm_kernel % 2 == 0 {
                return Err(invalid("convlstm needs positive hidden size and an odd kernel"));
            }
        }
        Architecture::PrithviLb => {
            let InputShape::Chip { size, .. } = cfg.input else { unreachable!() };
            let p = h.vit_patch;
            if p < 2 || !p.is_power_of_two() || size % p != 0 {
                return Err(invalid(format!(
                    "patch {p} must be a power of two dividing chip size {size}"
                )));
            }
            if h.vit_heads == 0 || h.vit_dim % h.vit_heads != 0 {
                return Err(invalid("vit_dim must be divisible by vit_heads"));
            }
            if h.decoder_channels.is_empty() || h.decoder_channels.contains(&0) {
                return Err(invalid("decoder_channels must be non-empty and positive"));
            }
        }
        _ => {}
    }
    if !(h.layer_norm_eps > 0.0) {
        return Err(invalid("layer_norm_eps must be > 0"));
    }
    Ok(())
}

fn in_channels(cfg: &ModelConfig) -> usize {
    match cfg.input {
        InputShape::Point { v, s, .. } if cfg.hyper.include_static => v + s,
        InputShape::Point { v, .. } => v,
        _ => 0,
    }
}

/// Decoder output channels per upsampling block.
pub(super) fn decoder_channels(cfg: &ModelConfig) -> Vec<usize> {
    let blocks = cfg.hyper.vit_patch.trailing_zeros() as usize;
    let ch = &cfg.hyper.decoder_channels;
    (0..blocks).map(|i| ch[i.min(ch.len() - 1)]).collect()
}

pub(super) fn init<T: Scalar, G: Rng>(cfg: &ModelConfig, ps: &mut ParamStore<T>, rng: &mut G) {
    let h = &cfg.hyper;
    let head = |ps: &mut ParamStore<T>, rng: &mut G, fan_in: usize| {
        ps.insert_he_uniform(rng, "head.weight", &[fan_in, 2], fan_in);
        ps.insert_full("head.bias", &[2], 0.0);
    };
    match (cfg.arch, cfg.input) {
        (Architecture::Logreg | Architecture::Svm, input) => {
            ps.insert_full("linear.weight", &[input.len(), 1], 0.0);
            ps.insert_full("linear.bias", &[1], 0.0);
            if cfg.arch == Architecture::Svm {
                ps.insert("platt.a", Tensor::from_vec(vec![T::one()]), false);
                ps.insert("platt.b", Tensor::from_vec(vec![T::zero()]), false);
            }
        }
        (Architecture::PlanLb, InputShape::Point { n, v, s, .. }) => {
            let (e, hid) = (h.embed_dim, h.lstm_hidden);
            ps.insert_he_uniform(rng, "temporal_encoder.weight", &[e, v, n, n], v * n * n);
            ps.insert_full("temporal_encoder.bias", &[e], 0.0);
            ps.insert_he_uniform(rng, "lstm.w_ih", &[e, 4 * hid], e);
            ps.insert_he_uniform(rng, "lstm.w_hh", &[hid, 4 * hid], hid);
            let mut bias = Tensor::zeros(&[4 * hid]);
            // forget gate starts open
            for j in hid..2 * hid {
                bias.data_mut()[j] = T::one();
            }
            ps.insert("lstm.bias", bias, true);
            ps.insert_he_uniform(rng, "static_encoder.weight", &[e, s, n, n], s * n * n);
            ps.insert_full("static_encoder.bias", &[e], 0.0);
            head(ps, rng, hid + e);
        }
        (Architecture::Conv3d, InputShape::Point { .. }) => {
            let [kt, kh, kw] = h.conv_kernel;
            let c = h.conv_channels;
            let mut cin = in_channels(cfg);
            for i in 0..2 {
                let pre = format!("block{i}");
                ps.insert_he_uniform(rng, format!("{pre}.conv1.weight"), &[c, cin, kt, kh, kw], cin * kt * kh * kw);
                ps.insert_full(format!("{pre}.ln1.gamma"), &[c], 1.0);
                ps.insert_full(format!("{pre}.ln1.beta"), &[c], 0.0);
                ps.insert_he_uniform(rng, format!("{pre}.conv2.weight"), &[c, c, kt, kh, kw], c * kt * kh * kw);
                ps.insert_full(format!("{pre}.ln2.gamma"), &[c], 1.0);
                ps.insert_full(format!("{pre}.ln2.beta"), &[c], 0.0);
                if cin != c {
                    ps.insert_he_uniform(rng, format!("{pre}.proj.weight"), &[c, cin, 1, 1, 1], cin);
                }
                cin = c;
            }
            head(ps, rng, c);
        }
        (Architecture::Convlstm, InputShape::Point { .. }) => {
            let (hid, k, cin) = (h.convlstm_hidden, h.convlstm_kernel, in_channels(cfg));
            ps.insert_he_uniform(rng, "convlstm.w_x", &[4 * hid, cin, k, k], cin * k * k);
            ps.insert_he_uniform(rng, "convlstm.w_h", &[4 * hid, hid, k, k], hid * k * k);
            let mut bias = Tensor::zeros(&[4 * hid]);
            for j in hid..2 * hid {
                bias.data_mut()[j] = T::one();
            }
            ps.insert("convlstm.bias", bias, true);
            head(ps, rng, hid);
        }
        (Architecture::PrithviLb, InputShape::Chip { t, b, size }) => {
            let (p, d) = (h.vit_patch, h.vit_dim);
            let tokens = t * (size / p) * (size / p);
            ps.insert_he_uniform(rng, "patch_embed.weight", &[d, b, 1, p, p], b * p * p);
            ps.insert_full("patch_embed.bias", &[d], 0.0);
            let pos = Tensor::from_fn(&[tokens, d], |_| T::of(rng.gen_range(-0.02..0.02)));
            ps.insert("pos_embed", pos, true);
            let m = h.vit_mlp_ratio * d;
            for i in 0..h.vit_depth {
                let pre = format!("blocks.{i}");
                for norm in ["norm1", "norm2"] {
                    ps.insert_full(format!("{pre}.{norm}.gamma"), &[d], 1.0);
                    ps.insert_full(format!("{pre}.{norm}.beta"), &[d], 0.0);
                }
                ps.insert_he_uniform(rng, format!("{pre}.attn.qkv.weight"), &[d, 3 * d], d);
                ps.insert_full(format!("{pre}.attn.qkv.bias"), &[3 * d], 0.0);
                ps.insert_he_uniform(rng, format!("{pre}.attn.proj.weight"), &[d, d], d);
                ps.insert_full(format!("{pre}.attn.proj.bias"), &[d], 0.0);
                ps.insert_he_uniform(rng, format!("{pre}.mlp.fc1.weight"), &[d, m], d);
                ps.insert_full(format!("{pre}.mlp.fc1.bias"), &[m], 0.0);
                ps.insert_he_uniform(rng, format!("{pre}.mlp.fc2.weight"), &[m, d], m);
                ps.insert_full(format!("{pre}.mlp.fc2.bias"), &[d], 0.0);
            }
            ps.insert_full("norm.gamma", &[d], 1.0);
            ps.insert_full("norm.beta", &[d], 0.0);
            let mut cin = d;
            for (i, co) in decoder_channels(cfg).into_iter().enumerate() {
                ps.insert_he_uniform(rng, format!("decoder.{i}.weight"), &[cin, co, 2, 2], cin);
                ps.insert_full(format!("decoder.{i}.bias"), &[co], 0.0);
                cin = co;
            }
            ps.insert_he_uniform(rng, "head.weight", &[2, cin, 3, 3], cin * 9);
            ps.insert_full("head.bias", &[2], 0.0);
        }
        _ => unreachable!("validated"),
    }
}

fn head<T: Scalar>(g: &mut Graph<T>, p: &BoundParams<T>, feat: Var) -> R {
    let n = g.shape(feat).iter().product::<usize>();
    let row = g.reshape(feat, &[1, n])?;
    let z = nn::linear(g, row, p.var("head.weight")?, p.var("head.bias")?)?;
    Ok(g.reshape(z, &[2])?)
}

/// Flattened window encoder: an `n x n` valid convolution with kernel
/// `[E, c, n, n]` applied to rows laid out `[n][n][c]`.
fn window_encoder<T: Scalar>(g: &mut Graph<T>, rows: Var, kernel: Var, bias: Var) -> R {
    let ks = g.shape(kernel).to_vec();
    let k = g.permute(kernel, &[2, 3, 1, 0])?;
    let k = g.reshape(k, &[ks[2] * ks[3] * ks[1], ks[0]])?;
    let y = nn::linear(g, rows, k, bias)?;
    Ok(g.relu(y))
}

/// Splits a point input into temporal `[T,n,n,v]` and static `[n,n,s]` nodes.
fn split_point<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, x: Var) -> Result<(Var, Var), ModelError> {
    let InputShape::Point { t, n, v, s } = cfg.input else {
        return Err(invalid("point input expected"));
    };
    let flat = g.reshape(x, &[cfg.input.len()])?;
    let nt = t * n * n * v;
    let tb = g.slice(flat, 0, 0, nt)?;
    let tb = g.reshape(tb, &[t, n, n, v])?;
    let sb = g.slice(flat, 0, nt, nt + n * n * s)?;
    let sb = g.reshape(sb, &[n, n, s])?;
    Ok((tb, sb))
}

fn linear_score<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, p: &BoundParams<T>, x: Var) -> R {
    let row = g.reshape(x, &[1, cfg.input.len()])?;
    let z = nn::linear(g, row, p.var("linear.weight")?, p.var("linear.bias")?)?;
    let zero = g.constant(Tensor::zeros(&[1, 1]));
    let both = g.concat(&[zero, z], 1)?;
    Ok(g.reshape(both, &[2])?)
}

fn plan_lb<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, p: &BoundParams<T>, x: Var) -> R {
    let InputShape::Point { t, n, v, s } = cfg.input else { unreachable!() };
    let hid = cfg.hyper.lstm_hidden;
    let (tb, sb) = split_point(g, cfg, x)?;
    let rows = g.reshape(tb, &[t, n * n * v])?;
    let enc = window_encoder(g, rows, p.var("temporal_encoder.weight")?, p.var("temporal_encoder.bias")?)?;
    let w = LstmWeights {
        w_ih: p.var("lstm.w_ih")?,
        w_hh: p.var("lstm.w_hh")?,
        bias: p.var("lstm.bias")?,
    };
    let mut h = g.constant(Tensor::zeros(&[1, hid]));
    let mut c = g.constant(Tensor::zeros(&[1, hid]));
    for step in 0..t {
        let xt = g.slice(enc, 0, step, step + 1)?;
        (h, c) = nn::lstm_cell(g, xt, h, c, &w)?;
    }
    let srow = g.reshape(sb, &[1, n * n * s])?;
    let se = window_encoder(g, srow, p.var("static_encoder.weight")?, p.var("static_encoder.bias")?)?;
    let joint = g.concat(&[h, se], 1)?;
    head(g, p, joint)
}

/// `[C, T, n, n]` stack of temporal variables, plus static planes repeated over time if enabled.
fn spatiotemporal<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, x: Var) -> R {
    let InputShape::Point { t, n, s, .. } = cfg.input else { unreachable!() };
    let (tb, sb) = split_point(g, cfg, x)?;
    let temporal = g.permute(tb, &[3, 0, 1, 2])?;
    if !cfg.hyper.include_static {
        return Ok(temporal);
    }
    let planes = g.permute(sb, &[2, 0, 1])?;
    let planes = g.reshape(planes, &[s, 1, n, n])?;
    let repeated = g.concat(&vec![planes; t], 1)?;
    Ok(g.concat(&[temporal, repeated], 0)?)
}

fn residual_block<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, p: &BoundParams<T>, x: Var, i: usize) -> R {
    let [kt, kh, kw] = cfg.hyper.conv_kernel;
    let pad = [kt / 2, kh / 2, kw / 2];
    let eps = T::of(cfg.hyper.layer_norm_eps);
    let pre = format!("block{i}");
    let v = |name: &str| p.var(&format!("{pre}.{name}"));
    let y = g.conv3d(x, v("conv1.weight")?, pad)?;
    let y = nn::layer_norm_affine(g, y, 0, v("ln1.gamma")?, v("ln1.beta")?, eps)?;
    let y = g.relu(y);
    let y = g.conv3d(y, v("conv2.weight")?, pad)?;
    let y = nn::layer_norm_affine(g, y, 0, v("ln2.gamma")?, v("ln2.beta")?, eps)?;
    let skip = match v("proj.weight") {
        Ok(k) => g.conv3d(x, k, [0, 0, 0])?,
        Err(_) => x,
    };
    let sum = g.add(y, skip)?;
    Ok(g.relu(sum))
}

fn conv3d_net<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, p: &BoundParams<T>, x: Var) -> R {
    let mut h = spatiotemporal(g, cfg, x)?;
    for i in 0..2 {
        h = residual_block(g, cfg, p, h, i)?;
    }
    let pooled = g.mean(h, &[1, 2, 3])?;
    head(g, p, pooled)
}

fn convlstm_net<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, p: &BoundParams<T>, x: Var) -> R {
    let InputShape::Point { t, n, .. } = cfg.input else { unreachable!() };
    let hid = cfg.hyper.convlstm_hidden;
    let seq = spatiotemporal(g, cfg, x)?;
    let c_in = g.shape(seq)[0];
    let w = ConvLstmWeights {
        w_x: p.var("convlstm.w_x")?,
        w_h: p.var("convlstm.w_h")?,
        bias: p.var("convlstm.bias")?,
    };
    let mut h = g.constant(Tensor::zeros(&[hid, n, n]));
    let mut c = g.constant(Tensor::zeros(&[hid, n, n]));
    for step in 0..t {
        let xt = g.slice(seq, 1, step, step + 1)?;
        let xt = g.reshape(xt, &[c_in, n, n])?;
        (h, c) = nn::convlstm_cell(g, xt, h, c, &w)?;
    }
    let a = g.relu(h);
    let pooled = g.mean(a, &[1, 2])?;
    head(g, p, pooled)
}

fn prithvi<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, p: &BoundParams<T>, x: Var) -> R {
    let InputShape::Chip { t, b, size } = cfg.input else { unreachable!() };
    let hy = &cfg.hyper;
    let (patch, d) = (hy.vit_patch, hy.vit_dim);
    let grid = size / patch;
    let eps = T::of(hy.layer_norm_eps);
    let chip = g.reshape(x, &[t, b, size, size])?;
    let tok = nn::patch_embed_3d(g, chip, p.var("patch_embed.weight")?, p.var("patch_embed.bias")?, patch)?;
    let mut z = g.add(tok, p.var("pos_embed")?)?;
    for i in 0..hy.vit_depth {
        let v = |name: &str| p.var(&format!("blocks.{i}.{name}"));
        let y = nn::layer_norm_affine(g, z, 1, v("norm1.gamma")?, v("norm1.beta")?, eps)?;
        let w = AttentionWeights {
            qkv_w: v("attn.qkv.weight")?,
            qkv_b: v("attn.qkv.bias")?,
            proj_w: v("attn.proj.weight")?,
            proj_b: v("attn.proj.bias")?,
        };
        let att = nn::multi_head_attention(g, y, &w, hy.vit_heads)?;
        z = g.add(z, att.out)?;
        let y = nn::layer_norm_affine(g, z, 1, v("norm2.gamma")?, v("norm2.beta")?, eps)?;
        let y = nn::linear(g, y, v("mlp.fc1.weight")?, v("mlp.fc1.bias")?)?;
        let y = g.gelu(y);
        let y = nn::linear(g, y, v("mlp.fc2.weight")?, v("mlp.fc2.bias")?)?;
        z = g.add(z, y)?;
    }
    let z = nn::layer_norm_affine(g, z, 1, p.var("norm.gamma")?, p.var("norm.beta")?, eps)?;
    let frames = g.reshape(z, &[t, grid * grid, d])?;
    let fused = g.mean(frames, &[0])?;
    let fused = g.reshape(fused, &[grid, grid, d])?;
    let mut m = g.permute(fused, &[2, 0, 1])?;
    for i in 0..decoder_channels(cfg).len() {
        m = g.conv_transpose2d(m, p.var(&format!("decoder.{i}.weight"))?, 2)?;
        m = g.add_axis(m, p.var(&format!("decoder.{i}.bias"))?, 0)?;
        m = g.relu(m);
    }
    let out = g.conv2d(m, p.var("head.weight")?, 1, [1, 1])?;
    Ok(g.add_axis(out, p.var("head.bias")?, 0)?)
}

pub(super) fn logits<T: Scalar>(cfg: &ModelConfig, g: &mut Graph<T>, p: &BoundParams<T>, x: Var) -> R {
    match cfg.arch {
        Architecture::Logreg | Architecture::Svm => linear_score(g, cfg, p, x),
        Architecture::PlanLb => plan_lb(g, cfg, p, x),
        Architecture::Conv3d => conv3d_net(g, cfg, p, x),
        Architecture::Convlstm => convlstm_net(g, cfg, p, x),
        Architecture::PrithviLb => prithvi(g, cfg, p, x),
    }
}

/// `[1 - q, q]` with `q = sigmoid(a * margin + b)`.
pub(super) fn platt_probabilities<T: Scalar>(g: &mut Graph<T>, p: &BoundParams<T>, z: Var) -> R {
    let margin = g.slice(z, 0, 1, 2)?;
    let scaled = g.mul(margin, p.var("platt.a")?)?;
    let shifted = g.add(scaled, p.var("platt.b")?)?;
    let q = g.sigmoid(shifted);
    let neg = g.scale(q, -T::one());
    let q0 = g.add_scalar(neg, T::one());
    Ok(g.concat(&[q0, q], 0)?)
}

/// Hinge loss on the margin plus `|w|^2 / (2 C N)`.
pub(super) fn svm_loss<T: Scalar>(
    cfg: &ModelConfig,
    g: &mut Graph<T>,
    p: &BoundParams<T>,
    z: Var,
    label: usize,
    ctx: LossContext,
) -> R {
    let margin = g.slice(z, 0, 1, 2)?;
    let y = if label == 1 { T::one() } else { -T::one() };
    let hinge = g.hinge(margin, &[y], T::one())?;
    let w = p.var("linear.weight")?;
    let sq = g.mul(w, w)?;
    let norm = g.sum_all(sq);
    let lambda = 1.0 / (2.0 * cfg.hyper.svm_c * ctx.n_train.max(1) as f64);
    let reg = g.scale(norm, T::of(lambda));
    Ok(g.add(hinge, reg)?)
}
