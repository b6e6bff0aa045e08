//! Layer building blocks composed from graph operations.

use crate::num::Scalar;

use super::{Graph, TensorError, Var};

type R = Result<Var, TensorError>;

/// `x W + b` for `x: [N, in]`, `W: [in, out]`, `b: [out]`.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> R {
    let y = g.matmul(x, w)?;
    g.add_axis(y, b, 1)
}

/// Layer normalisation over one axis followed by a per-element affine map along that axis.
pub fn layer_norm_affine<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    axis: usize,
    gamma: Var,
    beta: Var,
    eps: T,
) -> R {
    let n = g.layer_norm(x, &[axis], eps)?;
    let s = g.mul_axis(n, gamma, axis)?;
    g.add_axis(s, beta, axis)
}

/// "same" padding for an odd kernel extent.
pub fn same_pad(k: usize) -> usize {
    k / 2
}

#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[in, 4H]`, gate blocks ordered input, forget, cell, output.
    pub w_ih: Var,
    /// `[H, 4H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

fn gates<T: Scalar>(g: &mut Graph<T>, pre: Var, axis: usize, hidden: usize) -> Result<[Var; 4], TensorError> {
    let i = g.slice(pre, axis, 0, hidden)?;
    let f = g.slice(pre, axis, hidden, 2 * hidden)?;
    let c = g.slice(pre, axis, 2 * hidden, 3 * hidden)?;
    let o = g.slice(pre, axis, 3 * hidden, 4 * hidden)?;
    Ok([g.sigmoid(i), g.sigmoid(f), g.tanh(c), g.sigmoid(o)])
}

fn cell_update<T: Scalar>(
    g: &mut Graph<T>,
    [i, f, cand, o]: [Var; 4],
    c_prev: Var,
) -> Result<(Var, Var), TensorError> {
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// One LSTM step on row vectors `x: [1, in]`, `h, c: [1, H]`. Returns `(h_t, c_t)`.
pub fn lstm_cell<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    h: Var,
    c: Var,
    w: &LstmWeights,
) -> Result<(Var, Var), TensorError> {
    let hidden = g.shape(h)[1];
    let xi = g.matmul(x, w.w_ih)?;
    let hh = g.matmul(h, w.w_hh)?;
    let pre = g.add(xi, hh)?;
    let pre = g.add_axis(pre, w.bias, 1)?;
    let gs = gates(g, pre, 1, hidden)?;
    cell_update(g, gs, c)
}

#[derive(Clone, Copy, Debug)]
pub struct ConvLstmWeights {
    /// `[4H, C, k, k]`
    pub w_x: Var,
    /// `[4H, H, k, k]`
    pub w_h: Var,
    /// `[4H]`
    pub bias: Var,
}

/// One ConvLSTM step: both transitions are "same"-padded convolutions.
/// `x: [C, n, n]`, `h, c: [H, n, n]`.
pub fn convlstm_cell<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    h: Var,
    c: Var,
    w: &ConvLstmWeights,
) -> Result<(Var, Var), TensorError> {
    let hidden = g.shape(h)[0];
    let k = g.shape(w.w_x)[2];
    let p = same_pad(k);
    let xi = g.conv2d(x, w.w_x, 1, [p, p])?;
    let hh = g.conv2d(h, w.w_h, 1, [p, p])?;
    let pre = g.add(xi, hh)?;
    let pre = g.add_axis(pre, w.bias, 0)?;
    let gs = gates(g, pre, 0, hidden)?;
    cell_update(g, gs, c)
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    /// `[D, 3D]`: query, key and value projections side by side.
    pub qkv_w: Var,
    pub qkv_b: Var,
    /// `[D, D]`
    pub proj_w: Var,
    pub proj_b: Var,
}

pub struct Attention {
    pub out: Var,
    /// Per-head `[N, N]` attention weights; each row sums to one.
    pub weights: Vec<Var>,
}

/// Scaled dot-product self-attention over `x: [N, D]` with `heads` heads.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    w: &AttentionWeights,
    heads: usize,
) -> Result<Attention, TensorError> {
    let d = g.shape(x)[1];
    if heads == 0 || d % heads != 0 {
        return Err(TensorError::InvalidShape(format!(
            "embedding dim {d} not divisible into {heads} heads"
        )));
    }
    let dh = d / heads;
    let qkv = linear(g, x, w.qkv_w, w.qkv_b)?;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for hd in 0..heads {
        let q = g.slice(qkv, 1, hd * dh, (hd + 1) * dh)?;
        let k = g.slice(qkv, 1, d + hd * dh, d + (hd + 1) * dh)?;
        let v = g.slice(qkv, 1, 2 * d + hd * dh, 2 * d + (hd + 1) * dh)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, scale);
        let a = g.softmax(scores, 1)?;
        outs.push(g.matmul(a, v)?);
        weights.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    let out = linear(g, cat, w.proj_w, w.proj_b)?;
    Ok(Attention { out, weights })
}

/// Tubelet-1 patch embedding of `chip: [t, b, H, W]` with a kernel stored as
/// `[D, b, 1, p, p]` (a stride-`p` 3-D convolution). Returns tokens `[t·(H/p)·(W/p), D]`
/// ordered frame-major, then patch row, then patch column.
pub fn patch_embed_3d<T: Scalar>(
    g: &mut Graph<T>,
    chip: Var,
    kernel: Var,
    bias: Var,
    patch: usize,
) -> R {
    let cs = g.shape(chip).to_vec();
    let ks = g.shape(kernel).to_vec();
    if cs.len() != 4
        || ks.len() != 5
        || ks[1] != cs[1]
        || ks[2] != 1
        || ks[3] != patch
        || ks[4] != patch
        || patch == 0
        || cs[2] % patch != 0
        || cs[3] % patch != 0
    {
        return Err(TensorError::ShapeMismatch {
            op: "patch_embed_3d",
            left: cs,
            right: ks,
        });
    }
    let (t, b, hp, wp) = (cs[0], cs[1], cs[2] / patch, cs[3] / patch);
    let x = g.reshape(chip, &[t, b, hp, patch, wp, patch])?;
    let x = g.permute(x, &[0, 2, 4, 1, 3, 5])?;
    let x = g.reshape(x, &[t * hp * wp, b * patch * patch])?;
    let k = g.reshape(kernel, &[ks[0], b * patch * patch])?;
    let k = g.transpose(k)?;
    linear(g, x, k, bias)
}

/// Cross-entropy of a single logit vector `[K]` against `label`.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: Var, label: usize) -> R {
    let k = g.shape(logits).iter().product::<usize>();
    let row = g.reshape(logits, &[1, k])?;
    g.softmax_cross_entropy(row, &[Some(label)])
}

/// Per-pixel cross-entropy of `map: [K, H, W]` averaged over pixels whose mask entry is set.
pub fn masked_pixel_cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    map: Var,
    mask: &[Option<usize>],
) -> R {
    let s = g.shape(map).to_vec();
    if s.len() != 3 || s[1] * s[2] != mask.len() {
        return Err(TensorError::ShapeMismatch {
            op: "masked_pixel_cross_entropy",
            left: s,
            right: vec![mask.len()],
        });
    }
    let x = g.permute(map, &[1, 2, 0])?;
    let x = g.reshape(x, &[s[1] * s[2], s[0]])?;
    g.softmax_cross_entropy(x, mask)
}
