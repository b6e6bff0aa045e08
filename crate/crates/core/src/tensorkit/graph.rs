//! Operation trace and reverse-mode differentiation.
//!
//! Every operation appends one node holding its forward value. Nodes are
//! created after their inputs, so the node order is a topological order and
//! `backward` only has to walk it in reverse once.

use crate::num::Scalar;

use super::conv::{self, Conv2dGeom, Conv3dGeom, ConvT2dGeom};
use super::tensor::{axis_groups, split_at_axis, Tensor};
use super::TensorError;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Gelu(Var),
    AddAxis {
        x: Var,
        v: Var,
        axis: usize,
    },
    MulAxis {
        x: Var,
        v: Var,
        axis: usize,
    },
    MatMul(Var, Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        group_of: Vec<usize>,
        group_size: usize,
        rstd: Vec<T>,
    },
    Mean {
        x: Var,
        group_of: Vec<usize>,
        group_size: usize,
    },
    SumAll(Var),
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Conv2d {
        x: Var,
        k: Var,
        geom: Conv2dGeom,
    },
    Conv3d {
        x: Var,
        k: Var,
        geom: Conv3dGeom,
    },
    ConvTranspose2d {
        x: Var,
        k: Var,
        geom: ConvT2dGeom,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
    Hinge {
        scores: Var,
        labels: Vec<T>,
        margin: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single-threaded operation trace. Build one per forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf input. Gradients are only tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(name, va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(&[x]);
        self.push(out, Op::AddScalar(x), rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (c, a) = (T::of(GELU_C), T::of(GELU_A));
        let half = T::of(0.5);
        self.unary(
            x,
            move |v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()),
            Op::Gelu(x),
        )
    }

    fn axis_vector_check(
        &self,
        name: &'static str,
        x: Var,
        v: Var,
        axis: usize,
    ) -> Result<(usize, usize, usize), TensorError> {
        let xs = self.shape(x);
        let vs = self.shape(v);
        if axis >= xs.len() {
            return Err(TensorError::InvalidAxis(format!(
                "{name}: axis {axis} for shape {xs:?}"
            )));
        }
        if vs != [xs[axis]] {
            return Err(mismatch(name, xs, vs));
        }
        Ok(split_at_axis(xs, axis))
    }

    /// `x + v` with the 1-D `v` broadcast along `axis`.
    pub fn add_axis(&mut self, x: Var, v: Var, axis: usize) -> Result<Var, TensorError> {
        let (outer, len, inner) = self.axis_vector_check("add_axis", x, v, axis)?;
        let mut out = self.value(x).clone();
        let vv = self.value(v).data().to_vec();
        let d = out.data_mut();
        for o in 0..outer {
            for (a, &b) in vv.iter().enumerate().take(len) {
                let base = (o * len + a) * inner;
                for e in &mut d[base..base + inner] {
                    *e += b;
                }
            }
        }
        let rg = self.rg(&[x, v]);
        Ok(self.push(out, Op::AddAxis { x, v, axis }, rg))
    }

    /// `x * v` with the 1-D `v` broadcast along `axis`.
    pub fn mul_axis(&mut self, x: Var, v: Var, axis: usize) -> Result<Var, TensorError> {
        let (outer, len, inner) = self.axis_vector_check("mul_axis", x, v, axis)?;
        let mut out = self.value(x).clone();
        let vv = self.value(v).data().to_vec();
        let d = out.data_mut();
        for o in 0..outer {
            for (a, &b) in vv.iter().enumerate().take(len) {
                let base = (o * len + a) * inner;
                for e in &mut d[base..base + inner] {
                    *e *= b;
                }
            }
        }
        let rg = self.rg(&[x, v]);
        Ok(self.push(out, Op::MulAxis { x, v, axis }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis(format!(
                "softmax: axis {axis} for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_at_axis(&shape, axis);
        let mut out = self.value(x).clone();
        let d = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let mut mx = T::neg_infinity();
                for a in 0..len {
                    mx = mx.max(d[at(a)]);
                }
                let mut s = T::zero();
                for a in 0..len {
                    let e = (d[at(a)] - mx).exp();
                    d[at(a)] = e;
                    s += e;
                }
                for a in 0..len {
                    d[at(a)] /= s;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    /// Normalizes to zero mean and unit variance over `axes` (no affine part).
    pub fn layer_norm(&mut self, x: Var, axes: &[usize], eps: T) -> Result<Var, TensorError> {
        let (group_of, n_groups, group_size, _) = axis_groups(self.shape(x), axes)?;
        let xv = self.value(x);
        let inv_n = T::one() / T::of(group_size as f64);
        let mut mean = vec![T::zero(); n_groups];
        for (&g, &v) in group_of.iter().zip(xv.data()) {
            mean[g] += v;
        }
        mean.iter_mut().for_each(|m| *m *= inv_n);
        let mut var = vec![T::zero(); n_groups];
        for (&g, &v) in group_of.iter().zip(xv.data()) {
            let d = v - mean[g];
            var[g] += d * d;
        }
        let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v * inv_n + eps).sqrt()).collect();
        let data = group_of
            .iter()
            .zip(xv.data())
            .map(|(&g, &v)| (v - mean[g]) * rstd[g])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                group_of,
                group_size,
                rstd,
            },
            rg,
        ))
    }

    /// Mean over `axes`; the reduced axes are removed from the shape.
    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let (group_of, n_groups, group_size, kept) = axis_groups(self.shape(x), axes)?;
        let mut data = vec![T::zero(); n_groups];
        for (&g, &v) in group_of.iter().zip(self.value(x).data()) {
            data[g] += v;
        }
        let inv = T::one() / T::of(group_size as f64);
        data.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::new(kept, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::Mean {
                x,
                group_of,
                group_size,
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::SumAll(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(x).permute(perm)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        self.permute(x, &[1, 0])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self
            .value(*xs.first().ok_or_else(|| {
                TensorError::InvalidShape("concat of zero tensors".to_string())
            })?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::InvalidAxis(format!(
                "concat: axis {axis} for shape {first:?}"
            )));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let same = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis];
                let chunk = len * inner;
                data.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(xs);
        Ok(self.push(
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(TensorError::InvalidAxis(format!(
                "slice {start}..{end} on axis {axis} of shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_at_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Slice { x, axis, start }, rg))
    }

    /// 2-D cross-correlation of `x: [C,H,W]` with `k: [F,C,kh,kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        stride: usize,
        pad: [usize; 2],
    ) -> Result<Var, TensorError> {
        let (xs, ks) = (self.shape(x), self.shape(k));
        if xs.len() != 3 || ks.len() != 4 || xs[0] != ks[1] {
            return Err(mismatch("conv2d", xs, ks));
        }
        let ho = conv::conv_out_len(xs[1], ks[2], pad[0], stride);
        let wo = conv::conv_out_len(xs[2], ks[3], pad[1], stride);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(mismatch("conv2d", xs, ks));
        };
        let geom = Conv2dGeom {
            c: xs[0],
            h: xs[1],
            w: xs[2],
            f: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad,
            ho,
            wo,
        };
        let data = conv::conv2d_forward(&geom, self.value(x).data(), self.value(k).data());
        let out = Tensor::new(vec![geom.f, ho, wo], data)?;
        let rg = self.rg(&[x, k]);
        Ok(self.push(out, Op::Conv2d { x, k, geom }, rg))
    }

    /// Stride-1 3-D cross-correlation of `x: [C,T,H,W]` with `k: [F,C,kt,kh,kw]`.
    pub fn conv3d(&mut self, x: Var, k: Var, pad: [usize; 3]) -> Result<Var, TensorError> {
        let (xs, ks) = (self.shape(x), self.shape(k));
        if xs.len() != 4 || ks.len() != 5 || xs[0] != ks[1] {
            return Err(mismatch("conv3d", xs, ks));
        }
        let mut odims = [0; 3];
        for d in 0..3 {
            odims[d] = conv::conv_out_len(xs[d + 1], ks[d + 2], pad[d], 1)
                .ok_or_else(|| mismatch("conv3d", xs, ks))?;
        }
        let geom = Conv3dGeom {
            c: xs[0],
            dims: [xs[1], xs[2], xs[3]],
            f: ks[0],
            kdims: [ks[2], ks[3], ks[4]],
            pad,
            odims,
        };
        let data = conv::conv3d_forward(&geom, self.value(x).data(), self.value(k).data());
        let out = Tensor::new(vec![geom.f, odims[0], odims[1], odims[2]], data)?;
        let rg = self.rg(&[x, k]);
        Ok(self.push(out, Op::Conv3d { x, k, geom }, rg))
    }

    /// Transposed 2-D convolution of `x: [Ci,H,W]` with `k: [Ci,Co,kh,kw]`, no padding.
    pub fn conv_transpose2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var, TensorError> {
        let (xs, ks) = (self.shape(x), self.shape(k));
        if xs.len() != 3 || ks.len() != 4 || xs[0] != ks[0] || stride == 0 {
            return Err(mismatch("conv_transpose2d", xs, ks));
        }
        let geom = ConvT2dGeom {
            ci: xs[0],
            h: xs[1],
            w: xs[2],
            co: ks[1],
            kh: ks[2],
            kw: ks[3],
            stride,
            ho: (xs[1] - 1) * stride + ks[2],
            wo: (xs[2] - 1) * stride + ks[3],
        };
        let data =
            conv::conv_transpose2d_forward(&geom, self.value(x).data(), self.value(k).data());
        let out = Tensor::new(vec![geom.co, geom.ho, geom.wo], data)?;
        let rg = self.rg(&[x, k]);
        Ok(self.push(out, Op::ConvTranspose2d { x, k, geom }, rg))
    }

    /// Mean of `-log softmax(logits[i])[target_i]` over rows whose target is set.
    ///
    /// `logits` is `[N, K]`; rows with a `None` target are ignored.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
    ) -> Result<Var, TensorError> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(mismatch("softmax_cross_entropy", &s, &[targets.len()]));
        }
        let (n, k) = (s[0], s[1]);
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(TensorError::EmptyMask);
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= k) {
            return Err(TensorError::InvalidShape(format!(
                "target class {bad} for {k} logits"
            )));
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for i in 0..n {
            let row = &x[i * k..(i + 1) * k];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln() + mx;
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
            if let Some(t) = targets[i] {
                loss += lse - row[t];
            }
        }
        loss /= T::of(count as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Mean of `max(0, margin - y_i * s_i)` with labels `y_i` in {-1, +1}.
    pub fn hinge(&mut self, scores: Var, labels: &[T], margin: T) -> Result<Var, TensorError> {
        let s = self.value(scores);
        if s.len() != labels.len() || labels.is_empty() {
            return Err(mismatch("hinge", s.shape(), &[labels.len()]));
        }
        let loss = s
            .data()
            .iter()
            .zip(labels)
            .map(|(&v, &y)| (margin - y * v).max(T::zero()))
            .sum::<T>()
            / T::of(labels.len() as f64);
        let rg = self.rg(&[scores]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Hinge {
                scores,
                labels: labels.to_vec(),
                margin,
            },
            rg,
        ))
    }

    /// Reverse pass seeded with ones at `root`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Gradients { grads };
        }
        grads[root.0] = Some(Tensor::ones(self.value(root).shape()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        let mut send = |v: Var, t: Tensor<T>| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], t);
            }
        };
        let zip_map = |a: &Tensor<T>, f: &dyn Fn(T, T) -> T| -> Tensor<T> {
            Tensor::new(
                a.shape().to_vec(),
                a.data().iter().zip(g.data()).map(|(&x, &gv)| f(x, gv)).collect(),
            )
            .expect("same shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, zip_map(vb, &|x, gv| x * gv));
                send(*b, zip_map(va, &|x, gv| x * gv));
            }
            Op::Scale(x, c) => {
                let c = *c;
                send(*x, g.map(|v| v * c));
            }
            Op::AddScalar(x) => send(*x, g.clone()),
            Op::Relu(x) => send(
                *x,
                zip_map(y, &|o, gv| if o > T::zero() { gv } else { T::zero() }),
            ),
            Op::Sigmoid(x) => send(*x, zip_map(y, &|o, gv| gv * o * (T::one() - o))),
            Op::Tanh(x) => send(*x, zip_map(y, &|o, gv| gv * (T::one() - o * o))),
            Op::Exp(x) => send(*x, zip_map(y, &|o, gv| gv * o)),
            Op::Log(x) => send(*x, zip_map(self.value(*x), &|v, gv| gv / v)),
            Op::Gelu(x) => {
                let (c, a) = (T::of(GELU_C), T::of(GELU_A));
                let half = T::of(0.5);
                let three = T::of(3.0);
                send(
                    *x,
                    zip_map(self.value(*x), &|v, gv| {
                        let u = c * (v + a * v * v * v);
                        let t = u.tanh();
                        let du = c * (T::one() + three * a * v * v);
                        gv * (half * (T::one() + t) + half * v * (T::one() - t * t) * du)
                    }),
                );
            }
            Op::AddAxis { x, v, axis } => {
                let (outer, len, inner) = split_at_axis(y.shape(), *axis);
                let mut gv = vec![T::zero(); len];
                for o in 0..outer {
                    for (a, acc) in gv.iter_mut().enumerate() {
                        let base = (o * len + a) * inner;
                        *acc += g.data()[base..base + inner].iter().copied().sum::<T>();
                    }
                }
                send(*x, g.clone());
                send(*v, Tensor::from_vec(gv));
            }
            Op::MulAxis { x, v, axis } => {
                let (outer, len, inner) = split_at_axis(y.shape(), *axis);
                let xv = self.value(*x).data();
                let vv = self.value(*v).data();
                let mut gv = vec![T::zero(); len];
                let mut gx = g.clone();
                let gxd = gx.data_mut();
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        let mut acc = T::zero();
                        for e in base..base + inner {
                            acc += g.data()[e] * xv[e];
                            gxd[e] *= vv[a];
                        }
                        gv[a] += acc;
                    }
                }
                send(*x, gx);
                send(*v, Tensor::from_vec(gv));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    // dA = G B^T
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &vb.data()[p * n..(p + 1) * n];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    send(*a, Tensor::new(vec![m, k], ga).expect("shape"));
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T G
                    let mut gb = vec![T::zero(); k * n];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = va.data()[i * k + p];
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                    send(*b, Tensor::new(vec![k, n], gb).expect("shape"));
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_at_axis(y.shape(), *axis);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let dot: T = (0..len).map(|a| g.data()[at(a)] * y.data()[at(a)]).sum();
                        for a in 0..len {
                            gx[at(a)] = y.data()[at(a)] * (g.data()[at(a)] - dot);
                        }
                    }
                }
                send(*x, Tensor::new(y.shape().to_vec(), gx).expect("shape"));
            }
            Op::LayerNorm {
                x,
                group_of,
                group_size,
                rstd,
            } => {
                let n_groups = rstd.len();
                let inv_n = T::one() / T::of(*group_size as f64);
                let mut mg = vec![T::zero(); n_groups];
                let mut mgy = vec![T::zero(); n_groups];
                for ((&grp, &gv), &yv) in group_of.iter().zip(g.data()).zip(y.data()) {
                    mg[grp] += gv;
                    mgy[grp] += gv * yv;
                }
                let gx = group_of
                    .iter()
                    .zip(g.data())
                    .zip(y.data())
                    .map(|((&grp, &gv), &yv)| {
                        rstd[grp] * (gv - mg[grp] * inv_n - yv * mgy[grp] * inv_n)
                    })
                    .collect();
                send(*x, Tensor::new(y.shape().to_vec(), gx).expect("shape"));
            }
            Op::Mean {
                x,
                group_of,
                group_size,
            } => {
                let inv = T::one() / T::of(*group_size as f64);
                let gx = group_of.iter().map(|&grp| g.data()[grp] * inv).collect();
                send(
                    *x,
                    Tensor::new(self.shape(*x).to_vec(), gx).expect("shape"),
                );
            }
            Op::SumAll(x) => send(*x, Tensor::full(self.shape(*x), g.item())),
            Op::Reshape(x) => send(
                *x,
                g.clone().reshape(self.shape(*x)).expect("reshape back"),
            ),
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                send(*x, g.permute(&inv).expect("inverse permutation"));
            }
            Op::Concat { xs, axis } => {
                let (outer, _, inner) = split_at_axis(y.shape(), *axis);
                let total = y.shape()[*axis];
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    let mut part = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        part.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    send(v, Tensor::new(self.shape(v).to_vec(), part).expect("shape"));
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, len, inner) = split_at_axis(xs, *axis);
                let width = y.shape()[*axis];
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    let src = o * width * inner;
                    gx[dst..dst + width * inner]
                        .copy_from_slice(&g.data()[src..src + width * inner]);
                }
                send(*x, Tensor::new(xs.to_vec(), gx).expect("shape"));
            }
            Op::Conv2d { x, k, geom } => {
                let (gx, gk) = conv::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*k).data(),
                    g.data(),
                );
                send(*x, Tensor::new(self.shape(*x).to_vec(), gx).expect("shape"));
                send(*k, Tensor::new(self.shape(*k).to_vec(), gk).expect("shape"));
            }
            Op::Conv3d { x, k, geom } => {
                let (gx, gk) = conv::conv3d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*k).data(),
                    g.data(),
                );
                send(*x, Tensor::new(self.shape(*x).to_vec(), gx).expect("shape"));
                send(*k, Tensor::new(self.shape(*k).to_vec(), gk).expect("shape"));
            }
            Op::ConvTranspose2d { x, k, geom } => {
                let (gx, gk) = conv::conv_transpose2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*k).data(),
                    g.data(),
                );
                send(*x, Tensor::new(self.shape(*x).to_vec(), gx).expect("shape"));
                send(*k, Tensor::new(self.shape(*k).to_vec(), gk).expect("shape"));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let k = self.shape(*logits)[1];
                let scale = g.item() / T::of(*count as f64);
                let mut gx = vec![T::zero(); probs.len()];
                for (i, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        for j in 0..k {
                            gx[i * k + j] = probs[i * k + j] * scale;
                        }
                        gx[i * k + t] -= scale;
                    }
                }
                send(
                    *logits,
                    Tensor::new(self.shape(*logits).to_vec(), gx).expect("shape"),
                );
            }
            Op::Hinge {
                scores,
                labels,
                margin,
            } => {
                let s = self.value(*scores);
                let scale = g.item() / T::of(labels.len() as f64);
                let gx = s
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&v, &yl)| {
                        if *margin - yl * v > T::zero() {
                            -yl * scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                send(*scores, Tensor::new(s.shape().to_vec(), gx).expect("shape"));
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}
