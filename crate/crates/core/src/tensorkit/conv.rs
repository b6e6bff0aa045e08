//! Direct-loop convolution kernels (cross-correlation, no kernel flip).

use crate::num::Scalar;

/// Output positions `o` along one axis for which `o * stride + k - pad` lands inside the input.
#[inline]
fn valid_range(n_out: usize, n_in: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    if n_in + pad < k + 1 {
        return (0, 0);
    }
    let hi = ((n_in - 1 + pad - k) / stride + 1).min(n_out);
    (lo.min(hi), hi)
}

pub(crate) fn conv_out_len(n_in: usize, k: usize, pad: usize, stride: usize) -> Option<usize> {
    if n_in + 2 * pad < k || stride == 0 {
        return None;
    }
    Some((n_in + 2 * pad - k) / stride + 1)
}

/// Geometry of a 2-D convolution: input `[c, h, w]`, kernels `[f, c, kh, kw]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv2dGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: [usize; 2],
    pub ho: usize,
    pub wo: usize,
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &Conv2dGeom, x: &[T], k: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.f * g.ho * g.wo];
    let (hw, ohw) = (g.h * g.w, g.ho * g.wo);
    for f in 0..g.f {
        let obase = f * ohw;
        for c in 0..g.c {
            let xbase = c * hw;
            for ki in 0..g.kh {
                let (ilo, ihi) = valid_range(g.ho, g.h, ki, g.pad[0], g.stride);
                for kj in 0..g.kw {
                    let (jlo, jhi) = valid_range(g.wo, g.w, kj, g.pad[1], g.stride);
                    let wv = k[((f * g.c + c) * g.kh + ki) * g.kw + kj];
                    for oi in ilo..ihi {
                        let ii = oi * g.stride + ki - g.pad[0];
                        let xrow = xbase + ii * g.w;
                        let orow = obase + oi * g.wo;
                        for oj in jlo..jhi {
                            let jj = oj * g.stride + kj - g.pad[1];
                            out[orow + oj] += wv * x[xrow + jj];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &Conv2dGeom,
    x: &[T],
    k: &[T],
    grad: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    let (hw, ohw) = (g.h * g.w, g.ho * g.wo);
    for f in 0..g.f {
        let obase = f * ohw;
        for c in 0..g.c {
            let xbase = c * hw;
            for ki in 0..g.kh {
                let (ilo, ihi) = valid_range(g.ho, g.h, ki, g.pad[0], g.stride);
                for kj in 0..g.kw {
                    let (jlo, jhi) = valid_range(g.wo, g.w, kj, g.pad[1], g.stride);
                    let widx = ((f * g.c + c) * g.kh + ki) * g.kw + kj;
                    let wv = k[widx];
                    let mut acc = T::zero();
                    for oi in ilo..ihi {
                        let ii = oi * g.stride + ki - g.pad[0];
                        let xrow = xbase + ii * g.w;
                        let orow = obase + oi * g.wo;
                        for oj in jlo..jhi {
                            let jj = oj * g.stride + kj - g.pad[1];
                            let go = grad[orow + oj];
                            acc += go * x[xrow + jj];
                            gx[xrow + jj] += wv * go;
                        }
                    }
                    gk[widx] += acc;
                }
            }
        }
    }
    (gx, gk)
}

/// Geometry of a stride-1 3-D convolution: input `[c, t, h, w]`, kernels `[f, c, kt, kh, kw]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv3dGeom {
    pub c: usize,
    pub dims: [usize; 3],
    pub f: usize,
    pub kdims: [usize; 3],
    pub pad: [usize; 3],
    pub odims: [usize; 3],
}

pub(crate) fn conv3d_forward<T: Scalar>(g: &Conv3dGeom, x: &[T], k: &[T]) -> Vec<T> {
    let [t, h, w] = g.dims;
    let [kt, kh, kw] = g.kdims;
    let [ot, oh, ow] = g.odims;
    let mut out = vec![T::zero(); g.f * ot * oh * ow];
    for f in 0..g.f {
        for c in 0..g.c {
            for a in 0..kt {
                let (tlo, thi) = valid_range(ot, t, a, g.pad[0], 1);
                for b in 0..kh {
                    let (ilo, ihi) = valid_range(oh, h, b, g.pad[1], 1);
                    for d in 0..kw {
                        let (jlo, jhi) = valid_range(ow, w, d, g.pad[2], 1);
                        let wv = k[(((f * g.c + c) * kt + a) * kh + b) * kw + d];
                        for o_t in tlo..thi {
                            let it = o_t + a - g.pad[0];
                            for oi in ilo..ihi {
                                let ii = oi + b - g.pad[1];
                                if jlo >= jhi {
                                    continue;
                                }
                                let xrow = ((c * t + it) * h + ii) * w + d;
                                let orow = ((f * ot + o_t) * oh + oi) * ow;
                                let xs = &x[xrow + jlo - g.pad[2]..xrow + jhi - g.pad[2]];
                                let os = &mut out[orow + jlo..orow + jhi];
                                for (o, &xv) in os.iter_mut().zip(xs) {
                                    *o += wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv3d_backward<T: Scalar>(
    g: &Conv3dGeom,
    x: &[T],
    k: &[T],
    grad: &[T],
) -> (Vec<T>, Vec<T>) {
    let [t, h, w] = g.dims;
    let [kt, kh, kw] = g.kdims;
    let [ot, oh, ow] = g.odims;
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    for f in 0..g.f {
        for c in 0..g.c {
            for a in 0..kt {
                let (tlo, thi) = valid_range(ot, t, a, g.pad[0], 1);
                for b in 0..kh {
                    let (ilo, ihi) = valid_range(oh, h, b, g.pad[1], 1);
                    for d in 0..kw {
                        let (jlo, jhi) = valid_range(ow, w, d, g.pad[2], 1);
                        let widx = (((f * g.c + c) * kt + a) * kh + b) * kw + d;
                        let wv = k[widx];
                        let mut acc = T::zero();
                        for o_t in tlo..thi {
                            let it = o_t + a - g.pad[0];
                            for oi in ilo..ihi {
                                let ii = oi + b - g.pad[1];
                                let xrow = ((c * t + it) * h + ii) * w + d;
                                let orow = ((f * ot + o_t) * oh + oi) * ow;
                                for oj in jlo..jhi {
                                    let go = grad[orow + oj];
                                    let xi = xrow + oj - g.pad[2];
                                    acc += go * x[xi];
                                    gx[xi] += wv * go;
                                }
                            }
                        }
                        gk[widx] += acc;
                    }
                }
            }
        }
    }
    (gx, gk)
}

/// Geometry of a transposed 2-D convolution without padding:
/// input `[ci, h, w]`, kernels `[ci, co, kh, kw]`, output `[co, (h-1)s+kh, (w-1)s+kw]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvT2dGeom {
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

pub(crate) fn conv_transpose2d_forward<T: Scalar>(g: &ConvT2dGeom, x: &[T], k: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.co * g.ho * g.wo];
    for c in 0..g.ci {
        for o in 0..g.co {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let wv = k[((c * g.co + o) * g.kh + ki) * g.kw + kj];
                    for i in 0..g.h {
                        let xrow = (c * g.h + i) * g.w;
                        let orow = (o * g.ho + i * g.stride + ki) * g.wo + kj;
                        for j in 0..g.w {
                            out[orow + j * g.stride] += wv * x[xrow + j];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    g: &ConvT2dGeom,
    x: &[T],
    k: &[T],
    grad: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    for c in 0..g.ci {
        for o in 0..g.co {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let widx = ((c * g.co + o) * g.kh + ki) * g.kw + kj;
                    let wv = k[widx];
                    let mut acc = T::zero();
                    for i in 0..g.h {
                        let xrow = (c * g.h + i) * g.w;
                        let orow = (o * g.ho + i * g.stride + ki) * g.wo + kj;
                        for j in 0..g.w {
                            let go = grad[orow + j * g.stride];
                            acc += go * x[xrow + j];
                            gx[xrow + j] += wv * go;
                        }
                    }
                    gk[widx] += acc;
                }
            }
        }
    }
    (gx, gk)
}
