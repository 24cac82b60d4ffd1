//! Forward and backward kernels shared by the tape and the tape-free
//! inference paths. Every output element of a convolution is accumulated in
//! the fixed order `bias, then (input channel, tap)` ascending, so the
//! whole-image and single-position evaluations produce identical bits.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[inline]
pub fn sigmoid<T: Element>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Spatial geometry of a 2-D convolution.
#[derive(Debug, Clone)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Active taps as flat `ky * kernel + kx` indices, ascending.
    pub taps: Vec<usize>,
}

impl ConvGeometry {
    pub fn dense(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
            taps: (0..kernel * kernel).collect(),
        }
    }

    pub fn output_extent(&self, extent: usize, axis: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be >= 1".into()));
        }
        if extent + 2 * self.pad < self.kernel {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                axis,
                expected: self.kernel,
                got: extent + 2 * self.pad,
            });
        }
        Ok((extent + 2 * self.pad - self.kernel) / self.stride + 1)
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad` lies in `[0, w)`.
    #[inline]
    fn valid_range(&self, k_off: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > k_off {
            (self.pad - k_off).div_ceil(s)
        } else {
            0
        };
        let top = extent + self.pad;
        if top <= k_off {
            return (0, 0);
        }
        let hi = ((top - 1 - k_off) / s + 1).min(out_extent);
        (lo.min(hi), hi)
    }
}

fn check_conv_shapes<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeometry,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4("conv2d")?;
    let (o, wc, kh, kw) = weight.dims4("conv2d")?;
    if wc != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            axis: 1,
            expected: c,
            got: wc,
        });
    }
    if kh != geom.kernel {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            axis: 2,
            expected: geom.kernel,
            got: kh,
        });
    }
    if kw != geom.kernel {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            axis: 3,
            expected: geom.kernel,
            got: kw,
        });
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                axis: 0,
                expected: o,
                got: b.shape().first().copied().unwrap_or(0),
            });
        }
    }
    let ho = geom.output_extent(h, 2)?;
    let wo = geom.output_extent(w, 3)?;
    Ok((n, c, h, w, o, ho, wo))
}

pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    let (n, c, h, w, o, ho, wo) = check_conv_shapes(input, weight, bias, geom)?;
    let k = geom.kernel;
    let s = geom.stride;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); n * o * ho * wo];
    for ni in 0..n {
        for oi in 0..o {
            let plane = &mut out[(ni * o + oi) * ho * wo..][..ho * wo];
            let b = bias.map_or(T::zero(), |b| b.data()[oi]);
            plane.iter_mut().for_each(|v| *v = b);
            for ci in 0..c {
                let in_plane = &x[(ni * c + ci) * h * w..][..h * w];
                let w_base = (oi * c + ci) * k * k;
                for &t in &geom.taps {
                    let (ky, kx) = (t / k, t % k);
                    let wv = wt[w_base + t];
                    let (ox_lo, ox_hi) = geom.valid_range(kx, w, wo);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - geom.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * w..][..w];
                        let out_row = &mut plane[oy * wo..][..wo];
                        if s == 1 {
                            let ix0 = ox_lo + kx - geom.pad;
                            let len = ox_hi - ox_lo;
                            for (ov, &iv) in out_row[ox_lo..ox_hi].iter_mut().zip(&in_row[ix0..ix0 + len]) {
                                *ov = *ov + wv * iv;
                            }
                        } else {
                            for (ox, ov) in out_row.iter_mut().enumerate().take(ox_hi).skip(ox_lo) {
                                *ov = *ov + wv * in_row[ox * s + kx - geom.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, o, ho, wo], out)
}

/// Gradients of a convolution with respect to input, weight and bias.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w, o, ho, wo) = check_conv_shapes(input, weight, None, geom)?;
    let k = geom.kernel;
    let s = geom.stride;
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let mut gin = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); o];
    for ni in 0..n {
        for oi in 0..o {
            let gplane = &g[(ni * o + oi) * ho * wo..][..ho * wo];
            gb[oi] = gplane.iter().fold(gb[oi], |acc, &v| acc + v);
            for ci in 0..c {
                let in_off = (ni * c + ci) * h * w;
                let w_base = (oi * c + ci) * k * k;
                for &t in &geom.taps {
                    let (ky, kx) = (t / k, t % k);
                    let wv = wt[w_base + t];
                    let (ox_lo, ox_hi) = geom.valid_range(kx, w, wo);
                    let mut acc = T::zero();
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - geom.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = in_off + iy as usize * w;
                        for ox in ox_lo..ox_hi {
                            let ix = ox * s + kx - geom.pad;
                            let gv = gplane[oy * wo + ox];
                            acc = acc + gv * x[row + ix];
                            gin[row + ix] = gin[row + ix] + wv * gv;
                        }
                    }
                    gw[w_base + t] = gw[w_base + t] + acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gin)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![o], gb)?,
    ))
}

/// Splits a shape around `axis` into `(outer, axis_len, inner)`.
pub fn axis_split(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::AxisOutOfRange {
            op,
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Overflow-safe `log(sum(exp(x)))` along `axis`; the axis is removed.
pub fn logsumexp<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_split(x.shape(), axis, "logsumexp")?;
    let d = x.data();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| d[(o * len + j) * inner + i];
            let m = (0..len).map(at).fold(T::neg_infinity(), T::max);
            if m.is_infinite() {
                out.push(m);
                continue;
            }
            let s = (0..len).fold(T::zero(), |acc, j| acc + (at(j) - m).exp());
            out.push(m + s.ln());
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    Tensor::new(shape, out)
}

pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_split(x.shape(), axis, "softmax")?;
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let m = (0..len).map(|j| d[idx(j)]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for j in 0..len {
                let e = (d[idx(j)] - m).exp();
                out[idx(j)] = e;
                s = s + e;
            }
            for j in 0..len {
                out[idx(j)] = out[idx(j)] / s;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Nearest-neighbour ×2 upsampling of the two trailing axes.
pub fn upsample2x<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("upsample2x")?;
    let d = x.data();
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * h2 * w2];
    for p in 0..n * c {
        for y in 0..h2 {
            for xx in 0..w2 {
                out[(p * h2 + y) * w2 + xx] = d[(p * h + y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(vec![n, c, h2, w2], out)
}

pub fn upsample2x_backward<T: Element>(grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h2, w2) = grad.dims4("upsample2x")?;
    let (h, w) = (h2 / 2, w2 / 2);
    let g = grad.data();
    let mut out = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        for y in 0..h2 {
            for xx in 0..w2 {
                let o = (p * h + y / 2) * w + xx / 2;
                out[o] = out[o] + g[(p * h2 + y) * w2 + xx];
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}
