use rand::{Rng, RngCore};

use super::params::{gaussian, ParamId, ParamSet};
use crate::error::Result;
use crate::tensor::kernels::ConvGeometry;
use crate::tensor::{Element, Tape, Tensor, Var};

/// Raster-order spatial mask of a convolution kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Excludes the centre tap and every later tap.
    A,
    /// Excludes only taps strictly after the centre.
    B,
}

impl MaskKind {
    pub fn allows(self, ky: usize, kx: usize, kernel: usize) -> bool {
        let c = kernel / 2;
        match self {
            MaskKind::A => ky < c || (ky == c && kx < c),
            MaskKind::B => ky < c || (ky == c && kx <= c),
        }
    }

    /// Binary `[out, in, k, k]` mask tensor.
    pub fn tensor<T: Element>(self, out_c: usize, in_c: usize, kernel: usize) -> Tensor<T> {
        let plane: Vec<T> = (0..kernel * kernel)
            .map(|t| {
                if self.allows(t / kernel, t % kernel, kernel) {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        let data = plane.repeat(out_c * in_c);
        Tensor::new(vec![out_c, in_c, kernel, kernel], data).expect("mask shape")
    }
}

/// Active dropout during a training forward pass.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

/// 2-D convolution, optionally masked. The mask multiplies the weight on
/// every forward call and masked taps are skipped by the kernel.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Element> {
    pub(crate) weight: ParamId,
    pub(crate) bias: Option<ParamId>,
    pub(crate) geom: ConvGeometry,
    pub(crate) mask: Option<(MaskKind, Tensor<T>)>,
}

pub(crate) struct ConvSpec {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub mask: Option<MaskKind>,
    pub bias: bool,
}

impl<T: Element> Conv2d<T> {
    pub(crate) fn new(params: &mut ParamSet<T>, name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let ConvSpec {
            in_c,
            out_c,
            kernel,
            stride,
            mask,
            bias,
        } = spec;
        let weight = params.add(format!("{name}.weight"), gaussian(&[out_c, in_c, kernel, kernel], rng));
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(&[out_c])));
        let mut geom = ConvGeometry::dense(kernel, stride, kernel / 2);
        if let Some(kind) = mask {
            geom.taps.retain(|&t| kind.allows(t / kernel, t % kernel, kernel));
        }
        Self {
            weight,
            bias,
            geom,
            mask: mask.map(|kind| (kind, kind.tensor(out_c, in_c, kernel))),
        }
    }

    pub fn mask_kind(&self) -> Option<MaskKind> {
        self.mask.as_ref().map(|(k, _)| *k)
    }

    pub fn mask(&self) -> Option<&Tensor<T>> {
        self.mask.as_ref().map(|(_, m)| m)
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geom
    }

    /// `weight ⊙ mask` (or the raw weight when unmasked).
    pub fn effective_weight(&self, params: &ParamSet<T>) -> Tensor<T> {
        let w = params.get(self.weight);
        match &self.mask {
            Some((_, m)) => {
                let data = w.data().iter().zip(m.data()).map(|(&a, &b)| a * b).collect();
                Tensor::new(w.shape().to_vec(), data).expect("same shape")
            }
            None => w.clone(),
        }
    }

    pub(crate) fn forward(&self, tape: &mut Tape<T>, bound: &[Var], x: Var) -> Result<Var> {
        let w = match &self.mask {
            Some((_, m)) => {
                let m = tape.constant(m.clone());
                tape.mul(bound[self.weight.0], m)?
            }
            None => bound[self.weight.0],
        };
        tape.conv2d(x, w, self.bias.map(|b| bound[b.0]), &self.geom)
    }
}

/// Gated residual block: `x + conv_out(dropout(tanh(a) * sigmoid(b)))` with
/// `[a, b] = conv_in(x) + cond(embedding)`.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T: Element> {
    pub(crate) conv_in: Conv2d<T>,
    pub(crate) conv_out: Conv2d<T>,
    pub(crate) cond: Option<Conv2d<T>>,
    pub(crate) filters: usize,
}

impl<T: Element> ResidualBlock<T> {
    /// Gated residual block `x + conv_out(tanh(a) * sigmoid(b))` with
    /// `[a, b] = conv_in(x) + cond(embedding)`; parameters go into `params`.
    pub fn new(
        params: &mut ParamSet<T>,
        name: &str,
        filters: usize,
        kernel: usize,
        mask: Option<MaskKind>,
        cond_channels: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        let conv = |params: &mut ParamSet<T>, part: &str, in_c, out_c, rng: &mut _| {
            Conv2d::new(
                params,
                &format!("{name}.{part}"),
                ConvSpec {
                    in_c,
                    out_c,
                    kernel,
                    stride: 1,
                    mask,
                    bias: true,
                },
                rng,
            )
        };
        let conv_in = conv(params, "conv_in", filters, 2 * filters, rng);
        let conv_out = conv(params, "conv_out", filters, filters, rng);
        let cond = cond_channels.map(|e| {
            Conv2d::new(
                params,
                &format!("{name}.cond"),
                ConvSpec {
                    in_c: e,
                    out_c: 2 * filters,
                    kernel: 1,
                    stride: 1,
                    mask: None,
                    bias: false,
                },
                rng,
            )
        });
        Self {
            conv_in,
            conv_out,
            cond,
            filters,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        x: Var,
        embedding: Option<Var>,
        dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<Var> {
        let mut t = self.conv_in.forward(tape, bound, x)?;
        if let (Some(cond), Some(e)) = (&self.cond, embedding) {
            let bias = cond.forward(tape, bound, e)?;
            t = tape.add(t, bias)?;
        }
        let a = tape.slice(t, 1, 0, self.filters)?;
        let b = tape.slice(t, 1, self.filters, self.filters)?;
        let a = tape.tanh(a)?;
        let b = tape.sigmoid(b)?;
        let mut g = tape.mul(a, b)?;
        if let Some(d) = dropout {
            g = tape.dropout(g, d.rate, true, &mut d.rng)?;
        }
        let u = self.conv_out.forward(tape, bound, g)?;
        tape.add(x, u)
    }
}
