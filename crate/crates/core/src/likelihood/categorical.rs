use rand::Rng;

use super::gather_pixel;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

pub const LEVELS: usize = 16;

/// Sixteen logits of one grayscale pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical16Params {
    pub logits: [f64; LEVELS],
}

impl Categorical16Params {
    pub fn probabilities(&self) -> [f64; LEVELS] {
        probabilities(&self.logits)
    }
}

pub fn probabilities(logits: &[f64]) -> [f64; LEVELS] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; LEVELS];
    let mut s = 0.0;
    for (pi, &l) in p.iter_mut().zip(logits) {
        *pi = (l - m).exp();
        s += *pi;
    }
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Log-softmax probability of `level`; `grad` receives `d log p / d logits`.
pub fn log_prob(logits: &[f64], level: u8, grad: Option<&mut [f64]>) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let lse = m + s.ln();
    if let Some(g) = grad {
        for (j, (gv, &l)) in g.iter_mut().zip(logits).enumerate() {
            *gv = (j == level as usize) as u8 as f64 - (l - lse).exp();
        }
    }
    logits[level as usize] - lse
}

pub fn sample(logits: &[f64], rng: &mut impl Rng) -> u8 {
    let p = probabilities(logits);
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        acc += pj;
        if u < acc {
            return j as u8;
        }
    }
    (LEVELS - 1) as u8
}

/// Per-image NLL (nats) of `[N, 1, H, W]` levels, optionally with the gradient of the sum.
pub fn categorical_nll_per_image<T: Element>(
    logits: &Tensor<T>,
    targets: &[u8],
    want_grad: bool,
) -> Result<(Vec<f64>, Option<Tensor<T>>)> {
    let dims = logits.dims4("categorical16_nll")?;
    let (n, c, h, w) = dims;
    if c != LEVELS {
        return Err(Error::ShapeMismatch {
            op: "categorical16_nll",
            axis: 1,
            expected: LEVELS,
            got: c,
        });
    }
    if targets.len() != n * h * w {
        return Err(Error::ShapeMismatch {
            op: "categorical16_nll targets",
            axis: 0,
            expected: n * h * w,
            got: targets.len(),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&v| v as usize >= LEVELS) {
        return Err(Error::ValueOutOfRange {
            what: "4-bit grayscale level",
            value: bad as i64,
        });
    }
    let data = logits.data();
    let mut grad = want_grad.then(|| vec![T::zero(); data.len()]);
    let mut buf = Vec::with_capacity(LEVELS);
    let mut g = [0.0; LEVELS];
    let mut per_image = vec![0.0; n];
    for (ni, total) in per_image.iter_mut().enumerate() {
        for y in 0..h {
            for x in 0..w {
                gather_pixel(data, dims, ni, y, x, &mut buf);
                if buf.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("categorical logits"));
                }
                let level = targets[(ni * h + y) * w + x];
                *total -= log_prob(&buf, level, grad.is_some().then_some(&mut g[..]));
                if let Some(gr) = grad.as_mut() {
                    let base = ni * c * h * w + y * w + x;
                    for (j, gv) in g.iter().enumerate() {
                        gr[base + j * h * w] = T::from_f64(-gv);
                    }
                }
            }
        }
    }
    let grad = grad.map(|g| Tensor::new(logits.shape().to_vec(), g)).transpose()?;
    Ok((per_image, grad))
}

/// Summed cross-entropy in nats.
pub fn categorical16_nll<T: Element>(logits: &Tensor<T>, targets: &[u8]) -> Result<f64> {
    let (per_image, _) = categorical_nll_per_image(logits, targets, false)?;
    Ok(per_image.iter().sum())
}

pub fn categorical_nll_on_tape<T: Element>(tape: &mut Tape<T>, logits: Var, targets: &[u8]) -> Result<Var> {
    let (per_image, grad) = categorical_nll_per_image(tape.value(logits), targets, true)?;
    let total: f64 = per_image.iter().sum();
    tape.fused_scalar(logits, T::from_f64(total), grad.expect("gradient requested"))
}
