//! Per-pixel likelihood heads.
//!
//! Both heads read an `[N, P, H, W]` parameter map produced by an
//! autoregressive network and score discrete targets. Log-probabilities are
//! accumulated in `f64` regardless of the activation dtype.

pub mod categorical;
pub mod dmol;

pub use categorical::{categorical16_nll, Categorical16Params};
pub use dmol::{dmol_nll, dmol_sample, MixtureParams};

use rand::Rng;

/// How a pixel value is drawn from its predicted distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleMode {
    /// Draw a mixture component, then a value from that component.
    Ancestral,
    /// Like ancestral, with every predicted log-scale lowered by `lambda`.
    Reduced(f64),
    /// Draw a mixture component, then emit its mode.
    Map,
}

impl SampleMode {
    pub fn lambda(self) -> f64 {
        match self {
            SampleMode::Reduced(l) => l,
            _ => 0.0,
        }
    }
}

/// Output head of an autoregressive network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Discretized mixture of `components` three-channel logistics.
    Dmol { components: usize },
    /// 16-way categorical over 4-bit grayscale levels.
    Categorical16,
}

impl HeadKind {
    pub fn channels(self) -> usize {
        match self {
            HeadKind::Dmol { components } => dmol::params_per_pixel(components),
            HeadKind::Categorical16 => categorical::LEVELS,
        }
    }

    /// Channels of the image this head scores.
    pub fn image_channels(self) -> usize {
        match self {
            HeadKind::Dmol { .. } => 3,
            HeadKind::Categorical16 => 1,
        }
    }

    /// Log-probability of one pixel given its gathered parameters.
    pub fn log_prob(self, params: &[f64], pixel: &[u8]) -> f64 {
        match self {
            HeadKind::Dmol { components } => {
                let p = MixtureParams::from_slice(params, components);
                dmol::log_prob(&p, [pixel[0], pixel[1], pixel[2]], None)
            }
            HeadKind::Categorical16 => categorical::log_prob(params, pixel[0], None),
        }
    }

    /// Draws one pixel (3 channels for DMOL, 1 for categorical) into `out`.
    pub fn sample(self, params: &[f64], mode: SampleMode, rng: &mut impl Rng, out: &mut [u8]) {
        match self {
            HeadKind::Dmol { components } => {
                let p = MixtureParams::from_slice(params, components);
                out[..3].copy_from_slice(&dmol_sample(&p, mode, rng));
            }
            HeadKind::Categorical16 => out[0] = categorical::sample(params, rng),
        }
    }
}

/// Gathers the parameter vector of pixel `(n, y, x)` from an `[N, P, H, W]` buffer.
pub(crate) fn gather_pixel<T: crate::tensor::Element>(
    data: &[T],
    dims: (usize, usize, usize, usize),
    n: usize,
    y: usize,
    x: usize,
    out: &mut Vec<f64>,
) {
    let (_, p, h, w) = dims;
    out.clear();
    let base = n * p * h * w + y * w + x;
    out.extend((0..p).map(|c| data[base + c * h * w].as_f64()));
}
