//! Bits-per-dimension accounting for the joint models and the sampling
//! speed benchmark.
//!
//! Every component is normalized by the `3 * H * W` color dimensions of the
//! full-resolution image, so the joint score is the plain sum of the
//! component scores. The joint NLL `-log p(X, X̂)` upper-bounds the marginal
//! `-log p(X)`; the reported numbers are therefore bounds, not exact scores.

mod bench;

pub use bench::{bench_sampling, BenchReport, BenchTarget};

use std::f64::consts::LN_2;
use std::fmt::Write;

use crate::auxiliary::{build_pyramid, ImageU8};
use crate::error::{Error, Result};
use crate::model::{AuxModelPair, Factor, FactorBatch, PyramidModel};
use crate::tensor::Element;

/// `total_nll / (n_images * 3 * H * W * ln 2)`.
pub fn bits_per_dim(total_nll_nats: f64, n_images: usize, height: usize, width: usize) -> Result<f64> {
    let dims = n_images * 3 * height * width;
    if dims == 0 {
        return Err(Error::InvalidArgument("bits_per_dim: zero dimensions".into()));
    }
    Ok(total_nll_nats / (dims as f64 * LN_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimsConvention {
    PerColorDim,
}

impl DimsConvention {
    pub fn as_str(self) -> &'static str {
        "per-color-dim"
    }
}

/// Per-image component NLLs (nats) behind a report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerImageNll {
    pub aux: Vec<f64>,
    pub cond: Vec<f64>,
}

impl PerImageNll {
    /// `index,aux_nll_nats,cond_nll_nats` with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,aux_nll_nats,cond_nll_nats\n");
        for (i, (a, c)) in self.aux.iter().zip(&self.cond).enumerate() {
            let _ = writeln!(s, "{i},{a:e},{c:e}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (n, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<_> = line.split(',').collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Config(format!("per-image NLL line {}: bad number {s:?}", n + 1)))
            };
            if fields.len() != 3 {
                return Err(Error::Config(format!(
                    "per-image NLL line {}: expected 3 fields",
                    n + 1
                )));
            }
            out.aux.push(parse(fields[1])?);
            out.cond.push(parse(fields[2])?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpdReport {
    pub model: String,
    pub split: String,
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub aux_bpd: f64,
    pub cond_bpd: f64,
    pub combined_bpd: f64,
    pub convention: DimsConvention,
}

pub const BPD_CSV_HEADER: &str = "model,split,n_images,height,width,aux_bpd,cond_bpd,combined_bpd,convention";

impl BpdReport {
    /// Report from component totals; the totals are summed over images in index order.
    pub fn from_totals(
        model: &str,
        split: &str,
        aux_total: f64,
        cond_total: f64,
        n_images: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let aux_bpd = bits_per_dim(aux_total, n_images, height, width)?;
        let cond_bpd = bits_per_dim(cond_total, n_images, height, width)?;
        Ok(Self::from_components(
            model, split, aux_bpd, cond_bpd, n_images, height, width,
        ))
    }

    pub fn from_components(
        model: &str,
        split: &str,
        aux_bpd: f64,
        cond_bpd: f64,
        n_images: usize,
        height: usize,
        width: usize,
    ) -> Self {
        Self {
            model: model.into(),
            split: split.into(),
            n_images,
            height,
            width,
            aux_bpd,
            cond_bpd,
            combined_bpd: aux_bpd + cond_bpd,
            convention: DimsConvention::PerColorDim,
        }
    }

    /// Recomputes the report from a per-image dump.
    pub fn from_per_image(model: &str, split: &str, nll: &PerImageNll, height: usize, width: usize) -> Result<Self> {
        Self::from_totals(
            model,
            split,
            nll.aux.iter().sum(),
            nll.cond.iter().sum(),
            nll.aux.len(),
            height,
            width,
        )
    }

    pub fn to_key_value(&self) -> String {
        format!(
            "model={}\nsplit={}\nn_images={}\nheight={}\nwidth={}\naux_bpd={}\ncond_bpd={}\ncombined_bpd={}\nconvention={}\n",
            self.model,
            self.split,
            self.n_images,
            self.height,
            self.width,
            self.aux_bpd,
            self.cond_bpd,
            self.combined_bpd,
            self.convention.as_str()
        )
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{BPD_CSV_HEADER}\n{},{},{},{},{},{},{},{},{}\n",
            self.model,
            self.split,
            self.n_images,
            self.height,
            self.width,
            self.aux_bpd,
            self.cond_bpd,
            self.combined_bpd,
            self.convention.as_str()
        )
    }
}

fn per_image<T: Element>(factor: &Factor<T>, images: &[ImageU8], batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let refs: Vec<_> = chunk.iter().collect();
        out.extend(factor.nll_per_image(&FactorBatch::from_images(factor.kind, &refs)?)?);
    }
    Ok(out)
}

fn check_dataset(images: &[ImageU8]) -> Result<(usize, usize)> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty evaluation set".into()))?;
    Ok((first.height(), first.width()))
}

/// Joint-likelihood score of the grayscale-auxiliary pair.
pub fn bound_report<T: Element>(
    pair: &AuxModelPair<T>,
    images: &[ImageU8],
    split: &str,
    batch_size: usize,
) -> Result<(BpdReport, PerImageNll)> {
    let (h, w) = check_dataset(images)?;
    let nll = PerImageNll {
        aux: per_image(&pair.aux, images, batch_size)?,
        cond: per_image(&pair.cond, images, batch_size)?,
    };
    Ok((BpdReport::from_per_image("grayscale-aux", split, &nll, h, w)?, nll))
}

/// Joint score of a pyramid: the coarsest level is the auxiliary part and the
/// finer levels together are the conditional part.
pub fn pyramid_report<T: Element>(
    model: &PyramidModel<T>,
    images: &[ImageU8],
    split: &str,
    batch_size: usize,
) -> Result<(BpdReport, PerImageNll)> {
    let (h, w) = check_dataset(images)?;
    let levels = model.spec.levels();
    let pyramids = images
        .iter()
        .map(|i| build_pyramid(i, levels))
        .collect::<Result<Vec<_>>>()?;
    let mut nll = PerImageNll {
        aux: vec![0.0; images.len()],
        cond: vec![0.0; images.len()],
    };
    for (l, factor) in model.levels.iter().enumerate() {
        let imgs: Vec<_> = pyramids.iter().map(|p| p[l].clone()).collect();
        let part = per_image(factor, &imgs, batch_size)?;
        let dst = if l + 1 == levels { &mut nll.aux } else { &mut nll.cond };
        for (d, v) in dst.iter_mut().zip(part) {
            *d += v;
        }
    }
    Ok((BpdReport::from_per_image("pyramid", split, &nll, h, w)?, nll))
}

/// Score of a single unconditional factor; reported entirely as the conditional part.
pub fn flat_report<T: Element>(
    factor: &Factor<T>,
    images: &[ImageU8],
    split: &str,
    batch_size: usize,
) -> Result<(BpdReport, PerImageNll)> {
    let (h, w) = check_dataset(images)?;
    let cond = per_image(factor, images, batch_size)?;
    let nll = PerImageNll {
        aux: vec![0.0; cond.len()],
        cond,
    };
    Ok((BpdReport::from_per_image("flat", split, &nll, h, w)?, nll))
}
