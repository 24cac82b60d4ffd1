use super::cache::{pixel_to_input, ActivationCache};
use super::{pixel_rng, SampleConfig};
use crate::auxiliary::{GrayImage4, ImageU8};
use crate::error::{Error, Result};
use crate::likelihood::gather_pixel;
use crate::model::{AuxModelPair, Factor, PyramidModel};
use crate::nn::{gray_to_tensor, rgb_to_tensor};
use crate::tensor::{Element, Tensor};

/// A generated image, in the representation of the head that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sampled {
    Rgb(ImageU8),
    Gray(GrayImage4),
}

impl Sampled {
    pub fn into_rgb(self) -> Option<ImageU8> {
        match self {
            Sampled::Rgb(i) => Some(i),
            Sampled::Gray(_) => None,
        }
    }

    pub fn into_gray(self) -> Option<GrayImage4> {
        match self {
            Sampled::Gray(g) => Some(g),
            Sampled::Rgb(_) => None,
        }
    }
}

/// Samples one image from a factor in raster order. `aux` is the `[1, C, h, w]`
/// auxiliary input of a conditional factor. Pixels draw from
/// `pixel_rng(cfg.seed, stream, position)`.
pub fn sample_factor<T: Element>(
    factor: &Factor<T>,
    height: usize,
    width: usize,
    aux: Option<&Tensor<T>>,
    cfg: &SampleConfig,
    stream: u64,
) -> Result<Sampled> {
    if !factor.is_initialized() {
        return Err(Error::Uninitialized);
    }
    if let crate::likelihood::SampleMode::Reduced(l) = cfg.mode {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {l}")));
        }
    }
    let head = factor.head();
    let channels = head.image_channels();
    let embedding = factor.embedding(aux)?;
    let n = height * width;
    let mut planar = vec![0u8; channels * n];
    let mut pixel = [0u8; 3];
    let mut sample_at = |pos: usize, params: &[f64], planar: &mut [u8]| {
        let mut rng = pixel_rng(cfg.seed, stream, pos);
        head.sample(params, cfg.mode, &mut rng, &mut pixel[..channels]);
        for c in 0..channels {
            planar[c * n + pos] = pixel[c];
        }
        pixel
    };
    if cfg.use_cache {
        let mut cache = ActivationCache::new(&factor.net, embedding.as_ref(), height, width)?;
        for pos in 0..n {
            let params = cache.incremental_forward(pos)?;
            let px = sample_at(pos, &params, &mut planar);
            cache.commit_pixel(pos, &px[..channels])?;
        }
    } else {
        let mut image = Tensor::<T>::full(&[1, channels, height, width], pixel_to_input(head, 0));
        let mut params = Vec::new();
        for pos in 0..n {
            let out = factor.net.forward(&image, embedding.as_ref())?;
            let dims = out.dims4("sample")?;
            gather_pixel(out.data(), dims, 0, pos / width, pos % width, &mut params);
            let px = sample_at(pos, &params, &mut planar);
            for (c, &v) in px.iter().enumerate().take(channels) {
                image.data_mut()[c * n + pos] = pixel_to_input(head, v);
            }
        }
    }
    if channels == 3 {
        ImageU8::from_planar(height, width, &planar).map(Sampled::Rgb)
    } else {
        GrayImage4::new(height, width, planar).map(Sampled::Gray)
    }
}

fn expect_rgb(s: Sampled) -> Result<ImageU8> {
    s.into_rgb()
        .ok_or_else(|| Error::Config("factor has a grayscale head where an RGB head is needed".into()))
}

/// Unconditional RGB sample from a flat factor.
pub fn sample_rgb<T: Element>(factor: &Factor<T>, height: usize, width: usize, cfg: &SampleConfig) -> Result<ImageU8> {
    expect_rgb(sample_factor(factor, height, width, None, cfg, 0)?)
}

/// Color image given a 4-bit grayscale view.
pub fn colorize<T: Element>(cond: &Factor<T>, gray: &GrayImage4, cfg: &SampleConfig) -> Result<ImageU8> {
    let aux = gray_to_tensor(&[gray])?;
    expect_rgb(sample_factor(cond, gray.height(), gray.width(), Some(&aux), cfg, 0)?)
}

/// Samples the grayscale view, then the color image given it.
pub fn sample_pair<T: Element>(
    pair: &AuxModelPair<T>,
    height: usize,
    width: usize,
    cfg: &SampleConfig,
) -> Result<(GrayImage4, ImageU8)> {
    let gray = sample_factor(&pair.aux, height, width, None, cfg, 1)?
        .into_gray()
        .ok_or_else(|| Error::Config("auxiliary factor must have a categorical head".into()))?;
    let color = colorize(&pair.cond, &gray, cfg)?;
    Ok((gray, color))
}

/// Samples every pyramid level from coarsest to finest; returns them finest first.
pub fn sample_pyramid<T: Element>(model: &PyramidModel<T>, cfg: &SampleConfig) -> Result<Vec<ImageU8>> {
    let top = model.spec.levels() - 1;
    let (h, w) = model.spec.resolution(top);
    let coarse = expect_rgb(sample_factor(&model.levels[top], h, w, None, cfg, top as u64)?)?;
    upsample_from(model, coarse, top, cfg)
}

/// Generates the finer levels given `lowres` at the resolution of `level`;
/// returns all levels from the finest down to `lowres`.
pub fn superres<T: Element>(
    model: &PyramidModel<T>,
    lowres: &ImageU8,
    level: usize,
    cfg: &SampleConfig,
) -> Result<Vec<ImageU8>> {
    if level >= model.spec.levels() {
        return Err(Error::Config(format!(
            "level {level} outside a {}-level pyramid",
            model.spec.levels()
        )));
    }
    let (h, w) = model.spec.resolution(level);
    if (lowres.height(), lowres.width()) != (h, w) {
        return Err(Error::InvalidArgument(format!(
            "level {level} is {h}x{w}, input is {}x{}",
            lowres.height(),
            lowres.width()
        )));
    }
    upsample_from(model, lowres.clone(), level, cfg)
}

fn upsample_from<T: Element>(
    model: &PyramidModel<T>,
    start: ImageU8,
    level: usize,
    cfg: &SampleConfig,
) -> Result<Vec<ImageU8>> {
    let mut out = vec![start];
    for l in (0..level).rev() {
        let (h, w) = model.spec.resolution(l);
        let aux = rgb_to_tensor(&[out.last().expect("non-empty")])?;
        out.push(expect_rgb(sample_factor(
            &model.levels[l],
            h,
            w,
            Some(&aux),
            cfg,
            l as u64,
        )?)?);
    }
    out.reverse();
    Ok(out)
}
