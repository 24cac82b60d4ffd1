//! Composition of autoregressive factors into the joint models
//! `p(X, X̂) = p(X̂) p(X | X̂)`: the grayscale-auxiliary pair, the multi-scale
//! pyramid and the flat baseline.

use rand::Rng;

use crate::auxiliary::{downsample2x, quantize_grayscale, ImageU8, PyramidSpec};
use crate::error::{Error, Result};
use crate::likelihood::{categorical, dmol, HeadKind};
use crate::nn::{gray_to_tensor, rgb_to_tensor, AutoregressiveNet, DropoutCtx, EmbedConfig, EmbeddingNet, NetConfig};
use crate::tensor::{Element, Tape, Tensor, Var};

/// What a factor models, and which auxiliary view (if any) it is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    /// `p(ψ(X))` with ψ the 4-bit grayscale quantization.
    GrayAux,
    /// Unconditional RGB model.
    Rgb,
    /// `p(X | ψ(X))` with ψ the 4-bit grayscale quantization.
    ColorFromGray,
    /// `p(X | downsample2x(X))`.
    RgbFromLowres,
}

impl FactorKind {
    pub fn head(self, components: usize) -> HeadKind {
        match self {
            FactorKind::GrayAux => HeadKind::Categorical16,
            _ => HeadKind::Dmol { components },
        }
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, FactorKind::ColorFromGray | FactorKind::RgbFromLowres)
    }

    /// Channels of the auxiliary image fed to the embedding net.
    pub fn aux_channels(self) -> Option<usize> {
        match self {
            FactorKind::ColorFromGray => Some(1),
            FactorKind::RgbFromLowres => Some(3),
            _ => None,
        }
    }

    /// Required embedding scale (`log2(target / aux)` resolution).
    pub fn embed_scale_log2(self) -> i32 {
        match self {
            FactorKind::RgbFromLowres => 1,
            _ => 0,
        }
    }
}

/// Network inputs, discrete targets and auxiliary input for a batch of images.
#[derive(Debug, Clone)]
pub struct FactorBatch<T: Element> {
    pub input: Tensor<T>,
    /// Planar `[N, C, H, W]` target bytes.
    pub targets: Vec<u8>,
    pub aux: Option<Tensor<T>>,
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
}

impl<T: Element> FactorBatch<T> {
    pub fn from_images(kind: FactorKind, images: &[&ImageU8]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (height, width) = (first.height(), first.width());
        let (input, targets) = match kind {
            FactorKind::GrayAux => {
                let grays: Vec<_> = images.iter().map(|i| quantize_grayscale(i)).collect();
                let refs: Vec<_> = grays.iter().collect();
                let targets = grays.iter().flat_map(|g| g.data().iter().copied()).collect();
                (gray_to_tensor(&refs)?, targets)
            }
            _ => (rgb_to_tensor(images)?, images.iter().flat_map(|i| i.planar()).collect()),
        };
        let aux = match kind {
            FactorKind::ColorFromGray => {
                let grays: Vec<_> = images.iter().map(|i| quantize_grayscale(i)).collect();
                Some(gray_to_tensor(&grays.iter().collect::<Vec<_>>())?)
            }
            FactorKind::RgbFromLowres => {
                let low = images.iter().map(|i| downsample2x(i)).collect::<Result<Vec<_>>>()?;
                Some(rgb_to_tensor(&low.iter().collect::<Vec<_>>())?)
            }
            _ => None,
        };
        Ok(Self {
            input,
            targets,
            aux,
            n_images: images.len(),
            height,
            width,
        })
    }

    /// Color dimensions per image (`3 * H * W`), the bpd normalizer for every factor.
    pub fn color_dims(&self) -> usize {
        3 * self.height * self.width
    }
}

/// One factor of a joint model: an autoregressive net, plus an embedding net
/// when the factor is conditional.
#[derive(Debug, Clone)]
pub struct Factor<T: Element = f32> {
    pub kind: FactorKind,
    pub net: AutoregressiveNet<T>,
    pub embed: Option<EmbeddingNet<T>>,
}

/// Architecture knobs shared by the model builders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    pub blocks: usize,
    pub filters: usize,
    pub kernel: usize,
    pub components: usize,
    pub embed_blocks: usize,
    pub embed_filters: usize,
    pub embed_down: Vec<usize>,
    pub embed_up: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            filters: 16,
            kernel: 3,
            components: dmol::DEFAULT_COMPONENTS,
            embed_blocks: 2,
            embed_filters: 16,
            embed_down: vec![],
            embed_up: vec![],
        }
    }
}

impl ArchConfig {
    pub fn net_config(&self, kind: FactorKind) -> NetConfig {
        let head = kind.head(self.components);
        NetConfig {
            in_channels: head.image_channels(),
            n_blocks: self.blocks,
            n_filters: self.filters,
            kernel: self.kernel,
            head,
            cond_channels: kind.is_conditional().then_some(self.embed_filters),
        }
    }

    pub fn embed_config(&self, kind: FactorKind) -> Option<EmbedConfig> {
        kind.aux_channels().map(|in_channels| EmbedConfig {
            in_channels,
            n_blocks: self.embed_blocks,
            n_filters: self.embed_filters,
            kernel: self.kernel,
            downsample_after: self.embed_down.clone(),
            upsample_after: self.embed_up.clone(),
        })
    }
}

impl<T: Element> Factor<T> {
    pub fn new(kind: FactorKind, arch: &ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        let net = AutoregressiveNet::new(arch.net_config(kind), rng)?;
        let embed = match arch.embed_config(kind) {
            Some(cfg) => {
                if cfg.scale_log2() != kind.embed_scale_log2() {
                    return Err(Error::Config(format!(
                        "{kind:?} needs an embedding net with net scale 2^{}, configured 2^{}",
                        kind.embed_scale_log2(),
                        cfg.scale_log2()
                    )));
                }
                Some(EmbeddingNet::new(cfg, rng)?)
            }
            None => None,
        };
        Ok(Self { kind, net, embed })
    }

    pub fn uninitialized(kind: FactorKind, arch: &ArchConfig) -> Result<Self> {
        Ok(Self {
            kind,
            net: AutoregressiveNet::uninitialized(arch.net_config(kind))?,
            embed: arch.embed_config(kind).map(EmbeddingNet::uninitialized).transpose()?,
        })
    }

    pub fn head(&self) -> HeadKind {
        self.net.head()
    }

    /// Summed NLL (nats) of a batch, recorded on `tape`.
    pub fn nll_on_tape(
        &self,
        tape: &mut Tape<T>,
        net_vars: &[Var],
        embed_vars: Option<&[Var]>,
        batch: &FactorBatch<T>,
        dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<Var> {
        let x = tape.constant(batch.input.clone());
        let emb = match (&self.embed, &batch.aux, embed_vars) {
            (Some(e), Some(aux), Some(vars)) => {
                let a = tape.constant(aux.clone());
                Some(e.forward_on_tape(tape, vars, a)?)
            }
            (None, None, _) => None,
            _ => {
                return Err(Error::InvalidArgument(
                    "conditional factor needs its embedding parameters and an auxiliary input".into(),
                ))
            }
        };
        let params = self.net.forward_on_tape(tape, net_vars, x, emb, dropout)?;
        match self.head() {
            HeadKind::Dmol { components } => dmol::dmol_nll_on_tape(tape, params, &batch.targets, components),
            HeadKind::Categorical16 => categorical::categorical_nll_on_tape(tape, params, &batch.targets),
        }
    }

    /// Embedding of an auxiliary tensor, or `None` for unconditional factors.
    pub fn embedding(&self, aux: Option<&Tensor<T>>) -> Result<Option<Tensor<T>>> {
        match (&self.embed, aux) {
            (Some(e), Some(a)) => Ok(Some(e.embed(a)?)),
            (None, None) => Ok(None),
            (Some(_), None) => Err(Error::InvalidArgument(
                "conditional factor needs an auxiliary input".into(),
            )),
            (None, Some(_)) => Err(Error::InvalidArgument(
                "unconditional factor takes no auxiliary input".into(),
            )),
        }
    }

    /// Per-image NLL in nats, evaluated without dropout.
    pub fn nll_per_image(&self, batch: &FactorBatch<T>) -> Result<Vec<f64>> {
        let emb = self.embedding(batch.aux.as_ref())?;
        let params = self.net.forward(&batch.input, emb.as_ref())?;
        let (per_image, _) = match self.head() {
            HeadKind::Dmol { components } => dmol::dmol_nll_per_image(&params, &batch.targets, components, false)?,
            HeadKind::Categorical16 => categorical::categorical_nll_per_image(&params, &batch.targets, false)?,
        };
        Ok(per_image)
    }

    pub fn is_initialized(&self) -> bool {
        self.net.is_initialized()
    }
}

/// Grayscale-auxiliary model: `p(ψ(X))` times `p(X | ψ(X))`.
#[derive(Debug, Clone)]
pub struct AuxModelPair<T: Element = f32> {
    pub aux: Factor<T>,
    pub cond: Factor<T>,
}

impl<T: Element> AuxModelPair<T> {
    pub fn new(arch: &ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            aux: Factor::new(FactorKind::GrayAux, arch, rng)?,
            cond: Factor::new(FactorKind::ColorFromGray, arch, rng)?,
        })
    }
}

/// Multi-scale model. `levels[0]` is the finest resolution; the last level is
/// unconditional and every other level is conditioned on the next one.
#[derive(Debug, Clone)]
pub struct PyramidModel<T: Element = f32> {
    pub spec: PyramidSpec,
    pub levels: Vec<Factor<T>>,
}

impl<T: Element> PyramidModel<T> {
    pub fn new(spec: PyramidSpec, arch: &ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        let levels = (0..spec.levels())
            .map(|l| Factor::new(Self::level_kind(spec, l), arch, rng))
            .collect::<Result<_>>()?;
        Ok(Self { spec, levels })
    }

    pub fn level_kind(spec: PyramidSpec, level: usize) -> FactorKind {
        if level + 1 == spec.levels() {
            FactorKind::Rgb
        } else {
            FactorKind::RgbFromLowres
        }
    }
}
