use rand::Rng;

use super::layers::{Conv2d, ConvSpec, DropoutCtx, MaskKind, ResidualBlock};
use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::likelihood::HeadKind;
use crate::tensor::{Element, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Image channels consumed (3 for RGB, 1 for 4-bit gray).
    pub in_channels: usize,
    pub n_blocks: usize,
    pub n_filters: usize,
    pub kernel: usize,
    pub head: HeadKind,
    /// Channels of the conditioning embedding, if the net is conditional.
    pub cond_channels: Option<usize>,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.n_filters == 0 || self.in_channels == 0 {
            return Err(Error::Config("filters and input channels must be positive".into()));
        }
        if self.in_channels != self.head.image_channels() {
            return Err(Error::Config(format!(
                "head scores {} channels but net consumes {}",
                self.head.image_channels(),
                self.in_channels
            )));
        }
        Ok(())
    }
}

/// Masked-convolution network mapping an image to per-pixel likelihood
/// parameters. The output at raster position `i` depends only on pixels
/// strictly before `i` and on the conditioning embedding.
#[derive(Debug, Clone)]
pub struct AutoregressiveNet<T: Element = f32> {
    config: NetConfig,
    params: ParamSet<T>,
    pub(crate) input: Conv2d<T>,
    pub(crate) blocks: Vec<ResidualBlock<T>>,
    pub(crate) head: Conv2d<T>,
    initialized: bool,
}

impl<T: Element> AutoregressiveNet<T> {
    /// Randomly initialized network.
    pub fn new(config: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::default();
        let f = config.n_filters;
        let input = Conv2d::new(
            &mut params,
            "input",
            ConvSpec {
                in_c: config.in_channels,
                out_c: f,
                kernel: config.kernel,
                stride: 1,
                mask: Some(MaskKind::A),
                bias: true,
            },
            rng,
        );
        let blocks = (0..config.n_blocks)
            .map(|b| {
                ResidualBlock::new(
                    &mut params,
                    &format!("block{b}"),
                    f,
                    config.kernel,
                    Some(MaskKind::B),
                    config.cond_channels,
                    rng,
                )
            })
            .collect();
        let head = Conv2d::new(
            &mut params,
            "head",
            ConvSpec {
                in_c: f,
                out_c: config.head.channels(),
                kernel: 1,
                stride: 1,
                mask: Some(MaskKind::B),
                bias: true,
            },
            rng,
        );
        Ok(Self {
            config,
            params,
            input,
            blocks,
            head,
            initialized: true,
        })
    }

    /// Same architecture with all-zero parameters, flagged uninitialized
    /// until parameters are loaded.
    pub fn uninitialized(config: NetConfig) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(config, &mut rng)?;
        net.params.fill_zero();
        net.initialized = false;
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn load_params(&mut self, params: &ParamSet<T>) -> Result<()> {
        self.params.load(params)?;
        self.initialized = true;
        Ok(())
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn head(&self) -> HeadKind {
        self.config.head
    }

    fn check_inputs(&self, image: &Tensor<T>, embedding: Option<&Tensor<T>>) -> Result<()> {
        let (_, c, h, w) = image.dims4("autoregressive forward")?;
        if c != self.config.in_channels {
            return Err(Error::ShapeMismatch {
                op: "autoregressive forward",
                axis: 1,
                expected: self.config.in_channels,
                got: c,
            });
        }
        if let Some(e) = embedding {
            let (en, ec, eh, ew) = e.dims4("embedding")?;
            let checks = [
                (0, image.shape()[0], en),
                (1, self.config.cond_channels.unwrap_or(ec), ec),
                (2, h, eh),
                (3, w, ew),
            ];
            for (axis, expected, got) in checks {
                if expected != got {
                    return Err(Error::ShapeMismatch {
                        op: "embedding",
                        axis,
                        expected,
                        got,
                    });
                }
            }
        }
        Ok(())
    }

    /// Records a forward pass. `bound` are this net's parameters on `tape`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        image: Var,
        embedding: Option<Var>,
        mut dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<Var> {
        self.check_inputs(tape.value(image), embedding.map(|e| tape.value(e)))?;
        let mut h = self.input.forward(tape, bound, image)?;
        for block in &self.blocks {
            h = block.forward(tape, bound, h, embedding, dropout.as_deref_mut())?;
        }
        self.head.forward(tape, bound, h)
    }

    /// Evaluation-mode forward pass: `[N, P, H, W]` head parameters.
    pub fn forward(&self, image: &Tensor<T>, embedding: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let e = embedding.map(|e| tape.constant(e.clone()));
        let out = self.forward_on_tape(&mut tape, &bound, x, e, None)?;
        Ok(tape.value(out).clone())
    }
}

/// Maps 8-bit RGB images to an `[N, 3, H, W]` tensor on `[-1, 1]` via `x / 127.5 - 1`.
pub fn rgb_to_tensor<T: Element>(images: &[&crate::auxiliary::ImageU8]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::InvalidArgument("mixed resolutions in batch".into()));
        }
        data.extend(img.planar().iter().map(|&v| T::from_f64(v as f64 / 127.5 - 1.0)));
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

/// Maps 4-bit gray images to an `[N, 1, H, W]` tensor on `[-1, 1]` via `g / 7.5 - 1`.
pub fn gray_to_tensor<T: Element>(images: &[&crate::auxiliary::GrayImage4]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::InvalidArgument("mixed resolutions in batch".into()));
        }
        data.extend(img.data().iter().map(|&v| T::from_f64(v as f64 / 7.5 - 1.0)));
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}
