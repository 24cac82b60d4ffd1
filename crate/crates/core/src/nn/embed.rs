use rand::Rng;

use super::layers::{Conv2d, ConvSpec, ResidualBlock};
use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedConfig {
    pub in_channels: usize,
    pub n_blocks: usize,
    pub n_filters: usize,
    pub kernel: usize,
    /// 1-based block indices followed by a stride-2 downsampling conv.
    pub downsample_after: Vec<usize>,
    /// 1-based block indices followed by nearest ×2 upsampling and a conv.
    pub upsample_after: Vec<usize>,
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        for &i in self.downsample_after.iter().chain(&self.upsample_after) {
            if i == 0 || i > self.n_blocks {
                return Err(Error::Config(format!(
                    "resampling index {i} out of range for {} residual blocks",
                    self.n_blocks
                )));
            }
        }
        Ok(())
    }

    /// Net spatial scale as a power of two (`ups - downs`).
    pub fn scale_log2(&self) -> i32 {
        self.upsample_after.len() as i32 - self.downsample_after.len() as i32
    }

    /// Output extent for an input extent, if every downsampling divides evenly.
    pub fn output_extent(&self, extent: usize) -> Option<usize> {
        let mut e = extent;
        for b in 1..=self.n_blocks {
            for _ in self.downsample_after.iter().filter(|&&i| i == b) {
                if !e.is_multiple_of(2) {
                    return None;
                }
                e /= 2;
            }
            e *= 1 << self.upsample_after.iter().filter(|&&i| i == b).count();
        }
        Some(e)
    }
}

#[derive(Debug, Clone)]
enum Resample<T: Element> {
    Down(Conv2d<T>),
    Up(Conv2d<T>),
}

/// Unmasked convolutional embedding of an auxiliary image.
#[derive(Debug, Clone)]
pub struct EmbeddingNet<T: Element = f32> {
    config: EmbedConfig,
    params: ParamSet<T>,
    input: Conv2d<T>,
    blocks: Vec<ResidualBlock<T>>,
    /// Resampling layers applied after block `i` (0-based position in this vec).
    resample: Vec<Vec<Resample<T>>>,
}

impl<T: Element> EmbeddingNet<T> {
    pub fn new(config: EmbedConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::default();
        let f = config.n_filters;
        let k = config.kernel;
        let dense = |in_c, stride| ConvSpec {
            in_c,
            out_c: f,
            kernel: k,
            stride,
            mask: None,
            bias: true,
        };
        let input = Conv2d::new(&mut params, "input", dense(config.in_channels, 1), rng);
        let mut blocks = Vec::with_capacity(config.n_blocks);
        let mut resample = Vec::with_capacity(config.n_blocks);
        for b in 0..config.n_blocks {
            blocks.push(ResidualBlock::new(
                &mut params,
                &format!("block{b}"),
                f,
                k,
                None,
                None,
                rng,
            ));
            let mut after = Vec::new();
            for (j, _) in config.downsample_after.iter().filter(|&&i| i == b + 1).enumerate() {
                after.push(Resample::Down(Conv2d::new(
                    &mut params,
                    &format!("down{}_{j}", b + 1),
                    dense(f, 2),
                    rng,
                )));
            }
            for (j, _) in config.upsample_after.iter().filter(|&&i| i == b + 1).enumerate() {
                after.push(Resample::Up(Conv2d::new(
                    &mut params,
                    &format!("up{}_{j}", b + 1),
                    dense(f, 1),
                    rng,
                )));
            }
            resample.push(after);
        }
        Ok(Self {
            config,
            params,
            input,
            blocks,
            resample,
        })
    }

    pub fn uninitialized(config: EmbedConfig) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(config, &mut rng)?;
        net.params.fill_zero();
        Ok(net)
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.config
    }

    pub fn out_channels(&self) -> usize {
        self.config.n_filters
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn load_params(&mut self, params: &ParamSet<T>) -> Result<()> {
        self.params.load(params)
    }

    pub fn forward_on_tape(&self, tape: &mut Tape<T>, bound: &[Var], aux: Var) -> Result<Var> {
        let (_, c, h, w) = tape.value(aux).dims4("embed")?;
        if c != self.config.in_channels {
            return Err(Error::ShapeMismatch {
                op: "embed",
                axis: 1,
                expected: self.config.in_channels,
                got: c,
            });
        }
        for (axis, e) in [(2, h), (3, w)] {
            if self.config.output_extent(e).is_none() {
                return Err(Error::ShapeMismatch {
                    op: "embed downsampling",
                    axis,
                    expected: e + e % 2,
                    got: e,
                });
            }
        }
        let mut x = self.input.forward(tape, bound, aux)?;
        for (block, after) in self.blocks.iter().zip(&self.resample) {
            x = block.forward(tape, bound, x, None, None)?;
            for r in after {
                x = match r {
                    Resample::Down(conv) => conv.forward(tape, bound, x)?,
                    Resample::Up(conv) => {
                        let up = tape.upsample2x(x)?;
                        conv.forward(tape, bound, up)?
                    }
                };
            }
        }
        Ok(x)
    }

    /// Evaluation-mode embedding of `aux` (`[N, C, h, w]`).
    pub fn embed(&self, aux: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(aux.clone());
        let out = self.forward_on_tape(&mut tape, &bound, x)?;
        Ok(tape.value(out).clone())
    }
}
