//! Raster-order sampling from trained factors, with an optional activation
//! cache that makes each pixel cost a single-position forward pass.

mod cache;
mod sampler;

pub use cache::ActivationCache;
pub use sampler::{colorize, sample_factor, sample_pair, sample_pyramid, sample_rgb, superres, Sampled};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use crate::likelihood::SampleMode;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub mode: SampleMode,
    pub seed: u64,
    pub use_cache: bool,
}

impl SampleConfig {
    pub fn new(mode: SampleMode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            use_cache: true,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Words of ChaCha output reserved per pixel; a pixel draw uses at most 8.
const WORDS_PER_PIXEL: u128 = 64;

/// Random stream for one pixel, keyed by `(seed, stream, position)`, so any
/// evaluation order consumes the same randomness.
pub fn pixel_rng(seed: u64, stream: u64, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(position as u128 * WORDS_PER_PIXEL);
    rng
}

/// Seed of the `index`-th image in a batch (splitmix64 finalizer).
pub fn image_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
