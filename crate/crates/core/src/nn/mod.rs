//! Masked autoregressive networks, the unmasked embedding network and the
//! layers they share.

mod embed;
mod layers;
mod net;
mod params;

pub use embed::{EmbedConfig, EmbeddingNet};
pub use layers::{Conv2d, DropoutCtx, MaskKind, ResidualBlock};
pub use net::{gray_to_tensor, rgb_to_tensor, AutoregressiveNet, NetConfig};
pub use params::{ParamId, ParamSet, INIT_STD};
