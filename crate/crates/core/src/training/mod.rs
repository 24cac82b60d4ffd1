//! Maximum-likelihood training of each factor on its own, with Adam and
//! per-step exponential learning-rate decay.

mod adam;
pub mod checkpoint;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, Record};
pub use trainer::{
    factor_seed, train_aux, train_cond, train_factor, train_pair, train_pyramid, EpochHook, EpochRecord, StepRecord,
    TrainConfig, TrainOptions, TrainReport,
};
