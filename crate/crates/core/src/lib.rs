pub mod error;
pub mod tensor;

pub use error::{Error, ErrorCategory, Result};
pub mod auxiliary;
pub mod evaluation;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod nn;
pub mod sampling;
pub mod training;
pub mod workflow;
