pub mod alignment;
pub mod audio_encoder;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod model;
pub mod nn;
pub mod real;
pub mod robustness;
pub mod trainer;
pub mod visual_encoder;

pub use error::{ErrorKind, PaseError, Result};
pub use real::Real;
