//! Two-stream video generation with multi-scale spatially-adaptive motion fusion.

pub mod bench;
pub mod cli;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::{Real, Tensor};
