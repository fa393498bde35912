//! Edge- and sketch-conditioned GAN for extreme face inpainting.

pub mod cli;
pub mod data;
pub mod error;
pub mod imaging;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod service;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
