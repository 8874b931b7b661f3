//! Collaborative downscaling: optimize the high- and low-resolution inputs of
//! a fixed downscale/upscale chain so the stored low-resolution image
//! reconstructs its original better.

pub mod collab;
pub mod diffpipe;
pub mod error;
pub mod experiments;
pub mod hcd;
pub mod imaging;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Rng, Shape, Tensor};
