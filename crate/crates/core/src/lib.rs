//! Cross-camera colorization of a high-resolution grayscale target from a
//! low-resolution color reference.
//!
//! The pipeline upsamples the reference, estimates multi-scale flow,
//! encodes both inputs into feature pyramids, warps the color features onto
//! the target grid, measures warp errors as visibility maps and fuses
//! everything in a U-Net style decoder.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod encoders;
pub mod error;
pub mod flow_estimator;
pub mod fusion_decoder;
pub mod imageops;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod trainer;
pub mod visibility;
pub mod warp;

pub use error::{Error, Result};
