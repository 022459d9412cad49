//! Zero-reference low-light image enhancement by deep curve estimation.
//!
//! A small CNN predicts per-pixel parameters for an iterated quadratic curve
//! `x + a * x * (1 - x)`; the curve is applied to the input to brighten (or darken) it.
//! Training needs no reference images: four non-reference losses (spatial consistency,
//! exposure control, colour constancy, illumination smoothness) supervise the network.
//!
//! Everything runs on the CPU with a small reverse-mode autodiff tape in [`tensor`].
//! See the crate's `examples/` directory for one runnable program per capability.

pub mod audit;
pub mod cli;
pub mod curve;
pub mod error;
pub mod image_io;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod parallel;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
