//! Face-swap detection from style features.
//!
//! Two detectors share one feature pipeline: multi-layer Gram-matrix style
//! features are extracted from a reference (known real) image and a
//! suspicious image, then either
//!
//! * a pair classifier trained with BCE plus the stacked identity loss
//!   predicts whether the pair is real-real, or
//! * a dual-encoder autoencoder trained only on real-real pairs fuses the two
//!   latents with a Hadamard product, and a reconstruction error above a
//!   calibrated `μ + kσ` threshold flags the suspicious image.

pub mod anomaly;
pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod layout;
pub mod pipeline;
pub mod losses;
pub mod nn;
pub mod util;
pub mod verdict;

pub use error::{Error, Result};
