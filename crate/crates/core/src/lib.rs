//! Musical distortion synthesis, declipping, and evaluation.
//!
//! The crate covers the whole pipeline: distortion effects (hard clip,
//! tanh soft clip, an overdrive emulation, wet/dry blending), reliability
//! masks for clipped audio, an analysis-sparsity declipper, an ideal ratio
//! mask oracle, a small trainable time-domain declipper, the SDR family of
//! metrics, dataset synthesis with JSON Lines manifests, and an evaluation
//! harness.

pub mod aspade;
pub mod corpus;
pub mod dft;
pub mod effects;
pub mod error;
pub mod harness;
pub mod irm;
pub mod metrics;
pub mod neural;
pub mod reliability;
pub mod resample;
pub mod signal;
pub mod stft;
pub mod wav;

pub use error::{Error, Result};
pub use signal::{Signal, CANONICAL_RATE};
