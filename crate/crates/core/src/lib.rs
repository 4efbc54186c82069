//! Saliency-driven audio replay classification.
//!
//! A clip is classified from its full log-mel spectrogram, a two-slot
//! attention selector picks the most discriminative time segments, and those
//! segments are re-analysed at a shorter hop length on the next pass. A
//! recurrent latent decoder fuses the passes and a shared head classifies
//! every pass; inference averages the per-pass probabilities.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. File formats, the CLI and directory handling live in the
//! companion `replay` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod config;
pub mod decoder;
pub mod diagnostics;
pub mod dsp;
pub mod encoder;
mod error;
pub mod loss;
pub(crate) mod math;
pub mod matrix;
pub mod metrics;
pub mod mixup;
pub mod model;
pub mod nn;
pub mod slots;
pub mod synth;
pub mod train;

pub use config::{FrontendConfig, LabelMode, LossConfig, ModelConfig, SelectionConfig, TrainConfig};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::ReplayModel;
