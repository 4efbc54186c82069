//! File formats and command implementations around `replay-core`: WAV
//! input, dataset directories, checkpoint files, and the inspection dumps.

pub mod checkpoint;
pub mod commands;
pub mod dataset;
mod error;
pub mod formats;
pub mod wav;

pub use error::{Error, Result};
