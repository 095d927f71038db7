//! File formats, training driver, sampling/analysis pipeline and CLI for the
//! toy cross-frame guided video diffusion model in `fancyvideo-core`.

pub mod blob;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod images;
pub mod pipeline;
pub mod tables;

pub use error::{Error, Result};
