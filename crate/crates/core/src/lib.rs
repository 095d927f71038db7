//! Core of a toy text+image-to-video diffusion model with cross-frame
//! textual guidance.
//!
//! Everything here is pure computation over `alloc`: tensors with tape-based
//! reverse-mode differentiation, attention kernels, the guidance block, the
//! v-prediction diffusion algebra, a small denoiser, a procedural training
//! corpus, Adam, and the attention/motion metrics used for analysis. File
//! formats, the CLI and training drivers live in the `fancyvideo` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod attention;
pub mod ctgm;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod fastmath;
pub mod gradcheck;
pub mod optim;
pub mod rng;
pub mod sampling;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
