//! Few-shot anomaly synthesis by mask-guided diffusion inpainting.
//!
//! The crate bundles the sampler math (forward diffusion, DDIM and
//! mask-localized noise injection), perturbed-prompt fine-tuning of a small
//! convolutional denoiser, context-aware relocation of anomaly masks, and
//! the generation metrics used to evaluate the results.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cama;
pub mod denoiser;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod sampler;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{BinaryMask, Grid, Image, LatentGrid, Point};
