//! Noise predictors and the latent codec.
//!
//! Every predictor sees the inpainting input `concat(z_t, b, M)` through an
//! [`InpaintCondition`] plus the prompt vector, and returns a noise estimate
//! shaped like `z_t`.

mod analytic;
mod checkpoint;
mod codec;
mod conv;

pub use analytic::AnalyticGaussian;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use codec::LatentCodec;
pub use conv::{ArchConfig, ForwardCache, TrainableDenoiser};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, LatentGrid};

/// Inpainting conditioning: noisy latent, encoded background and mask.
#[derive(Debug, Clone, Copy)]
pub struct InpaintCondition<'a> {
    z_t: &'a LatentGrid,
    background: &'a LatentGrid,
    mask: &'a BinaryMask,
}

impl<'a> InpaintCondition<'a> {
    pub fn new(z_t: &'a LatentGrid, background: &'a LatentGrid, mask: &'a BinaryMask) -> Result<Self> {
        if !z_t.same_shape(background) {
            return Err(Error::Conditioning(format!(
                "latent {:?} and background {:?} disagree",
                z_t.shape(),
                background.shape()
            )));
        }
        if (z_t.height(), z_t.width()) != (mask.height(), mask.width()) {
            return Err(Error::Conditioning(format!(
                "latent is {}x{} but mask is {}x{}",
                z_t.height(),
                z_t.width(),
                mask.height(),
                mask.width()
            )));
        }
        Ok(InpaintCondition { z_t, background, mask })
    }

    pub fn z_t(&self) -> &'a LatentGrid {
        self.z_t
    }

    pub fn background(&self) -> &'a LatentGrid {
        self.background
    }

    pub fn mask(&self) -> &'a BinaryMask {
        self.mask
    }
}

/// `ε_θ(z_t^inp, t, c)`. Implementations must be pure functions of their
/// inputs and parameters.
pub trait NoisePredictor: Send + Sync {
    /// `t` is the 1-based noise level.
    fn predict_noise(&self, cond: &InpaintCondition<'_>, t: usize, prompt: &[f64]) -> Result<LatentGrid>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict_noise(&self, cond: &InpaintCondition<'_>, t: usize, prompt: &[f64]) -> Result<LatentGrid> {
        (**self).predict_noise(cond, t, prompt)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Box<P> {
    fn predict_noise(&self, cond: &InpaintCondition<'_>, t: usize, prompt: &[f64]) -> Result<LatentGrid> {
        (**self).predict_noise(cond, t, prompt)
    }
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict_noise(&self, cond: &InpaintCondition<'_>, _t: usize, _prompt: &[f64]) -> Result<LatentGrid> {
        let (c, h, w) = cond.z_t().shape();
        Ok(LatentGrid::zeros(c, h, w))
    }
}
