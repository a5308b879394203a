//! Fixed anomaly-token embedding and Gaussian prompt perturbation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// The frozen conditioning vector `c` of the anomaly token.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    base: Vec<f64>,
}

impl PromptEmbedding {
    /// Draws the token vector once from `N(0, I/d)`.
    pub fn init(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("embedding dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let base = (0..dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(PromptEmbedding { base })
    }

    pub fn from_vec(base: Vec<f64>) -> Result<Self> {
        if base.is_empty() {
            return Err(Error::Parameter("embedding dimension must be positive".into()));
        }
        if base.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("embedding has non-finite entries".into()));
        }
        Ok(PromptEmbedding { base })
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// `c_p = c + δ`, `δ ~ N(0, σ² I)`, fresh on every call.
    ///
    /// The same routine serves training and sampling. With `σ = 0` the base
    /// vector is returned unchanged and no randomness is consumed.
    pub fn perturb<R: Rng + ?Sized>(&self, cfg: &GppConfig, rng: &mut R) -> Vec<f64> {
        if cfg.sigma == 0.0 {
            return self.base.clone();
        }
        self.base
            .iter()
            .map(|&c| c + cfg.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GppConfig {
    sigma: f64,
}

impl GppConfig {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma = {sigma} must be finite and >= 0")));
        }
        Ok(GppConfig { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}
