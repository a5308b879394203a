//! Forward diffusion and the reverse DDIM / masked-noise-injection updates.

use rand::Rng;

use crate::denoiser::{InpaintCondition, LatentCodec, NoisePredictor};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image, LatentGrid};
use crate::prompt::{GppConfig, PromptEmbedding};
use crate::schedule::{lambda_decay, MgniConfig, NoiseSchedule};

/// `z_t = √ᾱ_t z_0 + √(1−ᾱ_t) ε`, with `t = 0` returning `z_0`.
pub fn forward_diffuse(z0: &LatentGrid, t: usize, eps: &LatentGrid, schedule: &NoiseSchedule) -> Result<LatentGrid> {
    z0.ensure_same_shape(eps, "forward diffusion")?;
    let ab = schedule.alpha_bar(t)?;
    Ok(diffuse_with(z0, eps, ab))
}

pub(crate) fn diffuse_with(z0: &LatentGrid, eps: &LatentGrid, alpha_bar: f64) -> LatentGrid {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let mut out = z0.clone();
    for (o, e) in out.data_mut().iter_mut().zip(eps.data()) {
        *o = a * *o + b * e;
    }
    out
}

/// `√ᾱ_{t−1} (z_t − √(1−ᾱ_t) ε̂) / √ᾱ_t + √(1−ᾱ_{t−1}) ε̂`.
pub fn ddim_update(z_t: &LatentGrid, eps: &LatentGrid, alpha_bar: f64, alpha_bar_prev: f64) -> LatentGrid {
    let (sa, s1a) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let (sp, s1p) = (alpha_bar_prev.sqrt(), (1.0 - alpha_bar_prev).sqrt());
    let mut out = z_t.clone();
    for (o, &e) in out.data_mut().iter_mut().zip(eps.data()) {
        *o = sp * ((*o - s1a * e) / sa) + s1p * e;
    }
    out
}

/// Current latent and noise level of one reverse trajectory.
#[derive(Debug, Clone)]
pub struct SamplerState<'s, R> {
    z: LatentGrid,
    t: usize,
    schedule: &'s NoiseSchedule,
    pub rng: R,
}

impl<'s, R: Rng> SamplerState<'s, R> {
    /// Starts at the noisiest level `T`.
    pub fn new(z: LatentGrid, schedule: &'s NoiseSchedule, rng: R) -> Result<Self> {
        Self::at_level(z, schedule.len(), schedule, rng)
    }

    pub fn at_level(z: LatentGrid, t: usize, schedule: &'s NoiseSchedule, rng: R) -> Result<Self> {
        if t > schedule.len() {
            return Err(Error::StepOutOfRange {
                step: t,
                steps: schedule.len(),
            });
        }
        if !z.is_finite() {
            return Err(Error::Parameter("sampler latent has non-finite entries".into()));
        }
        Ok(SamplerState { z, t, schedule, rng })
    }

    pub fn z(&self) -> &LatentGrid {
        &self.z
    }

    /// Current 1-based level; 0 once the trajectory is finished.
    pub fn level(&self) -> usize {
        self.t
    }

    pub fn schedule(&self) -> &'s NoiseSchedule {
        self.schedule
    }

    pub fn into_latent(self) -> LatentGrid {
        self.z
    }

    /// Moves to level `t − 1` with the given latent.
    pub fn advance(&mut self, z: LatentGrid) -> Result<()> {
        if self.t == 0 {
            return Err(Error::StepOutOfRange {
                step: 0,
                steps: self.schedule.len(),
            });
        }
        if !z.is_finite() {
            return Err(Error::Parameter(format!("non-finite latent after level {}", self.t)));
        }
        self.z = z;
        self.t -= 1;
        Ok(())
    }

    fn levels(&self) -> Result<(f64, f64)> {
        if self.t == 0 {
            return Err(Error::StepOutOfRange {
                step: 0,
                steps: self.schedule.len(),
            });
        }
        Ok((self.schedule.alpha_bar(self.t)?, self.schedule.alpha_bar(self.t - 1)?))
    }
}

/// One deterministic DDIM update from the state's level `t` to `t − 1`.
pub fn ddim_step<R: Rng, P: NoisePredictor + ?Sized>(
    state: &SamplerState<'_, R>,
    background: &LatentGrid,
    mask: &BinaryMask,
    prompt: &[f64],
    predictor: &P,
) -> Result<LatentGrid> {
    let (ab, ab_prev) = state.levels()?;
    let cond = InpaintCondition::new(&state.z, background, mask)?;
    let eps = predictor.predict_noise(&cond, state.t, prompt)?;
    state.z.ensure_same_shape(&eps, "predicted noise")?;
    Ok(ddim_update(&state.z, &eps, ab, ab_prev))
}

/// DDIM update plus `√(1−ᾱ_{t−1}) √λ(t) M η_t` inside `noise_mask`.
///
/// `η_t` is drawn over the whole grid on every call, so the random stream
/// does not depend on the mask or on `λ`. Positions where the added term is
/// zero keep the DDIM value bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn mgni_step<R: Rng, P: NoisePredictor + ?Sized>(
    state: &mut SamplerState<'_, R>,
    background: &LatentGrid,
    cond_mask: &BinaryMask,
    prompt: &[f64],
    predictor: &P,
    cfg: &MgniConfig,
    noise_mask: &BinaryMask,
) -> Result<LatentGrid> {
    state.z.ensure_mask_fits(noise_mask, "noise mask")?;
    let mut next = ddim_step(state, background, cond_mask, prompt, predictor)?;
    let (_, ab_prev) = state.levels()?;
    let t_norm = state.schedule.normalized_level(state.t)?;
    let lambda = lambda_decay(t_norm, cfg);
    let (c, h, w) = next.shape();
    let eta = LatentGrid::standard_normal(c, h, w, &mut state.rng);
    if lambda > 0.0 {
        let scale = (1.0 - ab_prev).sqrt() * lambda.sqrt();
        let plane = h * w;
        for ch in 0..c {
            for (p, &m) in noise_mask.data().iter().enumerate() {
                if m {
                    let i = ch * plane + p;
                    next.data_mut()[i] += scale * eta.data()[i];
                }
            }
        }
    }
    Ok(next)
}

/// Runs every reverse level from the state's current one down to 0.
pub fn denoise<R: Rng, P: NoisePredictor + ?Sized>(
    state: &mut SamplerState<'_, R>,
    background: &LatentGrid,
    mask: &BinaryMask,
    prompt: &[f64],
    predictor: &P,
    cfg: &MgniConfig,
) -> Result<()> {
    while state.level() > 0 {
        let next = mgni_step(state, background, mask, prompt, predictor, cfg, mask)?;
        state.advance(next)?;
    }
    Ok(())
}

/// Everything the sampler needs besides the image, mask and randomness.
#[derive(Debug, Clone, Copy)]
pub struct InpaintSetup<'a, P: ?Sized> {
    pub predictor: &'a P,
    pub schedule: &'a NoiseSchedule,
    pub embedding: &'a PromptEmbedding,
    pub gpp: GppConfig,
    pub mgni: MgniConfig,
    pub codec: LatentCodec,
}

/// Masked inpainting of `normal` under `mask`.
///
/// Draw order from `rng`: the perturbed prompt, the initial latent, then one
/// `η` grid per level. Pixels outside the mask are copied from `normal`.
pub fn sample_inpaint<R: Rng, P: NoisePredictor + ?Sized>(
    normal: &Image,
    mask: &BinaryMask,
    setup: &InpaintSetup<'_, P>,
    rng: &mut R,
) -> Result<Image> {
    normal.ensure_mask_fits(mask, "inpainting input")?;
    let background = setup.codec.encode(&normal.masked_out(mask)?)?;
    let latent_mask = setup.codec.encode_mask(mask)?;
    let prompt = setup.embedding.perturb(&setup.gpp, rng);
    let (c, h, w) = background.shape();
    let z_start = LatentGrid::standard_normal(c, h, w, rng);
    let mut state = SamplerState::new(z_start, setup.schedule, &mut *rng)?;
    denoise(&mut state, &background, &latent_mask, &prompt, setup.predictor, &setup.mgni)?;
    let decoded = setup.codec.decode(state.z())?;
    normal.composite(&decoded, mask)
}
