//! Few-shot fine-tuning with the perturbed-prompt inpainting loss.

mod adamw;

pub use adamw::AdamW;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{InpaintCondition, LatentCodec, NoisePredictor, TrainableDenoiser};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image, LatentGrid};
use crate::prompt::{GppConfig, PromptEmbedding};
use crate::sampler::diffuse_with;
use crate::schedule::NoiseSchedule;

/// An anomaly image with its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyExemplar {
    image: Image,
    mask: BinaryMask,
    label: String,
    id: String,
}

impl AnomalyExemplar {
    pub fn new(image: Image, mask: BinaryMask, label: impl Into<String>, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        image.ensure_mask_fits(&mask, &format!("exemplar {id}"))?;
        if mask.is_empty() {
            return Err(Error::EmptyMask(format!("exemplar {id} has an empty mask")));
        }
        Ok(AnomalyExemplar {
            image,
            mask,
            label: label.into(),
            id,
        })
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

/// One drawn training target: `z_t^inp = concat(z_t, b_A, M)`, the level,
/// the noise to recover and the prompt vector used.
#[derive(Debug, Clone)]
pub struct TrainingDraw {
    pub z_t: LatentGrid,
    pub background: LatentGrid,
    pub mask: BinaryMask,
    pub t: usize,
    pub eps: LatentGrid,
    pub prompt: Vec<f64>,
}

impl TrainingDraw {
    pub fn condition(&self) -> Result<InpaintCondition<'_>> {
        InpaintCondition::new(&self.z_t, &self.background, &self.mask)
    }
}

/// Draws `t ~ U{1..T}`, then `ε`, then the prompt vector, in that order.
fn draw<R: Rng + ?Sized>(
    ex: &AnomalyExemplar,
    schedule: &NoiseSchedule,
    codec: LatentCodec,
    rng: &mut R,
    prompt: impl FnOnce(&mut R) -> Vec<f64>,
) -> Result<TrainingDraw> {
    let z0 = codec.encode(&ex.image)?;
    let background = codec.encode(&ex.image.masked_out(&ex.mask)?)?;
    let mask = codec.encode_mask(&ex.mask)?;
    let t = rng.random_range(1..=schedule.len());
    let (c, h, w) = z0.shape();
    let eps = LatentGrid::standard_normal(c, h, w, rng);
    let z_t = diffuse_with(&z0, &eps, schedule.alpha_bar(t)?);
    let prompt = prompt(rng);
    Ok(TrainingDraw {
        z_t,
        background,
        mask,
        t,
        eps,
        prompt,
    })
}

/// Draw with a freshly perturbed prompt `c_p`.
pub fn draw_gpp<R: Rng + ?Sized>(
    ex: &AnomalyExemplar,
    schedule: &NoiseSchedule,
    embedding: &PromptEmbedding,
    gpp: &GppConfig,
    codec: LatentCodec,
    rng: &mut R,
) -> Result<TrainingDraw> {
    draw(ex, schedule, codec, rng, |r| embedding.perturb(gpp, r))
}

fn squared_residual(eps: &LatentGrid, pred: &LatentGrid) -> Result<f64> {
    eps.ensure_same_shape(pred, "predicted noise")?;
    Ok(eps.data().iter().zip(pred.data()).map(|(e, p)| (e - p) * (e - p)).sum())
}

/// Everything the loss needs besides the batch, model and randomness.
#[derive(Debug, Clone, Copy)]
pub struct LossSetup<'a> {
    pub schedule: &'a NoiseSchedule,
    pub embedding: &'a PromptEmbedding,
    pub gpp: GppConfig,
    pub codec: LatentCodec,
}

/// Mean over the batch of `‖ε − ε_θ(z_t^inp, t, c_p)‖²`.
pub fn gpp_loss<R: Rng + ?Sized, P: NoisePredictor + ?Sized>(
    batch: &[&AnomalyExemplar],
    predictor: &P,
    setup: &LossSetup<'_>,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InsufficientSamples("loss needs a nonempty batch".into()));
    }
    let mut total = 0.0;
    for ex in batch {
        let d = draw_gpp(ex, setup.schedule, setup.embedding, &setup.gpp, setup.codec, rng)?;
        let pred = predictor.predict_noise(&d.condition()?, d.t, &d.prompt)?;
        total += squared_residual(&d.eps, &pred)?;
    }
    Ok(total / batch.len() as f64)
}

/// Unperturbed inpainting loss with a fixed conditioning vector.
pub fn ldm_loss<R: Rng + ?Sized, P: NoisePredictor + ?Sized>(
    batch: &[&AnomalyExemplar],
    predictor: &P,
    schedule: &NoiseSchedule,
    prompt: &[f64],
    codec: LatentCodec,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InsufficientSamples("loss needs a nonempty batch".into()));
    }
    let mut total = 0.0;
    for ex in batch {
        let d = draw(ex, schedule, codec, rng, |_| prompt.to_vec())?;
        let pred = predictor.predict_noise(&d.condition()?, d.t, &d.prompt)?;
        total += squared_residual(&d.eps, &pred)?;
    }
    Ok(total / batch.len() as f64)
}

/// Loss over pre-drawn targets together with its parameter gradient.
pub fn loss_and_grad(model: &TrainableDenoiser, draws: &[TrainingDraw]) -> Result<(f64, Vec<f64>)> {
    if draws.is_empty() {
        return Err(Error::InsufficientSamples("loss needs a nonempty batch".into()));
    }
    let n = draws.len() as f64;
    let mut grads = vec![0.0; model.param_count()];
    let mut total = 0.0;
    for d in draws {
        let (pred, cache) = model.forward(&d.condition()?, d.t, &d.prompt)?;
        total += squared_residual(&d.eps, &pred)?;
        let mut g = pred;
        for (gv, &e) in g.data_mut().iter_mut().zip(d.eps.data()) {
            *gv = 2.0 * (*gv - e) / n;
        }
        model.backward(&cache, &g, &mut grads)?;
    }
    Ok((total / n, grads))
}

/// [`gpp_loss`] plus its gradient; consumes randomness identically.
pub fn gpp_loss_and_grad<R: Rng + ?Sized>(
    batch: &[&AnomalyExemplar],
    model: &TrainableDenoiser,
    setup: &LossSetup<'_>,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let draws = batch
        .iter()
        .map(|ex| draw_gpp(ex, setup.schedule, setup.embedding, &setup.gpp, setup.codec, rng))
        .collect::<Result<Vec<_>>>()?;
    loss_and_grad(model, &draws)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub gpp: GppConfig,
    pub codec: LatentCodec,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("steps and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Parameter("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }

    /// Mean loss over the first and last `window` steps.
    pub fn head_tail_means(&self, window: usize) -> (f64, f64) {
        let w = window.clamp(1, self.losses.len());
        let head = self.losses[..w].iter().sum::<f64>() / w as f64;
        let tail = self.losses[self.losses.len() - w..].iter().sum::<f64>() / w as f64;
        (head, tail)
    }
}

/// Runs `cfg.steps` AdamW steps on batches drawn with replacement.
pub fn train(
    exemplars: &[AnomalyExemplar],
    model: &mut TrainableDenoiser,
    embedding: &PromptEmbedding,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if exemplars.is_empty() {
        return Err(Error::InsufficientSamples("training needs at least one exemplar".into()));
    }
    cfg.validate()?;
    let setup = LossSetup {
        schedule,
        embedding,
        gpp: cfg.gpp,
        codec: cfg.codec,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(model.param_count(), cfg.lr, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<&AnomalyExemplar> = (0..cfg.batch_size)
            .map(|_| &exemplars[rng.random_range(0..exemplars.len())])
            .collect();
        let (loss, grads) = gpp_loss_and_grad(&batch, model, &setup, &mut rng)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        opt.step(model.params_mut(), &grads);
        log::debug!("step {step}: loss {loss:.6}");
        losses.push(loss);
    }
    Ok(TrainReport { losses })
}

/// First `⌊n/3⌋` items train, the rest test. Input must already be in
/// canonical (sorted filename) order.
pub fn split_train_test<T: Clone>(items: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::InsufficientSamples("cannot split an empty class".into()));
    }
    let n_train = items.len() / 3;
    if n_train == 0 {
        log::warn!("{} anomaly images give an empty training split", items.len());
    }
    Ok((items[..n_train].to_vec(), items[n_train..].to_vec()))
}

/// Two-column `step loss` text.
pub fn format_loss_curve(losses: &[f64]) -> String {
    let mut out = String::from("# step loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{i} {l:.9e}");
    }
    out
}

pub fn write_loss_curve(path: &Path, losses: &[f64]) -> Result<()> {
    std::fs::write(path, format_loss_curve(losses)).map_err(|e| Error::io(path, e))
}
