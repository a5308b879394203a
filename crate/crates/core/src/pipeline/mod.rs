//! Dataset-level orchestration: training a class, generating image/mask
//! pairs with a manifest, and evaluating generations.

pub mod config;
pub mod dataset;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cama::{align, foreground_mask, Alignment, PatchDescriptor};
use crate::denoiser::{Checkpoint, NoisePredictor, TrainableDenoiser};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image};
use crate::io::{write_image, write_mask};
use crate::metrics::{extract_features, ic_lpips_features, kid, FeatureConfig, KidScore};
use crate::prompt::PromptEmbedding;
use crate::sampler::{sample_inpaint, InpaintSetup};
use crate::trainer::{train, AnomalyExemplar, TrainReport};

pub use config::PipelineConfig;
pub use dataset::{ingest, AnomalyFiles, ClassLayout, DatasetLayout};

pub const MANIFEST_HEADER: &str = "# magic-manifest v1";
pub const MANIFEST_COLUMNS: &str =
    "# output\tmask\tnormal\texemplar\tseed\tstream\ta\tsigma\tschedule\tcama_fallback\tstatus";
pub const MANIFEST_FILE: &str = "manifest.tsv";

/// Independent fair-coin horizontal and vertical flips.
pub fn augment_mask<R: Rng + ?Sized>(mask: &BinaryMask, rng: &mut R) -> BinaryMask {
    let flip_h = rng.random_bool(0.5);
    let flip_v = rng.random_bool(0.5);
    let mut out = mask.clone();
    if flip_h {
        out = out.flipped_horizontal();
    }
    if flip_v {
        out = out.flipped_vertical();
    }
    out
}

/// Trains a fresh denoiser on the training split of one class.
pub fn train_class(class: &ClassLayout, cfg: &PipelineConfig) -> Result<(Checkpoint, TrainReport)> {
    cfg.validate()?;
    let exemplars = class.train_exemplars()?;
    let channels = exemplars[0].image().channels();
    let mut model = TrainableDenoiser::new(cfg.arch(channels), cfg.seed)?;
    let embedding = PromptEmbedding::init(cfg.embed_dim, cfg.embed_seed)?;
    let schedule = cfg.schedule()?;
    log::info!(
        "training class {} on {} exemplars for {} steps",
        class.name,
        exemplars.len(),
        cfg.train_steps
    );
    let report = train(&exemplars, &mut model, &embedding, &schedule, &cfg.train_config()?)?;
    Ok((
        Checkpoint {
            model,
            embedding: Some(embedding),
        },
        report,
    ))
}

/// Aligns `mask` onto `normal` with the configured descriptor and the
/// default foreground extractor.
pub fn align_onto(
    mask: &BinaryMask,
    exemplar: &AnomalyExemplar,
    normal: &Image,
    cfg: &PipelineConfig,
) -> Result<Alignment> {
    let descriptor = PatchDescriptor::new(cfg.descriptor_size)?;
    let fg = foreground_mask(normal);
    align(mask, exemplar, normal, &descriptor, &fg.mask)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordStatus {
    Ok,
    Skipped(String),
}

/// One manifest row. File names are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub output: Option<String>,
    pub mask: Option<String>,
    pub normal_id: String,
    pub exemplar_id: Option<String>,
    pub seed: u64,
    pub stream: u64,
    pub a: Option<f64>,
    pub sigma: f64,
    pub schedule_id: String,
    /// `None` when alignment was disabled.
    pub cama_fallback: Option<bool>,
    pub status: RecordStatus,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), T::to_string)
}

impl GenerationRecord {
    pub fn to_line(&self) -> String {
        let status = match &self.status {
            RecordStatus::Ok => "ok".to_string(),
            RecordStatus::Skipped(why) => format!("skipped: {}", why.replace(['\t', '\n'], " ")),
        };
        [
            opt(&self.output),
            opt(&self.mask),
            self.normal_id.clone(),
            opt(&self.exemplar_id),
            self.seed.to_string(),
            self.stream.to_string(),
            opt(&self.a),
            self.sigma.to_string(),
            self.schedule_id.clone(),
            opt(&self.cama_fallback),
            status,
        ]
        .join("\t")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 11 {
            return Err(Error::Dataset(format!("manifest row has {} fields, expected 11: {line:?}", f.len())));
        }
        let bad = |what: &str| Error::Dataset(format!("manifest row has a bad {what}: {line:?}"));
        let text = |s: &str| (s != "-").then(|| s.to_string());
        Ok(GenerationRecord {
            output: text(f[0]),
            mask: text(f[1]),
            normal_id: f[2].to_string(),
            exemplar_id: text(f[3]),
            seed: f[4].parse().map_err(|_| bad("seed"))?,
            stream: f[5].parse().map_err(|_| bad("stream"))?,
            a: match f[6] {
                "-" => None,
                s => Some(s.parse().map_err(|_| bad("a"))?),
            },
            sigma: f[7].parse().map_err(|_| bad("sigma"))?,
            schedule_id: f[8].to_string(),
            cama_fallback: match f[9] {
                "-" => None,
                s => Some(s.parse().map_err(|_| bad("cama_fallback"))?),
            },
            status: match f[10] {
                "ok" => RecordStatus::Ok,
                s => RecordStatus::Skipped(s.strip_prefix("skipped: ").unwrap_or(s).to_string()),
            },
        })
    }
}

pub fn format_manifest(records: &[GenerationRecord]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n{MANIFEST_COLUMNS}\n");
    for r in records {
        let _ = writeln!(s, "{}", r.to_line());
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<GenerationRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::Dataset(format!("manifest does not start with {MANIFEST_HEADER:?}")));
    }
    lines
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(GenerationRecord::from_line)
        .collect()
}

struct Planned {
    record: GenerationRecord,
    output: Option<(Image, BinaryMask)>,
}

/// Inputs shared by every record of a generation run.
pub struct GenerationInputs<'a, P: ?Sized> {
    pub class: &'a str,
    pub normals: &'a [(String, Image)],
    pub exemplars: &'a [AnomalyExemplar],
    pub predictor: &'a P,
    pub embedding: &'a PromptEmbedding,
}

fn plan_record<P: NoisePredictor + ?Sized>(
    index: usize,
    inputs: &GenerationInputs<'_, P>,
    cfg: &PipelineConfig,
    schedule: &crate::schedule::NoiseSchedule,
) -> Result<Planned> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (normal_id, normal) = &inputs.normals[rng.random_range(0..inputs.normals.len())];
    let mut record = GenerationRecord {
        output: None,
        mask: None,
        normal_id: normal_id.clone(),
        exemplar_id: None,
        seed: cfg.seed,
        stream: index as u64,
        a: None,
        sigma: cfg.sigma,
        schedule_id: schedule.id().to_string(),
        cama_fallback: None,
        status: RecordStatus::Ok,
    };
    let mut chosen = None;
    let mut last_err = None;
    for attempt in 0..=cfg.max_align_retries {
        let source = &inputs.exemplars[rng.random_range(0..inputs.exemplars.len())];
        let exemplar = &inputs.exemplars[rng.random_range(0..inputs.exemplars.len())];
        let mask = augment_mask(source.mask(), &mut rng);
        if (mask.height(), mask.width()) != (normal.height(), normal.width()) {
            return Err(Error::Dataset(format!(
                "mask of {} is {}x{} but normal image {} is {}x{}",
                source.id(),
                mask.height(),
                mask.width(),
                normal_id,
                normal.height(),
                normal.width()
            )));
        }
        record.exemplar_id = Some(exemplar.id().to_string());
        if !cfg.cama {
            chosen = Some(mask);
            break;
        }
        match align_onto(&mask, exemplar, normal, cfg) {
            Ok(al) => {
                record.cama_fallback = Some(al.fallback);
                chosen = Some(al.mask);
                break;
            }
            Err(e) => {
                log::warn!("record {index}: alignment attempt {} failed: {e}", attempt + 1);
                last_err = Some(e);
            }
        }
    }
    let Some(mask) = chosen else {
        let why = last_err.map_or_else(|| "alignment failed".to_string(), |e| e.to_string());
        record.status = RecordStatus::Skipped(why);
        return Ok(Planned { record, output: None });
    };
    let a = if cfg.a_max > cfg.a_min {
        rng.random_range(cfg.a_min..=cfg.a_max)
    } else {
        cfg.a_min
    };
    record.a = Some(a);
    let setup = InpaintSetup {
        predictor: inputs.predictor,
        schedule,
        embedding: inputs.embedding,
        gpp: cfg.gpp()?,
        mgni: cfg.mgni(a)?,
        codec: cfg.codec,
    };
    let image = sample_inpaint(normal, &mask, &setup, &mut rng)?;
    Ok(Planned {
        record,
        output: Some((image, mask)),
    })
}

/// Generates `n` records into `out_dir` and writes the manifest.
///
/// Record `i` draws from its own ChaCha stream `i` of the run seed, so the
/// result does not depend on thread scheduling.
pub fn generate<P: NoisePredictor + ?Sized>(
    n: usize,
    inputs: &GenerationInputs<'_, P>,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<Vec<GenerationRecord>> {
    cfg.validate()?;
    if n > 0 && (inputs.normals.is_empty() || inputs.exemplars.is_empty()) {
        return Err(Error::InsufficientSamples(format!(
            "class {} needs at least one normal image and one training exemplar",
            inputs.class
        )));
    }
    let schedule = cfg.schedule()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let planned = (0..n)
        .into_par_iter()
        .map(|i| plan_record(i, inputs, cfg, &schedule))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(n);
    for (i, p) in planned.into_iter().enumerate() {
        let mut record = p.record;
        if let Some((image, mask)) = p.output {
            let img_name = format!("{}_{i:05}.png", inputs.class);
            let mask_name = format!("{}_{i:05}_mask.png", inputs.class);
            write_image(&out_dir.join(&img_name), &image)?;
            write_mask(&out_dir.join(&mask_name), &mask)?;
            record.output = Some(img_name);
            record.mask = Some(mask_name);
        }
        records.push(record);
    }
    let manifest = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest, format_manifest(&records)).map_err(|e| Error::io(&manifest, e))?;
    let skipped = records.iter().filter(|r| r.status != RecordStatus::Ok).count();
    log::info!("wrote {} records ({skipped} skipped) to {}", records.len(), manifest.display());
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub kid: KidScore,
    /// `None` when no cluster holds two or more generations.
    pub ic_lpips: Option<f64>,
    pub clusters: usize,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_real = {}", self.kid.n_x);
        let _ = writeln!(s, "n_generated = {}", self.kid.n_y);
        let _ = writeln!(s, "kid = {:.6e}", self.kid.mmd2);
        let _ = writeln!(s, "kid_x1000 = {:.6}", self.kid.scaled());
        match self.ic_lpips {
            Some(v) => {
                let _ = writeln!(s, "ic_lpips = {v:.6}");
            }
            None => {
                let _ = writeln!(s, "ic_lpips = -");
            }
        }
        let _ = writeln!(s, "clusters = {}", self.clusters);
        s
    }
}

/// KID between real and generated images plus diversity within each
/// cluster of generations (grouped by the label paired with each image).
pub fn evaluate(real: &[Image], generated: &[(String, Image)], features: &FeatureConfig) -> Result<EvalReport> {
    let gen_images: Vec<Image> = generated.iter().map(|(_, img)| img.clone()).collect();
    let x = extract_features(real, features)?;
    let y = extract_features(&gen_images, features)?;
    let score = kid(&x, &y)?;
    let mut groups: std::collections::BTreeMap<&str, Vec<Image>> = Default::default();
    for (label, img) in generated {
        groups.entry(label).or_default().push(img.clone());
    }
    let usable: Vec<_> = groups
        .into_iter()
        .filter(|(label, imgs)| {
            if imgs.len() < 2 {
                log::warn!("cluster {label} has a single generation; left out of IC-LPIPS");
            }
            imgs.len() >= 2
        })
        .map(|(_, imgs)| extract_features(&imgs, features))
        .collect::<Result<Vec<_>>>()?;
    let ic = if usable.is_empty() {
        None
    } else {
        Some(ic_lpips_features(&usable)?)
    };
    Ok(EvalReport {
        kid: score,
        ic_lpips: ic,
        clusters: usable.len(),
    })
}
