//! Flat `key = value` pipeline configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::denoiser::{ArchConfig, LatentCodec};
use crate::error::{Error, Result};
use crate::prompt::GppConfig;
use crate::schedule::{MgniConfig, NoiseSchedule};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub sigma: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub t_min: f64,
    pub ddim_steps: usize,
    pub train_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub train_steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub weight_decay: f64,
    pub embed_dim: usize,
    pub embed_seed: u64,
    pub hidden: usize,
    pub depth: usize,
    pub time_dim: usize,
    pub codec: LatentCodec,
    pub cama: bool,
    pub max_align_retries: usize,
    pub descriptor_size: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    /// Desk-scale defaults sized for small toy images on a CPU.
    fn default() -> Self {
        PipelineConfig {
            sigma: 1.0,
            a_min: 0.0,
            a_max: 0.6,
            t_min: 0.6,
            ddim_steps: 50,
            train_timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            train_steps: 500,
            lr: 1e-3,
            batch: 4,
            weight_decay: 0.01,
            embed_dim: 16,
            embed_seed: 0,
            hidden: 16,
            depth: 2,
            time_dim: 8,
            codec: LatentCodec::Identity,
            cama: true,
            max_align_retries: 3,
            descriptor_size: 7,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "sigma",
    "a_min",
    "a_max",
    "t_min",
    "ddim_steps",
    "train_timesteps",
    "beta_start",
    "beta_end",
    "train_steps",
    "lr",
    "batch",
    "weight_decay",
    "embed_dim",
    "embed_seed",
    "hidden",
    "depth",
    "time_dim",
    "codec",
    "cama",
    "max_align_retries",
    "descriptor_size",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for key {key} (expected on/off)"))),
    }
}

impl PipelineConfig {
    /// Optimizer and step counts of the original large-backbone setup;
    /// everything else matches the default.
    pub fn full() -> Self {
        PipelineConfig {
            train_steps: 5000,
            lr: 5e-6,
            batch: 4,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" | "default" => Ok(Self::default()),
            "full" => Ok(Self::full()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (expected desk or full)"))),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "sigma" => self.sigma = parse(key, v)?,
            "a_min" => self.a_min = parse(key, v)?,
            "a_max" => self.a_max = parse(key, v)?,
            "t_min" => self.t_min = parse(key, v)?,
            "ddim_steps" => self.ddim_steps = parse(key, v)?,
            "train_timesteps" => self.train_timesteps = parse(key, v)?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "train_steps" => self.train_steps = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "embed_seed" => self.embed_seed = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "time_dim" => self.time_dim = parse(key, v)?,
            "codec" => self.codec = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "cama" => self.cama = parse_switch(key, v)?,
            "max_align_retries" => self.max_align_retries = parse(key, v)?,
            "descriptor_size" => self.descriptor_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key {other:?}; known keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// `key=value` override as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k, v)
    }

    /// Applies every line of `text` on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("sigma", self.sigma.to_string());
        kv("a_min", self.a_min.to_string());
        kv("a_max", self.a_max.to_string());
        kv("t_min", self.t_min.to_string());
        kv("ddim_steps", self.ddim_steps.to_string());
        kv("train_timesteps", self.train_timesteps.to_string());
        kv("beta_start", self.beta_start.to_string());
        kv("beta_end", self.beta_end.to_string());
        kv("train_steps", self.train_steps.to_string());
        kv("lr", self.lr.to_string());
        kv("batch", self.batch.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("embed_seed", self.embed_seed.to_string());
        kv("hidden", self.hidden.to_string());
        kv("depth", self.depth.to_string());
        kv("time_dim", self.time_dim.to_string());
        kv("codec", self.codec.to_string());
        kv("cama", if self.cama { "on" } else { "off" }.to_string());
        kv("max_align_retries", self.max_align_retries.to_string());
        kv("descriptor_size", self.descriptor_size.to_string());
        kv("seed", self.seed.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(0.0 <= self.a_min && self.a_min <= self.a_max && self.a_max <= 1.0) {
            return bad(format!("need 0 <= a_min <= a_max <= 1, got [{}, {}]", self.a_min, self.a_max));
        }
        if !(0.0..=1.0).contains(&self.t_min) {
            return bad(format!("t_min must lie in [0, 1], got {}", self.t_min));
        }
        if self.ddim_steps == 0 || self.ddim_steps > self.train_timesteps {
            return bad(format!(
                "ddim_steps must be in 1..={}, got {}",
                self.train_timesteps, self.ddim_steps
            ));
        }
        if self.train_steps == 0 || self.batch == 0 || !(self.lr > 0.0) {
            return bad("train_steps, batch and lr must be positive".into());
        }
        if self.descriptor_size.is_multiple_of(2) {
            return bad(format!("descriptor_size must be odd, got {}", self.descriptor_size));
        }
        Ok(())
    }

    /// Training grid subsampled to `ddim_steps` levels; shared by training
    /// and sampling.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.train_timesteps, self.beta_start, self.beta_end)?.subsample(self.ddim_steps)
    }

    pub fn gpp(&self) -> Result<GppConfig> {
        GppConfig::new(self.sigma)
    }

    pub fn mgni(&self, a: f64) -> Result<MgniConfig> {
        MgniConfig::new(a, self.t_min)
    }

    pub fn arch(&self, channels: usize) -> ArchConfig {
        ArchConfig {
            channels,
            hidden: self.hidden,
            depth: self.depth,
            embed_dim: self.embed_dim,
            time_dim: self.time_dim,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            steps: self.train_steps,
            batch_size: self.batch,
            lr: self.lr,
            weight_decay: self.weight_decay,
            gpp: self.gpp()?,
            codec: self.codec,
            seed: self.seed,
        })
    }
}
