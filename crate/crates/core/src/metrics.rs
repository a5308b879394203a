//! Generation-quality metrics over pluggable image features: KID (unbiased
//! squared MMD with a cubic polynomial kernel) and a feature-space
//! intra-cluster diversity score.

use crate::error::{Error, Result};
use crate::grid::Image;

/// `n × d` feature matrix, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureSet {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::InsufficientSamples("feature set needs at least one nonempty row".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Shape(format!("row {i} has {} features, expected {d}", rows[i].len())));
        }
        let n = rows.len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("feature set has non-finite entries".into()));
        }
        Ok(FeatureSet { n, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.d)
    }
}

/// Multi-scale hand-crafted features: per-channel mean and variance plus
/// per-cell gradient-magnitude histograms, at each of `scales` dyadic levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub grid: usize,
    pub bins: usize,
    pub scales: usize,
    /// Resize every image to the first one's size instead of failing.
    pub resize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            grid: 4,
            bins: 8,
            scales: 2,
            resize: false,
        }
    }
}

impl FeatureConfig {
    /// Feature dimension for images with `channels` channels.
    pub fn dim(&self, channels: usize) -> usize {
        self.scales * (2 * channels + self.grid * self.grid * self.bins)
    }

    fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.bins == 0 || self.scales == 0 {
            return Err(Error::Parameter("grid, bins and scales must be positive".into()));
        }
        Ok(())
    }
}

/// Largest forward-difference gradient magnitude for values in `[0, 1]`.
const MAX_GRADIENT: f64 = std::f64::consts::SQRT_2;

fn halve(img: &Image) -> Image {
    let (h, w) = (img.height() / 2, img.width() / 2);
    Image::from_fn(img.channels(), h, w, |c, y, x| {
        0.25 * (img.get(c, 2 * y, 2 * x)
            + img.get(c, 2 * y, 2 * x + 1)
            + img.get(c, 2 * y + 1, 2 * x)
            + img.get(c, 2 * y + 1, 2 * x + 1))
    })
}

fn scale_features(img: &Image, cfg: &FeatureConfig, out: &mut Vec<f64>) {
    let (h, w) = (img.height(), img.width());
    let plane = (h * w) as f64;
    for c in 0..img.channels() {
        let vals = &img.data()[c * h * w..(c + 1) * h * w];
        let mean = vals.iter().sum::<f64>() / plane;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane;
        out.push(mean);
        out.push(var);
    }
    let inten = img.intensity();
    let mut hist = vec![0.0; cfg.grid * cfg.grid * cfg.bins];
    let mut counts = vec![0usize; cfg.grid * cfg.grid];
    for y in 0..h {
        for x in 0..w {
            let v = inten[y * w + x];
            let gx = if x + 1 < w { inten[y * w + x + 1] - v } else { 0.0 };
            let gy = if y + 1 < h { inten[(y + 1) * w + x] - v } else { 0.0 };
            let mag = (gx * gx + gy * gy).sqrt();
            let bin = ((mag / MAX_GRADIENT * cfg.bins as f64) as usize).min(cfg.bins - 1);
            let cell = (y * cfg.grid / h) * cfg.grid + x * cfg.grid / w;
            hist[cell * cfg.bins + bin] += 1.0;
            counts[cell] += 1;
        }
    }
    for (cell, &n) in counts.iter().enumerate() {
        if n > 0 {
            hist[cell * cfg.bins..(cell + 1) * cfg.bins]
                .iter_mut()
                .for_each(|v| *v /= n as f64);
        }
    }
    out.extend(hist);
}

/// Feature vector of a single image.
pub fn image_features(img: &Image, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let min_side = cfg.grid << (cfg.scales - 1);
    if img.height() < min_side || img.width() < min_side {
        return Err(Error::Shape(format!(
            "{}x{} image is too small for {} scales of a {}x{} grid",
            img.height(),
            img.width(),
            cfg.scales,
            cfg.grid,
            cfg.grid
        )));
    }
    let mut out = Vec::with_capacity(cfg.dim(img.channels()));
    let mut level = img.clone();
    for s in 0..cfg.scales {
        if s > 0 {
            level = halve(&level);
        }
        scale_features(&level, cfg, &mut out);
    }
    Ok(out)
}

pub fn extract_features(images: &[Image], cfg: &FeatureConfig) -> Result<FeatureSet> {
    let first = images
        .first()
        .ok_or_else(|| Error::InsufficientSamples("no images to featurize".into()))?;
    let rows = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            if img.channels() != first.channels() {
                return Err(Error::Shape(format!(
                    "image {i} has {} channels, expected {}",
                    img.channels(),
                    first.channels()
                )));
            }
            if (img.height(), img.width()) != (first.height(), first.width()) {
                if !cfg.resize {
                    return Err(Error::Shape(format!(
                        "image {i} is {}x{}, expected {}x{} (enable resize to mix sizes)",
                        img.height(),
                        img.width(),
                        first.height(),
                        first.width()
                    )));
                }
                return image_features(&img.resize_nearest(first.height(), first.width()), cfg);
            }
            image_features(img, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureSet::from_rows(rows)
}

#[inline]
fn poly_kernel(a: &[f64], b: &[f64], d: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / d + 1.0).powi(3)
}

/// Unbiased squared MMD between two feature sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KidScore {
    pub mmd2: f64,
    pub n_x: usize,
    pub n_y: usize,
}

impl KidScore {
    /// The customary ×1000 reporting scale.
    pub fn scaled(&self) -> f64 {
        self.mmd2 * 1000.0
    }
}

/// `k(x, y) = (xᵀy / d + 1)³`; off-diagonal means within each set minus
/// twice the cross mean.
pub fn kid(x: &FeatureSet, y: &FeatureSet) -> Result<KidScore> {
    if x.d() != y.d() {
        return Err(Error::Shape(format!("feature dims differ: {} vs {}", x.d(), y.d())));
    }
    if x.n() < 2 || y.n() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "KID needs at least 2 samples per set, got {} and {}",
            x.n(),
            y.n()
        )));
    }
    let d = x.d() as f64;
    let within = |s: &FeatureSet| -> f64 {
        let mut acc = 0.0;
        for i in 0..s.n() {
            for j in (i + 1)..s.n() {
                acc += poly_kernel(s.row(i), s.row(j), d);
            }
        }
        2.0 * acc / (s.n() * (s.n() - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x.rows() {
        for b in y.rows() {
            cross += poly_kernel(a, b, d);
        }
    }
    cross /= (x.n() * y.n()) as f64;
    Ok(KidScore {
        mmd2: within(x) + within(y) - 2.0 * cross,
        n_x: x.n(),
        n_y: y.n(),
    })
}

/// `1 − cos(a, b)`; two zero vectors are at distance 0, one zero vector at 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => 1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb),
    }
}

/// Mean over clusters of the mean pairwise cosine distance within each.
pub fn ic_lpips_features(clusters: &[FeatureSet]) -> Result<f64> {
    if clusters.is_empty() {
        return Err(Error::InsufficientSamples("no clusters given".into()));
    }
    let mut total = 0.0;
    for (k, c) in clusters.iter().enumerate() {
        if c.n() < 2 {
            return Err(Error::InsufficientSamples(format!(
                "cluster {k} has {} image(s); at least 2 are needed",
                c.n()
            )));
        }
        let mut acc = 0.0;
        let mut pairs = 0usize;
        for i in 0..c.n() {
            for j in (i + 1)..c.n() {
                acc += cosine_distance(c.row(i), c.row(j));
                pairs += 1;
            }
        }
        total += acc / pairs as f64;
    }
    Ok(total / clusters.len() as f64)
}

pub fn ic_lpips(clusters: &[Vec<Image>], cfg: &FeatureConfig) -> Result<f64> {
    if let Some((k, c)) = clusters.iter().enumerate().find(|(_, c)| c.len() < 2) {
        return Err(Error::InsufficientSamples(format!(
            "cluster {k} has {} image(s); at least 2 are needed",
            c.len()
        )));
    }
    let sets = clusters
        .iter()
        .map(|c| extract_features(c, cfg))
        .collect::<Result<Vec<_>>>()?;
    ic_lpips_features(&sets)
}
