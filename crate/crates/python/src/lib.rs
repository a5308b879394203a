//! Python bindings. Grids cross the boundary as flat lists plus a
//! `(channels, height, width)` shape; masks and score maps as nested
//! row-major lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use magic_core::cama;
use magic_core::denoiser::AnalyticGaussian;
use magic_core::metrics::{self, FeatureSet};
use magic_core::pipeline::PipelineConfig;
use magic_core::prompt::{GppConfig, PromptEmbedding};
use magic_core::sampler::{self, SamplerState};
use magic_core::schedule::{self, MgniConfig};
use magic_core::trainer::split_train_test;
use magic_core::{BinaryMask, Error, LatentGrid, Point};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Parameter(_)
        | Error::Shape(_)
        | Error::Conditioning(_)
        | Error::StepOutOfRange { .. }
        | Error::EmptyMask(_)
        | Error::InsufficientSamples(_)
        | Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

type Shape = (usize, usize, usize);

fn grid(data: Vec<f64>, shape: Shape) -> PyResult<LatentGrid> {
    LatentGrid::from_vec(shape.0, shape.1, shape.2, data).map_err(py_err)
}

fn mask_from_rows(rows: Vec<Vec<bool>>) -> PyResult<BinaryMask> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("mask rows must all have the same length"));
    }
    BinaryMask::from_vec(h, w, rows.into_iter().flatten().collect()).map_err(py_err)
}

fn mask_to_rows(m: &BinaryMask) -> Vec<Vec<bool>> {
    m.data().chunks(m.width()).map(<[bool]>::to_vec).collect()
}

#[pyclass(name = "NoiseSchedule", frozen)]
struct PyNoiseSchedule {
    inner: schedule::NoiseSchedule,
}

#[pymethods]
impl PyNoiseSchedule {
    #[staticmethod]
    #[pyo3(signature = (steps=1000, beta_start=1e-4, beta_end=0.02))]
    fn linear(steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        let inner = schedule::NoiseSchedule::linear(steps, beta_start, beta_end).map_err(py_err)?;
        Ok(PyNoiseSchedule { inner })
    }

    #[staticmethod]
    fn from_betas(betas: Vec<f64>) -> PyResult<Self> {
        let inner = schedule::NoiseSchedule::from_betas(betas).map_err(py_err)?;
        Ok(PyNoiseSchedule { inner })
    }

    fn subsample(&self, steps: usize) -> PyResult<Self> {
        Ok(PyNoiseSchedule {
            inner: self.inner.subsample(steps).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("NoiseSchedule({})", self.inner.id())
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_string()
    }

    #[getter]
    fn betas(&self) -> Vec<f64> {
        self.inner.betas().to_vec()
    }

    #[getter]
    fn alpha_bars(&self) -> Vec<f64> {
        self.inner.alpha_bars().to_vec()
    }

    /// Cumulative signal retention at level `t`; `alpha_bar(0) == 1`.
    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.inner.alpha_bar(t).map_err(py_err)
    }

    fn normalized_level(&self, t: usize) -> PyResult<f64> {
        self.inner.normalized_level(t).map_err(py_err)
    }
}

#[pyfunction]
fn normalized_time(step_index: usize, steps: usize) -> PyResult<f64> {
    schedule::normalized_time(step_index, steps).map_err(py_err)
}

#[pyfunction]
fn lambda_decay(t: f64, a: f64, t_min: f64) -> PyResult<f64> {
    let cfg = MgniConfig::new(a, t_min).map_err(py_err)?;
    Ok(schedule::lambda_decay(t, &cfg))
}

#[pyclass(name = "PromptEmbedding", frozen)]
struct PyPromptEmbedding {
    inner: PromptEmbedding,
}

#[pymethods]
impl PyPromptEmbedding {
    #[new]
    #[pyo3(signature = (dim, seed=0))]
    fn new(dim: usize, seed: u64) -> PyResult<Self> {
        Ok(PyPromptEmbedding {
            inner: PromptEmbedding::init(dim, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_list(base: Vec<f64>) -> PyResult<Self> {
        Ok(PyPromptEmbedding {
            inner: PromptEmbedding::from_vec(base).map_err(py_err)?,
        })
    }

    #[getter]
    fn base(&self) -> Vec<f64> {
        self.inner.base().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// `count` perturbed copies drawn from one seeded stream.
    #[pyo3(signature = (sigma, seed, count=1))]
    fn perturb(&self, sigma: f64, seed: u64, count: usize) -> PyResult<Vec<Vec<f64>>> {
        let cfg = GppConfig::new(sigma).map_err(py_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count).map(|_| self.inner.perturb(&cfg, &mut rng)).collect())
    }
}

#[pyfunction]
fn forward_diffuse(z0: Vec<f64>, eps: Vec<f64>, shape: Shape, t: usize, schedule: &PyNoiseSchedule) -> PyResult<Vec<f64>> {
    let out = sampler::forward_diffuse(&grid(z0, shape)?, t, &grid(eps, shape)?, &schedule.inner).map_err(py_err)?;
    Ok(out.into_vec())
}

/// Full reverse trajectories against the exact Gaussian backend, no mask
/// and no injected noise. Returns one flat sample per trajectory.
#[pyfunction]
#[pyo3(signature = (mean, variance, shape, schedule, n, seed=0))]
fn sample_gaussian(
    py: Python<'_>,
    mean: Vec<f64>,
    variance: Vec<f64>,
    shape: Shape,
    schedule: &PyNoiseSchedule,
    n: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let (c, h, w) = shape;
    let backend = AnalyticGaussian::new(grid(mean, shape)?, grid(variance, shape)?, schedule.inner.clone()).map_err(py_err)?;
    let sched = schedule.inner.clone();
    py.detach(move || {
        let background = LatentGrid::zeros(c, h, w);
        let mask = BinaryMask::full(h, w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z = LatentGrid::standard_normal(c, h, w, &mut rng);
                let mut state = SamplerState::new(z, &sched, &mut rng)?;
                sampler::denoise(&mut state, &background, &mask, &[], &backend, &MgniConfig::disabled())?;
                Ok(state.into_latent().into_vec())
            })
            .collect::<Result<Vec<_>, Error>>()
    })
    .map_err(py_err)
}

/// Unbiased squared MMD with the cubic polynomial kernel; returns
/// `(mmd2, mmd2 * 1000)`.
#[pyfunction]
fn kid(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let x = FeatureSet::from_rows(x).map_err(py_err)?;
    let y = FeatureSet::from_rows(y).map_err(py_err)?;
    let s = metrics::kid(&x, &y).map_err(py_err)?;
    Ok((s.mmd2, s.scaled()))
}

/// Mean intra-cluster cosine distance over feature clusters.
#[pyfunction]
fn ic_lpips(clusters: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    let sets = clusters
        .into_iter()
        .map(FeatureSet::from_rows)
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    metrics::ic_lpips_features(&sets).map_err(py_err)
}

type Xy = (i64, i64);

/// `(center, upper, lower)` keypoints of a mask as `(x, y)` pairs.
#[pyfunction]
fn extract_keypoints(mask: Vec<Vec<bool>>) -> PyResult<(Xy, Xy, Xy)> {
    let k = cama::extract_keypoints(&mask_from_rows(mask)?).map_err(py_err)?;
    let xy = |p: Point| (p.x, p.y);
    Ok((xy(k.center), xy(k.upper), xy(k.lower)))
}

/// Best score on the `upper → lower` segment inside the foreground;
/// returns `((x, y), fallback)`.
#[pyfunction]
fn constrained_center(scores: Vec<Vec<f64>>, upper: Xy, lower: Xy, foreground: Vec<Vec<bool>>) -> PyResult<(Xy, bool)> {
    let h = scores.len();
    let w = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("score rows must all have the same length"));
    }
    let map = cama::SimilarityMap::from_vec(h, w, scores.into_iter().flatten().collect()).map_err(py_err)?;
    let choice = cama::constrained_center(
        &map,
        Point::new(upper.0, upper.1),
        Point::new(lower.0, lower.1),
        &mask_from_rows(foreground)?,
    )
    .map_err(py_err)?;
    Ok(((choice.point.x, choice.point.y), choice.fallback))
}

#[pyfunction]
fn relocate_mask(mask: Vec<Vec<bool>>, center: Xy, foreground: Vec<Vec<bool>>) -> PyResult<Vec<Vec<bool>>> {
    let moved = cama::relocate_mask(
        &mask_from_rows(mask)?,
        Point::new(center.0, center.1),
        &mask_from_rows(foreground)?,
    )
    .map_err(py_err)?;
    Ok(mask_to_rows(&moved))
}

/// `(train, test)` sizes for a class with `n` anomaly images.
#[pyfunction]
fn split_counts(n: usize) -> PyResult<(usize, usize)> {
    let items: Vec<usize> = (0..n).collect();
    let (train, test) = split_train_test(&items).map_err(py_err)?;
    Ok((train.len(), test.len()))
}

/// Config file text for the `desk` or `full` preset.
#[pyfunction]
#[pyo3(signature = (preset="desk"))]
fn config_text(preset: &str) -> PyResult<String> {
    Ok(PipelineConfig::preset(preset).map_err(py_err)?.to_text())
}

#[pymodule]
fn magic_anomaly(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNoiseSchedule>()?;
    m.add_class::<PyPromptEmbedding>()?;
    m.add_function(wrap_pyfunction!(normalized_time, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_decay, m)?)?;
    m.add_function(wrap_pyfunction!(forward_diffuse, m)?)?;
    m.add_function(wrap_pyfunction!(sample_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(kid, m)?)?;
    m.add_function(wrap_pyfunction!(ic_lpips, m)?)?;
    m.add_function(wrap_pyfunction!(extract_keypoints, m)?)?;
    m.add_function(wrap_pyfunction!(constrained_center, m)?)?;
    m.add_function(wrap_pyfunction!(relocate_mask, m)?)?;
    m.add_function(wrap_pyfunction!(split_counts, m)?)?;
    m.add_function(wrap_pyfunction!(config_text, m)?)?;
    Ok(())
}
