use super::{InpaintCondition, NoisePredictor};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::schedule::NoiseSchedule;

/// Exact posterior-mean noise predictor for data `z_0 ~ N(μ, diag(v))`.
///
/// With `z_t = √ᾱ z_0 + √(1−ᾱ) ε` the posterior mean of `z_0` is
/// `μ + √ᾱ v (ᾱ v + 1 − ᾱ)⁻¹ (z_t − √ᾱ μ)` and the returned estimate is
/// `(z_t − √ᾱ E[z_0 | z_t]) / √(1−ᾱ)`. The prompt and the mask channels are
/// ignored.
#[derive(Debug, Clone)]
pub struct AnalyticGaussian {
    mean: LatentGrid,
    variance: LatentGrid,
    schedule: NoiseSchedule,
}

impl AnalyticGaussian {
    pub fn new(mean: LatentGrid, variance: LatentGrid, schedule: NoiseSchedule) -> Result<Self> {
        mean.ensure_same_shape(&variance, "gaussian mean and variance")?;
        if let Some(v) = variance.data().iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter(format!("variance entries must be positive, found {v}")));
        }
        Ok(AnalyticGaussian {
            mean,
            variance,
            schedule,
        })
    }

    pub fn mean(&self) -> &LatentGrid {
        &self.mean
    }

    pub fn variance(&self) -> &LatentGrid {
        &self.variance
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// `E[z_0 | z_t]` elementwise.
    pub fn posterior_mean(&self, z_t: &LatentGrid, t: usize) -> Result<LatentGrid> {
        z_t.ensure_same_shape(&self.mean, "gaussian backend input")?;
        let ab = self.level(t)?;
        let sab = ab.sqrt();
        let data = z_t
            .data()
            .iter()
            .zip(self.mean.data())
            .zip(self.variance.data())
            .map(|((&z, &mu), &v)| mu + sab * v / (ab * v + (1.0 - ab)) * (z - sab * mu))
            .collect();
        let (c, h, w) = z_t.shape();
        LatentGrid::from_vec(c, h, w, data)
    }

    fn level(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::StepOutOfRange {
                step: 0,
                steps: self.schedule.len(),
            });
        }
        self.schedule.alpha_bar(t)
    }
}

impl NoisePredictor for AnalyticGaussian {
    fn predict_noise(&self, cond: &InpaintCondition<'_>, t: usize, _prompt: &[f64]) -> Result<LatentGrid> {
        let z = cond.z_t();
        let m = self.posterior_mean(z, t)?;
        let ab = self.level(t)?;
        let (sab, s1) = (ab.sqrt(), (1.0 - ab).sqrt());
        let data = z
            .data()
            .iter()
            .zip(m.data())
            .map(|(&z, &m)| (z - sab * m) / s1)
            .collect();
        let (c, h, w) = z.shape();
        LatentGrid::from_vec(c, h, w, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BinaryMask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn one_level(alpha_bar: f64) -> NoiseSchedule {
        NoiseSchedule::from_betas(vec![1.0 - alpha_bar]).unwrap()
    }

    fn scalar(v: f64) -> LatentGrid {
        LatentGrid::filled(1, 1, 1, v)
    }

    fn predict(b: &AnalyticGaussian, z: f64) -> f64 {
        let zg = scalar(z);
        let m = BinaryMask::empty(1, 1);
        let cond = InpaintCondition::new(&zg, &zg, &m).unwrap();
        b.predict_noise(&cond, 1, &[]).unwrap().data()[0]
    }

    fn normal_pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn rejects_non_positive_variance() {
        let s = one_level(0.5);
        assert!(AnalyticGaussian::new(scalar(0.0), scalar(0.0), s.clone()).is_err());
        assert!(AnalyticGaussian::new(scalar(0.0), scalar(-1.0), s).is_err());
    }

    #[test]
    fn standard_prior_reduces_to_shrunk_input() {
        // μ = 0, v = 1: ε̂ = √(1−ᾱ) z.
        let b = AnalyticGaussian::new(scalar(0.0), scalar(1.0), one_level(0.3)).unwrap();
        let got = predict(&b, 1.7);
        assert!((got - 0.7f64.sqrt() * 1.7).abs() < 1e-14);
    }

    #[test]
    fn flat_prior_predicts_no_noise() {
        let b = AnalyticGaussian::new(scalar(0.0), scalar(1e12), one_level(0.5)).unwrap();
        let zg = scalar(1.0);
        let m = b.posterior_mean(&zg, 1).unwrap().data()[0];
        assert!((m - 1.0 / 0.5f64.sqrt()).abs() < 1e-9);
        assert!(predict(&b, 1.0).abs() < 1e-9);
    }

    #[test]
    fn matches_quadrature_posterior() {
        // E[ε | z] = ∫ ε φ(ε) p(z | ε) dε / ∫ φ(ε) p(z | ε) dε with
        // p(z | ε) = N(z − √(1−ᾱ) ε; √ᾱ μ, ᾱ v).
        for &(mu, v, ab, z) in &[(0.0, 1.0, 0.5, 1.0), (0.4, 2.5, 0.2, -0.7), (-1.0, 0.3, 0.9, 0.1)] {
            let b = AnalyticGaussian::new(scalar(mu), scalar(v), one_level(ab)).unwrap();
            let (mut num, mut den) = (0.0, 0.0);
            let h = 1e-3;
            let mut e = -12.0;
            while e <= 12.0 {
                let x = (z - (1.0 - ab).sqrt() * e - ab.sqrt() * mu) / (ab * v).sqrt();
                let w = normal_pdf(e) * normal_pdf(x);
                num += e * w;
                den += w;
                e += h;
            }
            let want = num / den;
            let got = predict(&b, z);
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn matches_monte_carlo_posterior() {
        let (mu, v, ab, z) = (0.0, 1.0, 0.5, 1.0);
        let b = AnalyticGaussian::new(scalar(mu), scalar(v), one_level(ab)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let (mut sw, mut swe, mut swe2, mut sw2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            let x = (z - (1.0 - ab).sqrt() * e - ab.sqrt() * mu) / (ab * v).sqrt();
            let w = normal_pdf(x);
            sw += w;
            sw2 += w * w;
            swe += w * e;
            swe2 += w * e * e;
        }
        let est = swe / sw;
        // Delta-method standard error of the self-normalized estimator.
        let var = (swe2 - 2.0 * est * swe + est * est * sw) / sw;
        let ess = sw * sw / sw2;
        let se = (var / ess).sqrt();
        let got = predict(&b, z);
        assert!((got - est).abs() < 3.0 * se, "{got} vs {est} ± {se}");
    }
}
