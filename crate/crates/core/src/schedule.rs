//! Discrete noise schedules and the masked-noise decay `λ(t)`.
//!
//! Timesteps are 1-based in the sampler and trainer: level `t ∈ 1..=T` has
//! signal retention `alpha_bars[t - 1]`, and level `0` is clean data with
//! retention exactly 1.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    id: String,
}

impl NoiseSchedule {
    /// Builds a schedule from per-step variances; cumulative products follow.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        let id = format!("custom({})", betas.len());
        Self::from_betas_with_id(betas, id)
    }

    fn from_betas_with_id(betas: Vec<f64>, id: String) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, &b)| !(b > 0.0 && b < 1.0))
        {
            return Err(Error::Parameter(format!("beta[{i}] = {b} is outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        if alpha_bars.windows(2).any(|w| w[1] >= w[0]) || alpha_bars.iter().any(|&a| a <= 0.0) {
            return Err(Error::Parameter(
                "cumulative products underflow or fail to decrease".into(),
            ));
        }
        Ok(NoiseSchedule {
            betas,
            alpha_bars,
            id,
        })
    }

    /// Linearly spaced betas from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas_with_id(betas, format!("linear({steps},{beta_start},{beta_end})"))
    }

    /// Keeps `steps` evenly spaced levels of this schedule (first and last
    /// included) and rederives per-step betas so the cumulative products are
    /// the retained ones.
    pub fn subsample(&self, steps: usize) -> Result<Self> {
        let total = self.len();
        if steps == 0 || steps > total {
            return Err(Error::Parameter(format!(
                "cannot keep {steps} of {total} steps"
            )));
        }
        if steps == total {
            return Ok(self.clone());
        }
        let picks: Vec<usize> = if steps == 1 {
            vec![total - 1]
        } else {
            (0..steps)
                .map(|i| ((i * (total - 1)) as f64 / (steps - 1) as f64).round() as usize)
                .collect()
        };
        let mut prev = 1.0;
        let betas = picks
            .iter()
            .map(|&i| {
                let a = self.alpha_bars[i];
                let b = 1.0 - a / prev;
                prev = a;
                b
            })
            .collect();
        Self::from_betas_with_id(betas, format!("{}/ddim{steps}", self.id))
    }

    /// Number of noise levels `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Human-readable provenance string recorded in manifests.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Signal retention at level `t`; `t = 0` is clean data (1.0).
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.len() => Ok(self.alpha_bars[t - 1]),
            t => Err(Error::StepOutOfRange {
                step: t,
                steps: self.len(),
            }),
        }
    }

    /// Normalized time of level `t ∈ 1..=T` (1 at the noisiest level).
    pub fn normalized_level(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::StepOutOfRange {
                step: t,
                steps: self.len(),
            });
        }
        normalized_time(t - 1, self.len())
    }
}

/// Maps `step_index ∈ [0, T)` onto `[0, 1]`; `T = 1` maps to 0.
pub fn normalized_time(step_index: usize, steps: usize) -> Result<f64> {
    if step_index >= steps {
        return Err(Error::StepOutOfRange {
            step: step_index,
            steps,
        });
    }
    if steps == 1 {
        return Ok(0.0);
    }
    Ok(step_index as f64 / (steps - 1) as f64)
}

/// Strength and cut-off of the masked noise injection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgniConfig {
    a: f64,
    t_min: f64,
}

impl MgniConfig {
    pub fn new(a: f64, t_min: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Parameter(format!("noise scale a = {a} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&t_min) {
            return Err(Error::Parameter(format!("t_min = {t_min} outside [0, 1]")));
        }
        Ok(MgniConfig { a, t_min })
    }

    /// No injection at any step.
    pub fn disabled() -> Self {
        MgniConfig { a: 0.0, t_min: 1.0 }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }
}

/// `λ(t) = a · 1[t > t_min]`.
pub fn lambda_decay(t: f64, cfg: &MgniConfig) -> f64 {
    if t > cfg.t_min {
        cfg.a
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_product(betas: &[f64], upto: usize) -> f64 {
        let mut p = 1.0;
        for b in &betas[..=upto] {
            p *= 1.0 - b;
        }
        p
    }

    #[test]
    fn single_step() {
        let s = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        assert_eq!(s.betas(), &[0.1]);
        assert_eq!(s.alpha_bars(), &[0.9]);
    }

    #[test]
    fn zero_beta_rejected() {
        assert!(matches!(
            NoiseSchedule::linear(3, 0.0, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(3, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(3, 0.1, 1.0).is_err());
    }

    #[test]
    fn standard_schedule_matches_loop() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let betas: Vec<f64> = (0..1000)
            .map(|i| 1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)
            .collect();
        let want = brute_force_product(&betas, 999);
        let got = s.alpha_bars()[999];
        assert!(((got - want) / want).abs() < 1e-12, "{got} vs {want}");
        assert_eq!(s.betas()[0], 1e-4);
        assert_eq!(s.betas()[999], 0.02);
    }

    #[test]
    fn subsample_keeps_selected_levels() {
        let full = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let sub = full.subsample(50).unwrap();
        assert_eq!(sub.len(), 50);
        assert!((sub.alpha_bars()[0] - full.alpha_bars()[0]).abs() < 1e-15);
        let last_rel = (sub.alpha_bars()[49] - full.alpha_bars()[999]) / full.alpha_bars()[999];
        assert!(last_rel.abs() < 1e-10, "{last_rel}");
        assert!(full.subsample(1001).is_err());
        assert!(sub.id().ends_with("/ddim50"));
    }

    #[test]
    fn normalized_time_examples() {
        assert_eq!(normalized_time(49, 50).unwrap(), 1.0);
        assert_eq!(normalized_time(0, 50).unwrap(), 0.0);
        assert!((normalized_time(30, 50).unwrap() - 30.0 / 49.0).abs() < 1e-15);
        assert_eq!(normalized_time(0, 1).unwrap(), 0.0);
        assert!(normalized_time(50, 50).is_err());
    }

    #[test]
    fn lambda_examples() {
        let cfg = MgniConfig::new(0.6, 0.6).unwrap();
        assert_eq!(lambda_decay(0.8, &cfg), 0.6);
        assert_eq!(lambda_decay(0.5, &cfg), 0.0);
        assert_eq!(lambda_decay(0.6, &cfg), 0.0);
        assert!(MgniConfig::new(1.5, 0.5).is_err());
        assert!(MgniConfig::new(0.5, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn alpha_bars_decrease_and_match_products(
            steps in 1usize..400,
            start in 1e-5f64..0.05,
            extra in 0.0f64..0.2,
        ) {
            let end = start + extra;
            let s = NoiseSchedule::linear(steps, start, end).unwrap();
            for t in 0..steps {
                let want = brute_force_product(s.betas(), t);
                let got = s.alpha_bars()[t];
                prop_assert!(got > 0.0 && got < 1.0);
                prop_assert!(((got - want) / want).abs() <= 1e-12);
                if t > 0 {
                    prop_assert!(got < s.alpha_bars()[t - 1]);
                }
            }
        }

        #[test]
        fn lambda_is_a_step_function(a in 0.0f64..=1.0, t_min in 0.0f64..=1.0, t in 0.0f64..=1.0) {
            let cfg = MgniConfig::new(a, t_min).unwrap();
            let l = lambda_decay(t, &cfg);
            if t <= t_min { prop_assert_eq!(l, 0.0); } else { prop_assert_eq!(l, a); }
        }
    }
}
