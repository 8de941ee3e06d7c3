//! Resampling schemes for particle systems.

use rand::Rng;
use rand_distr::Exp1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResampleScheme {
    #[default]
    Multinomial,
    Systematic,
    Stratified,
}

impl std::str::FromStr for ResampleScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multinomial" => Ok(Self::Multinomial),
            "systematic" => Ok(Self::Systematic),
            "stratified" => Ok(Self::Stratified),
            other => Err(format!("unknown resampling scheme `{other}`")),
        }
    }
}

/// When and how to resample. With `ess_threshold = Some(c)` resampling only
/// happens when the effective sample size drops below `c·N`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResampleConfig {
    pub scheme: ResampleScheme,
    pub ess_threshold: Option<f64>,
}

impl ResampleConfig {
    pub fn should_resample(&self, weights: &[f64]) -> bool {
        match self.ess_threshold {
            None => true,
            Some(c) => effective_sample_size(weights) < c * weights.len() as f64,
        }
    }
}

/// `1 / Σ W_i²` for normalised weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Draws `weights.len()` ancestor indices; every scheme is unbiased, i.e. the
/// expected number of offspring of particle `i` is `N·W_i`.
pub fn resample<R: Rng + ?Sized>(weights: &[f64], scheme: ResampleScheme, rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    match scheme {
        ResampleScheme::Multinomial => {
            // sorted uniforms via normalised exponential spacings
            let mut points: Vec<f64> = Vec::with_capacity(n);
            let mut acc = 0.0;
            for _ in 0..n {
                acc += rng.sample::<f64, _>(Exp1);
                points.push(acc);
            }
            let total = acc + rng.sample::<f64, _>(Exp1);
            for p in points.iter_mut() {
                *p /= total;
            }
            invert_sorted(weights, &points)
        }
        ResampleScheme::Systematic => {
            let u: f64 = rng.random();
            let points: Vec<f64> = (0..n).map(|i| (i as f64 + u) / n as f64).collect();
            invert_sorted(weights, &points)
        }
        ResampleScheme::Stratified => {
            let points: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random::<f64>()) / n as f64).collect();
            invert_sorted(weights, &points)
        }
    }
}

/// Inverse-CDF lookup of sorted points in `[0, 1)`.
fn invert_sorted(weights: &[f64], points: &[f64]) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(points.len());
    let mut cum = weights[0];
    let mut i = 0;
    for &p in points {
        while p >= cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn systematic_uniform_weights_give_one_offspring_each() {
        let w = vec![0.1; 10];
        let idx = resample(&w, ResampleScheme::Systematic, &mut stream(1, 0, 0));
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn point_mass_takes_every_ancestor() {
        let mut w = vec![0.0; 6];
        w[0] = 1.0;
        for scheme in [ResampleScheme::Multinomial, ResampleScheme::Systematic, ResampleScheme::Stratified] {
            let idx = resample(&w, scheme, &mut stream(2, 0, 0));
            assert!(idx.iter().all(|&i| i == 0), "{scheme:?}");
        }
    }

    #[test]
    fn zero_weight_particles_are_never_chosen() {
        let w = [0.5, 0.0, 0.5, 0.0];
        for seed in 0..50 {
            for scheme in [ResampleScheme::Multinomial, ResampleScheme::Systematic, ResampleScheme::Stratified] {
                let idx = resample(&w, scheme, &mut stream(seed, 0, 0));
                assert!(idx.iter().all(|&i| i == 0 || i == 2));
            }
        }
    }

    #[test]
    fn ess_threshold_controls_resampling() {
        let cfg = ResampleConfig {
            scheme: ResampleScheme::Systematic,
            ess_threshold: Some(0.5),
        };
        assert!(!cfg.should_resample(&[0.25; 4]));
        assert!(cfg.should_resample(&[0.97, 0.01, 0.01, 0.01]));
        assert!(ResampleConfig::default().should_resample(&[0.25; 4]));
    }
}
