//! Forward-only particle smoothing of additive functionals.
//!
//! Each step resamples ancestors, propagates them through the kernel, weights
//! the new particles by the observation density and updates the per-particle
//! statistic
//!
//! `T_n(x_n^i) = Σ_j ω̃_ij [T_{n−1}(x_{n−1}^j) + s_n(x_{n−1}^j, x_n^i)]`,
//! `ω̃_ij ∝ W_{n−1}^j p_θ(x_n^i, y_n | x_{n−1}^j)`.
//!
//! With the pathspace kernel `p_θ` is the density of the augmented
//! transition; with a discrete kernel it is the transition density itself.
//! Rows of the O(N²) update are independent and run in parallel; each row is
//! reduced in index order, so results do not depend on the worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::kernel::{Kernel, Obs};
use crate::resample::{resample, ResampleConfig};
use crate::rng::stream;

/// Smoothing weights below this fraction are dropped from the `s_n`
/// average (their density is still evaluated).
pub const DEFAULT_PRUNE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    pub particles: usize,
    pub resample: ResampleConfig,
    pub prune: f64,
    pub seed: u64,
}

impl SmootherConfig {
    pub fn new(particles: usize, seed: u64) -> Self {
        Self {
            particles,
            resample: ResampleConfig::default(),
            prune: DEFAULT_PRUNE,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle<S> {
    pub state: S,
    /// Normalised log weight.
    pub log_weight: f64,
    pub t_value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<S> {
    /// Number of transitions assimilated so far.
    pub step: usize,
    pub particles: Vec<Particle<S>>,
    /// `Ŝ_n = Σ_i W_n^i T_n^i`.
    pub estimate: Vec<f64>,
    /// `log p̂(y_{0:n})`.
    pub loglik: f64,
    /// Last increment of `loglik`.
    pub loglik_increment: f64,
    pub y_prev: Vec<f64>,
}

impl<S> FilterState<S> {
    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight.exp()).collect()
    }
}

/// Normalises log weights in place; returns `log Σ exp(w_i)`.
fn normalise(log_w: &mut [f64]) -> f64 {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    let sum: f64 = log_w.iter().map(|w| (w - max).exp()).sum();
    let lse = max + sum.ln();
    for w in log_w.iter_mut() {
        *w -= lse;
    }
    lse
}

pub struct Smoother<'a, K: Kernel, F: Functional<K> + ?Sized> {
    pub kernel: &'a K,
    pub functional: &'a F,
    pub config: SmootherConfig,
}

impl<'a, K: Kernel, F: Functional<K> + ?Sized> Smoother<'a, K, F> {
    pub fn new(kernel: &'a K, functional: &'a F, config: SmootherConfig) -> Self {
        Self {
            kernel,
            functional,
            config,
        }
    }

    /// Draws `x_0`, weights by `g_θ(y_0 | x_0)` and sets `T_0 = s_0`.
    pub fn init(&self, theta: &[f64], y0: &[f64]) -> Result<FilterState<K::State>> {
        let n = self.config.particles;
        if n == 0 {
            return Err(Error::InvalidArgument("at least one particle is required".into()));
        }
        let dim = self.functional.dim();
        let drawn: Vec<(K::State, f64, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(self.config.seed, 0, i as u64);
                let state = self.kernel.initial(theta, &mut rng)?;
                let lw = self.kernel.initial_logdensity(theta, y0, &state);
                let mut t = vec![0.0; dim];
                self.functional.initial(self.kernel, theta, &state, y0, &mut t)?;
                Ok((state, lw, t))
            })
            .collect::<Result<_>>()?;
        let mut log_w: Vec<f64> = drawn.iter().map(|d| d.1).collect();
        let lse = normalise(&mut log_w);
        if !lse.is_finite() {
            return Err(Error::DegenerateInitialization);
        }
        let particles: Vec<Particle<K::State>> = drawn
            .into_iter()
            .zip(&log_w)
            .map(|((state, _, t_value), &log_weight)| Particle {
                state,
                log_weight,
                t_value,
            })
            .collect();
        let loglik = lse - (n as f64).ln();
        Ok(FilterState {
            step: 0,
            estimate: weighted_sum(&particles, dim),
            particles,
            loglik,
            loglik_increment: loglik,
            y_prev: y0.to_vec(),
        })
    }

    /// Assimilates `y`, the observation one interval after the last one.
    pub fn step(&self, state: &mut FilterState<K::State>, theta: &[f64], y: &[f64]) -> Result<()> {
        let n = state.particles.len();
        let step = state.step + 1;
        let seed = self.config.seed;
        let dim = self.functional.dim();
        let prev_w: Vec<f64> = state.weights();
        let prev_logw: Vec<f64> = state.particles.iter().map(|p| p.log_weight).collect();

        let resampled = self.config.resample.should_resample(&prev_w);
        let ancestors: Vec<usize> = if resampled {
            resample(&prev_w, self.config.resample.scheme, &mut stream(seed, 2 * step as u64 - 1, 0))
        } else {
            (0..n).collect()
        };

        let y_prev = std::mem::take(&mut state.y_prev);
        let obs = Obs {
            y,
            y_prev: Some(&y_prev),
        };
        let prev = &state.particles;
        let kernel = self.kernel;
        let propagated: Vec<(K::State, f64)> = ancestors
            .par_iter()
            .enumerate()
            .map_init(
                || kernel.workspace(),
                |ws, (i, &a)| {
                    let mut rng = stream(seed, 2 * step as u64, i as u64);
                    let new = kernel.propagate(theta, &prev[a].state, &mut rng)?;
                    let lg = kernel.obs_logdensity(theta, obs, &new, ws);
                    Ok((new, lg))
                },
            )
            .collect::<Result<_>>()?;

        let mut log_w: Vec<f64> = propagated
            .iter()
            .zip(&ancestors)
            .map(|((_, lg), &a)| if resampled { *lg } else { prev_logw[a] + lg })
            .collect();
        let lse = normalise(&mut log_w);
        if !lse.is_finite() {
            return Err(Error::ParticleCollapse { step });
        }
        let increment = if resampled { lse - (n as f64).ln() } else { lse };

        let prune = self.config.prune;
        let functional = self.functional;
        let t_values: Vec<Vec<f64>> = propagated
            .par_iter()
            .enumerate()
            .map_init(
                || (kernel.workspace(), vec![0.0; n], vec![0.0; dim]),
                |(ws, row, s), (i, (new, _))| {
                    for (j, p) in prev.iter().enumerate() {
                        row[j] = if p.log_weight == f64::NEG_INFINITY {
                            f64::NEG_INFINITY
                        } else {
                            let lp = match kernel.pair_logdensity(theta, &p.state, new, obs, ws) {
                                Err(Error::NonFiniteValue(_)) => f64::NAN,
                                other => other?,
                            };
                            if !lp.is_finite() {
                                return Err(Error::NonFiniteDensity {
                                    step,
                                    new: i,
                                    previous: j,
                                });
                            }
                            p.log_weight + lp
                        };
                    }
                    normalise(row);
                    let mut t = vec![0.0; dim];
                    functional.own(kernel, theta, new, obs, ws, &mut t)?;
                    for (j, p) in prev.iter().enumerate() {
                        let w = row[j].exp();
                        if w < prune {
                            continue;
                        }
                        functional.pair(kernel, theta, &p.state, new, obs, ws, s)?;
                        for k in 0..dim {
                            t[k] += w * (p.t_value[k] + s[k]);
                        }
                    }
                    Ok(t)
                },
            )
            .collect::<Result<_>>()?;

        state.particles = propagated
            .into_iter()
            .zip(log_w)
            .zip(t_values)
            .map(|(((s, _), log_weight), t_value)| Particle {
                state: s,
                log_weight,
                t_value,
            })
            .collect();
        state.estimate = weighted_sum(&state.particles, dim);
        state.loglik += increment;
        state.loglik_increment = increment;
        state.y_prev = y.to_vec();
        state.step = step;
        Ok(())
    }

    /// Runs over `ys[0..]` (with `ys[0]` the initial observation) and returns
    /// the final state together with `Ŝ_k` after every observation.
    pub fn run(&self, theta: &[f64], ys: &[Vec<f64>]) -> Result<(FilterState<K::State>, Vec<Vec<f64>>)> {
        let first = ys
            .first()
            .ok_or_else(|| Error::InvalidArgument("at least one observation is required".into()))?;
        let mut state = self.init(theta, first)?;
        let mut trace = vec![state.estimate.clone()];
        for y in &ys[1..] {
            self.step(&mut state, theta, y)?;
            trace.push(state.estimate.clone());
        }
        Ok((state, trace))
    }
}

fn weighted_sum<S>(particles: &[Particle<S>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for p in particles {
        let w = p.log_weight.exp();
        for k in 0..dim {
            out[k] += w * p.t_value[k];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{FdScore, LagProduct, StateSum};
    use crate::kernel::{LinearGaussianKernel, PathspaceKernel};
    use crate::jump_augment::Construct;
    use crate::model::OrnsteinUhlenbeck;
    use crate::oracle::{kalman_loglik, rts_smoother, LinearGaussian};
    use std::sync::Arc;

    fn lg() -> LinearGaussian {
        LinearGaussian {
            a: 0.8,
            c: 0.1,
            q: 0.3,
            r: 0.2,
            m0: 0.0,
            p0: 0.5,
        }
    }

    fn data() -> Vec<Vec<f64>> {
        [0.3, 0.1, -0.4, 0.2, 0.9, 0.5].iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn weights_are_normalised_after_every_step() {
        let k = LinearGaussianKernel::fixed(lg());
        let sm = Smoother::new(&k, &StateSum, SmootherConfig::new(64, 3));
        let mut st = sm.init(&[], &[0.3]).unwrap();
        for y in data().iter().skip(1) {
            sm.step(&mut st, &[], y).unwrap();
            let s: f64 = st.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_particle_accumulates_along_its_trajectory() {
        let k = LinearGaussianKernel::fixed(lg());
        let sm = Smoother::new(&k, &StateSum, SmootherConfig::new(1, 5));
        let mut st = sm.init(&[], &[0.3]).unwrap();
        let mut total = st.particles[0].state[0];
        for y in data().iter().skip(1) {
            sm.step(&mut st, &[], y).unwrap();
            total += st.particles[0].state[0];
        }
        assert!((st.estimate[0] - total).abs() < 1e-12);
    }

    #[test]
    fn dirac_prior_with_flat_observation_gives_uniform_weights() {
        let model = LinearGaussian { r: 1e300, p0: 0.0, ..lg() };
        let k = LinearGaussianKernel::fixed(model);
        let sm = Smoother::new(&k, &StateSum, SmootherConfig::new(10, 1));
        let st = sm.init(&[], &[0.0]).unwrap();
        for w in st.weights() {
            assert!((w - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn large_systems_approach_the_kalman_smoother() {
        let ys: Vec<f64> = data().iter().map(|v| v[0]).collect();
        let exact = rts_smoother(&lg(), &ys).unwrap();
        let k = LinearGaussianKernel::fixed(lg());
        let sm = Smoother::new(&k, &StateSum, SmootherConfig::new(2000, 11));
        let (st, _) = sm.run(&[], &data()).unwrap();
        assert!((st.estimate[0] - exact.sum_states()).abs() < 0.05, "{} vs {}", st.estimate[0], exact.sum_states());
        let smp = Smoother::new(&k, &LagProduct, SmootherConfig::new(2000, 12));
        let (st2, _) = smp.run(&[], &data()).unwrap();
        assert!((st2.estimate[0] - exact.sum_lag_products()).abs() < 0.05);
        let ll = kalman_loglik(&lg(), &ys).unwrap();
        assert!((st.loglik - ll).abs() < 0.05, "{} vs {ll}", st.loglik);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let model: Arc<dyn crate::model::SdeModel> = Arc::new(OrnsteinUhlenbeck::new(0.1));
        let k = PathspaceKernel::new(model, 1.0, 8, Construct::Two);
        let f = FdScore::all(3);
        let sm = Smoother::new(&k, &f, SmootherConfig::new(16, 21));
        let a = sm.run(&[0.5, 0.0, 0.4], &data()).unwrap().1;
        let b = sm.run(&[0.5, 0.0, 0.4], &data()).unwrap().1;
        assert_eq!(a, b);
    }
}
