//! Additive functionals `S_θ(x_{0:n}) = Σ_k s_{θ,k}(x_{k−1}, x_k)`.
//!
//! Each increment is split like the kernel density: [`Functional::pair`] is
//! the part that depends on the ancestor and is averaged over the smoothing
//! weights, [`Functional::own`] the part that depends on the new particle
//! only and is added once.

use crate::bridge::AugmentedTransition;
use crate::error::{Error, Result};
use crate::kernel::{Kernel, Obs, PathspaceKernel};
use crate::model::ParamConstraint;
use crate::path::NoisePath;

pub trait Functional<K: Kernel>: Send + Sync {
    fn dim(&self) -> usize;

    /// `s_0(x_0)`.
    fn initial(&self, kernel: &K, theta: &[f64], x0: &K::State, y0: &[f64], out: &mut [f64]) -> Result<()>;

    /// Ancestor-independent part of `s_n`.
    fn own(
        &self,
        kernel: &K,
        theta: &[f64],
        new: &K::State,
        obs: Obs<'_>,
        ws: &mut K::Workspace,
        out: &mut [f64],
    ) -> Result<()>;

    /// Ancestor-dependent part of `s_n`.
    #[allow(clippy::too_many_arguments)]
    fn pair(
        &self,
        kernel: &K,
        theta: &[f64],
        prev: &K::State,
        new: &K::State,
        obs: Obs<'_>,
        ws: &mut K::Workspace,
        out: &mut [f64],
    ) -> Result<()>;
}

/// `Σ_k x_k` (first state coordinate).
#[derive(Debug, Clone, Copy, Default)]
pub struct StateSum;

impl<K: Kernel> Functional<K> for StateSum {
    fn dim(&self) -> usize {
        1
    }

    fn initial(&self, kernel: &K, _theta: &[f64], x0: &K::State, _y0: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = kernel.endpoint(x0)[0];
        Ok(())
    }

    fn own(&self, kernel: &K, _: &[f64], new: &K::State, _: Obs<'_>, _: &mut K::Workspace, out: &mut [f64]) -> Result<()> {
        out[0] = kernel.endpoint(new)[0];
        Ok(())
    }

    fn pair(
        &self,
        _: &K,
        _: &[f64],
        _: &K::State,
        _: &K::State,
        _: Obs<'_>,
        _: &mut K::Workspace,
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }
}

/// `Σ_k x_{k−1}·x_k` (first state coordinate).
#[derive(Debug, Clone, Copy, Default)]
pub struct LagProduct;

impl<K: Kernel> Functional<K> for LagProduct {
    fn dim(&self) -> usize {
        1
    }

    fn initial(&self, _: &K, _: &[f64], _: &K::State, _: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }

    fn own(&self, _: &K, _: &[f64], _: &K::State, _: Obs<'_>, _: &mut K::Workspace, out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }

    fn pair(
        &self,
        kernel: &K,
        _: &[f64],
        prev: &K::State,
        new: &K::State,
        _: Obs<'_>,
        _: &mut K::Workspace,
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = kernel.endpoint(prev)[0] * kernel.endpoint(new)[0];
        Ok(())
    }
}

/// Relative finite-difference step: `h_i = 10⁻⁴·max(1, |θ_i|)`.
pub const FD_REL_STEP: f64 = 1e-4;

/// Central difference step for coordinate `i`, shrunk so positive
/// coordinates stay positive.
pub fn fd_step(theta: &[f64], domain: Option<&[ParamConstraint]>, i: usize) -> f64 {
    let h = FD_REL_STEP * theta[i].abs().max(1.0);
    match domain.map(|d| d[i]) {
        Some(ParamConstraint::Positive) => h.min(0.5 * theta[i]),
        _ => h,
    }
}

/// Score functional `s_n = ∇_θ[log p_θ(x_n | x_{n−1}) + log g_θ(y_n | …)]` by
/// central differences of the kernel densities at frozen auxiliary noise.
/// Only the listed coordinates are differentiated; the others are skipped.
#[derive(Debug, Clone)]
pub struct FdScore {
    pub coords: Vec<usize>,
    pub domain: Option<Vec<ParamConstraint>>,
}

const MAX_PARAMS: usize = 16;

impl FdScore {
    pub fn all(dim_theta: usize) -> Self {
        Self {
            coords: (0..dim_theta).collect(),
            domain: None,
        }
    }

    pub fn with_domain(mut self, domain: &[ParamConstraint]) -> Self {
        self.domain = Some(domain.to_vec());
        self
    }

    fn gradient<F>(&self, theta: &[f64], out: &mut [f64], mut f: F) -> Result<()>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        assert!(theta.len() <= MAX_PARAMS, "at most {MAX_PARAMS} parameters are supported");
        let mut buf = [0.0; MAX_PARAMS];
        let tp = &mut buf[..theta.len()];
        tp.copy_from_slice(theta);
        for (slot, &i) in out.iter_mut().zip(&self.coords) {
            let h = fd_step(theta, self.domain.as_deref(), i);
            tp[i] = theta[i] + h;
            let up = f(tp)?;
            tp[i] = theta[i] - h;
            let down = f(tp)?;
            tp[i] = theta[i];
            let g = (up - down) / (2.0 * h);
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { coordinate: i });
            }
            *slot = g;
        }
        Ok(())
    }
}

impl<K: Kernel> Functional<K> for FdScore {
    fn dim(&self) -> usize {
        self.coords.len()
    }

    fn initial(&self, kernel: &K, theta: &[f64], x0: &K::State, y0: &[f64], out: &mut [f64]) -> Result<()> {
        self.gradient(theta, out, |t| Ok(kernel.initial_logdensity(t, y0, x0)))
    }

    fn own(
        &self,
        kernel: &K,
        theta: &[f64],
        new: &K::State,
        obs: Obs<'_>,
        ws: &mut K::Workspace,
        out: &mut [f64],
    ) -> Result<()> {
        self.gradient(theta, out, |t| kernel.own_logdensity(t, new, obs, ws))
    }

    fn pair(
        &self,
        kernel: &K,
        theta: &[f64],
        prev: &K::State,
        new: &K::State,
        obs: Obs<'_>,
        ws: &mut K::Workspace,
        out: &mut [f64],
    ) -> Result<()> {
        self.gradient(theta, out, |t| kernel.pair_logdensity(t, prev, new, obs, ws))
    }
}

/// Closed-form score of the O–U bridge density
/// `dX = θ₁(θ₂ − X)dt + θ₃dW` on a continuous or Construct One variate
/// (jump laws must not depend on θ). The observation density is taken as
/// θ-free.
#[derive(Debug, Clone, Copy, Default)]
pub struct OuBridgeScore;

/// Gradient in `(θ₁, θ₂, θ₃)` of the O–U bridge log density at fixed noise.
///
/// For this model the Stratonovich part of the drift integral telescopes to
/// `−θ₁/2·[(x′ − θ₂)² − (x − θ₂)²]` and the Itô correction is `θ₁T/2`, so
/// the path enters only through the trapezoid energy term. The guided path
/// does not involve the drift; only `θ₃` moves it, with sensitivity
/// `D = ∂X/∂θ₃` obeying `D_{j+1} = r_j D_j + √r_j ΔW_j` and `D_M = 0`.
pub fn ou_bridge_gradient(theta: &[f64], x: f64, x_end: f64, noise: &NoisePath, out: &mut [f64]) {
    let (t1, t2, s) = (theta[0], theta[1], theta[2]);
    let steps = noise.steps;
    let horizon = noise.horizon;
    let delta = horizon / steps as f64;
    // energy sums carry trapezoid weights: ½ at both ends, 1 inside
    let (mut energy, mut g1_energy, mut g2_energy, mut g3_energy) = (0.0, 0.0, 0.0, 0.0);
    let mut accumulate = |v: f64, d: f64, w: f64| {
        let b = t1 * (t2 - v);
        energy += w * b * b;
        g1_energy += w * 2.0 * b * (t2 - v);
        g2_energy += w * 2.0 * b * t1;
        g3_energy += w * 2.0 * b * (-t1 * d);
    };
    accumulate(x, 0.0, 0.5);
    let (mut cur, mut d) = (x, 0.0);
    for j in 0..steps - 1 {
        let remaining = horizon - j as f64 * delta;
        let r = (remaining - delta) / remaining;
        let z = noise.increments[j];
        cur += (x_end - cur) / remaining * delta + r.sqrt() * s * z;
        d = r * d + r.sqrt() * z;
        accumulate(cur, d, 1.0);
    }
    accumulate(x_end, 0.0, 0.5);
    let (energy, g1_energy, g2_energy, g3_energy) =
        (energy * delta, g1_energy * delta, g2_energy * delta, g3_energy * delta);

    let (u_end, u) = (x_end - t2, x - t2);
    let strat = -0.5 * t1 * (u_end * u_end - u * u);
    let s2 = s * s;
    out[0] = (-0.5 * (u_end * u_end - u * u) - 0.5 * g1_energy) / s2 + 0.5 * horizon;
    out[1] = (t1 * (x_end - x) - 0.5 * g2_energy) / s2;
    let gap = x_end - x;
    out[2] = -0.5 * g3_energy / s2 - 2.0 * (strat - 0.5 * energy) / (s2 * s) - 1.0 / s
        + gap * gap / (horizon * s2 * s);
}

fn require_bridge(aug: Option<&AugmentedTransition>) -> Result<&AugmentedTransition> {
    match aug {
        Some(a @ (AugmentedTransition::Continuous { .. } | AugmentedTransition::ConstructOne { .. })) => Ok(a),
        Some(AugmentedTransition::ConstructTwo { .. }) => Err(Error::InvalidArgument(
            "the closed-form O–U score covers continuous and Construct One variates only".into(),
        )),
        None => Err(Error::InvalidArgument("particle has no augmented variable".into())),
    }
}

impl Functional<PathspaceKernel> for OuBridgeScore {
    fn dim(&self) -> usize {
        3
    }

    fn initial(&self, _: &PathspaceKernel, _: &[f64], _: &<PathspaceKernel as Kernel>::State, _: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn own(
        &self,
        _kernel: &PathspaceKernel,
        theta: &[f64],
        new: &<PathspaceKernel as Kernel>::State,
        _obs: Obs<'_>,
        _ws: &mut <PathspaceKernel as Kernel>::Workspace,
        out: &mut [f64],
    ) -> Result<()> {
        out.fill(0.0);
        if let AugmentedTransition::ConstructOne { jumps, segments } = require_bridge(new.aug.as_ref())? {
            let mut g = [0.0; 3];
            for i in 1..segments.len() {
                let start = segments[i - 1].endpoint[0] + jumps.size(i - 1)[0];
                ou_bridge_gradient(theta, start, segments[i].endpoint[0], &segments[i].noise, &mut g);
                for (o, v) in out.iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        Ok(())
    }

    fn pair(
        &self,
        _kernel: &PathspaceKernel,
        theta: &[f64],
        prev: &<PathspaceKernel as Kernel>::State,
        new: &<PathspaceKernel as Kernel>::State,
        _obs: Obs<'_>,
        _ws: &mut <PathspaceKernel as Kernel>::Workspace,
        out: &mut [f64],
    ) -> Result<()> {
        match require_bridge(new.aug.as_ref())? {
            AugmentedTransition::Continuous { endpoint, noise } => ou_bridge_gradient(theta, prev.x[0], endpoint[0], noise, out),
            AugmentedTransition::ConstructOne { segments, .. } => {
                ou_bridge_gradient(theta, prev.x[0], segments[0].endpoint[0], &segments[0].noise, out)
            }
            AugmentedTransition::ConstructTwo { .. } => unreachable!(),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::log_pathspace_density;
    use crate::model::OrnsteinUhlenbeck;
    use crate::rng::stream;

    #[test]
    fn closed_form_ou_gradient_matches_differences() {
        let m = OrnsteinUhlenbeck::new(0.1);
        let theta = [0.4, 0.2, 0.5];
        let z = NoisePath::sample(25, 1, 1.3, &mut stream(8, 0, 0));
        let mut g = [0.0; 3];
        ou_bridge_gradient(&theta, 0.1, -0.4, &z, &mut g);
        for i in 0..3 {
            let h = 1e-5;
            let mut up = theta;
            up[i] += h;
            let mut down = theta;
            down[i] -= h;
            let fd = (log_pathspace_density(&m, &up, &[0.1], &[-0.4], &z).unwrap()
                - log_pathspace_density(&m, &down, &[0.1], &[-0.4], &z).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "coordinate {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn steps_stay_inside_positive_domain() {
        let dom = [ParamConstraint::Positive];
        assert_eq!(fd_step(&[2e-5], Some(&dom), 0), 1e-5);
        assert!((fd_step(&[3.0], Some(&dom), 0) - 3e-4).abs() < 1e-18);
        assert!((fd_step(&[-3.0], None, 0) - 3e-4).abs() < 1e-18);
    }
}
