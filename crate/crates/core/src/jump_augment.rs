//! Augmented transitions for (jump) diffusions: sampling `x′` and evaluating
//! its density with respect to the θ-free reference measure.
//!
//! * Continuous models bridge the whole interval once.
//! * Construct One splits the interval at the jump times and bridges every
//!   inter-jump segment separately.
//! * Construct Two runs one jump-adapted guided bridge over the whole
//!   interval. Its density is the time-discretised ratio of the Euler joint
//!   density of the reconstructed path under the jump SDE to that of the
//!   guided proposal, so the intractable transition density cancels.
//!
//! For Construct One only the first segment depends on the starting state;
//! [`tail_logdensity`] and [`head_logdensity`] split the density along that
//! line so the smoothing kernel can cache the part shared by all ancestors.

use rand::RngCore;

use crate::bridge::{
    bridge_forward_into, bridge_inverse_map, check_bridge_model, log_pathspace_density_ws, AugmentedTransition,
    BridgeSegment, BridgeWorkspace,
};
use crate::error::{Error, Result};
use crate::linalg::{self, LN_2PI};
use crate::model::{JumpLaw, SdeModel};
use crate::path::{uniform_grid, JumpSet, NoisePath, PathSegment, PathView};
use crate::simulate::{euler_states, simulate_jumps, SimulationOptions};

/// Which augmentation is used for jump models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Construct {
    One,
    #[default]
    Two,
}

/// A sampled augmented transition together with the forward path that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTransition {
    pub aug: AugmentedTransition,
    pub path: PathSegment,
}

/// Reconstructed path buffer (grid times and states).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathBuf {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub dim: usize,
}

impl PathBuf {
    pub fn view(&self) -> PathView<'_> {
        PathView {
            times: &self.times,
            states: &self.states,
            dim: self.dim,
        }
    }

    fn clear(&mut self, dim: usize) {
        self.times.clear();
        self.states.clear();
        self.dim = dim;
    }
}

/// Scratch space for density evaluation; one per worker.
#[derive(Debug, Clone)]
pub struct AugWorkspace {
    bridge: BridgeWorkspace,
    seg_states: Vec<f64>,
    b: Vec<f64>,
    sigma: Vec<f64>,
    chol: Vec<f64>,
    resid: Vec<f64>,
    scratch: Vec<f64>,
    jump_cum: Vec<f64>,
    jump_step: Vec<f64>,
}

impl AugWorkspace {
    pub fn new(d: usize) -> Self {
        Self {
            bridge: BridgeWorkspace::new(d),
            seg_states: Vec::new(),
            b: vec![0.0; d],
            sigma: vec![0.0; d * d],
            chol: vec![0.0; d * d],
            resid: vec![0.0; d],
            scratch: vec![0.0; d],
            jump_cum: Vec::new(),
            jump_step: Vec::new(),
        }
    }
}

/// Segment grid size for Construct One: proportional to the segment length
/// with a floor of two steps.
pub fn segment_steps(total_steps: usize, length: f64, horizon: f64) -> usize {
    ((total_steps as f64 * length / horizon).round() as usize).max(2)
}

/// `log` of the jump factor `e^{−∫λ}/e^{−T} · Π λ(τ_i)h(b_i)`.
pub fn jump_log_factor(law: &dyn JumpLaw, theta: &[f64], jumps: &JumpSet, horizon: f64) -> f64 {
    let mut acc = horizon - law.integrated_intensity(theta, 0.0, horizon);
    for i in 0..jumps.count() {
        acc += law.intensity(theta, jumps.times[i]).ln() + law.size_logdensity(theta, jumps.size(i));
    }
    acc
}

fn require_jumps(model: &dyn SdeModel) -> Result<&dyn JumpLaw> {
    model
        .jump_law()
        .ok_or_else(|| Error::InvalidArgument(format!("model {} has no jump component", model.name())))
}

/// Bridges the whole interval: forward-simulates the SDE, takes `x′ = X_T`
/// and recovers `Z` with the bridge inverse map.
pub fn continuous_sample(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    horizon: f64,
    steps: usize,
    opts: &SimulationOptions,
    rng: &mut dyn RngCore,
) -> Result<SampledTransition> {
    check_bridge_model(model, steps)?;
    let states = euler_states(model, theta, x, horizon, steps, None, opts.check_covariance, rng)?;
    let path = PathSegment {
        times: uniform_grid(horizon, steps),
        states,
        dim: x.len(),
        jumps: None,
    };
    let endpoint = path.endpoint().to_vec();
    let noise = bridge_inverse_map(model, theta, &path, &endpoint)?;
    Ok(SampledTransition {
        aug: AugmentedTransition::Continuous { endpoint, noise },
        path,
    })
}

/// Construct One: simulates the jump SDE segment by segment, each on its own
/// grid of [`segment_steps`] steps, and bridges every segment.
pub fn construct_one_sample(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    horizon: f64,
    total_steps: usize,
    opts: &SimulationOptions,
    rng: &mut dyn RngCore,
) -> Result<SampledTransition> {
    let law = require_jumps(model)?;
    check_bridge_model(model, 2)?;
    let d = x.len();
    let jumps = simulate_jumps(law, theta, d, horizon, opts.jump_cap, rng)?;
    let mut start = x.to_vec();
    let mut t0 = 0.0;
    let mut segments = Vec::with_capacity(jumps.count() + 1);
    let mut times = Vec::new();
    let mut states = Vec::new();
    for i in 0..=jumps.count() {
        let t1 = if i < jumps.count() { jumps.times[i] } else { horizon };
        let m = segment_steps(total_steps, t1 - t0, horizon);
        let seg_states = euler_states(model, theta, &start, t1 - t0, m, None, opts.check_covariance, rng)?;
        let seg = PathSegment {
            times: uniform_grid(t1 - t0, m),
            states: seg_states,
            dim: d,
            jumps: None,
        };
        let endpoint = seg.endpoint().to_vec();
        let noise = bridge_inverse_map(model, theta, &seg, &endpoint)?;
        times.extend(seg.times.iter().map(|t| t0 + t));
        states.extend_from_slice(&seg.states);
        start.copy_from_slice(&endpoint);
        if i < jumps.count() {
            for (s, b) in start.iter_mut().zip(jumps.size(i)) {
                *s += b;
            }
        }
        segments.push(BridgeSegment { endpoint, noise });
        t0 = t1;
    }
    Ok(SampledTransition {
        path: PathSegment {
            times,
            states,
            dim: d,
            jumps: Some(jumps.clone()),
        },
        aug: AugmentedTransition::ConstructOne { jumps, segments },
    })
}

/// Construct Two: simulates the jump SDE on the uniform grid (jumps applied
/// at the first grid point at or after their times), sets `x′ = X_T` and
/// recovers `Z` through the jump-adapted guided bridge.
pub fn construct_two_sample(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    horizon: f64,
    steps: usize,
    opts: &SimulationOptions,
    rng: &mut dyn RngCore,
) -> Result<SampledTransition> {
    let law = require_jumps(model)?;
    check_bridge_model(model, steps)?;
    let d = x.len();
    let jumps = simulate_jumps(law, theta, d, horizon, opts.jump_cap, rng)?;
    let per_step = jumps.per_step(horizon, steps);
    let states = euler_states(model, theta, x, horizon, steps, Some(&per_step), opts.check_covariance, rng)?;
    let path = PathSegment {
        times: uniform_grid(horizon, steps),
        states,
        dim: d,
        jumps: Some(jumps.clone()),
    };
    let endpoint = path.endpoint().to_vec();
    let noise = construct_two_inverse(model, theta, &path, &jumps, &endpoint)?;
    Ok(SampledTransition {
        aug: AugmentedTransition::ConstructTwo { endpoint, jumps, noise },
        path,
    })
}

/// Draws an augmented transition of the requested kind. Models without a
/// jump component always use the continuous bridge.
pub fn sample_transition(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    horizon: f64,
    steps: usize,
    construct: Construct,
    opts: &SimulationOptions,
    rng: &mut dyn RngCore,
) -> Result<SampledTransition> {
    match (model.jump_law().is_some(), construct) {
        (false, _) => continuous_sample(model, theta, x, horizon, steps, opts, rng),
        (true, Construct::One) => construct_one_sample(model, theta, x, horizon, steps, opts, rng),
        (true, Construct::Two) => construct_two_sample(model, theta, x, horizon, steps, opts, rng),
    }
}

/// Inverse of the jump-adapted guided map `G_θ` on a uniform grid.
pub fn construct_two_inverse(
    model: &dyn SdeModel,
    theta: &[f64],
    path: &PathSegment,
    jumps: &JumpSet,
    x_end: &[f64],
) -> Result<NoisePath> {
    let steps = path.steps();
    check_bridge_model(model, steps)?;
    let d = path.dim;
    let horizon = path.horizon();
    let delta = horizon / steps as f64;
    let per_step = jumps.per_step(horizon, steps);
    let total: Vec<f64> = (0..d).map(|i| (0..steps).map(|j| per_step[j * d + i]).sum()).collect();
    let mut cum = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut lu = vec![0.0; d * d];
    let mut r = vec![0.0; d];
    let mut increments = Vec::with_capacity(steps * d);
    for j in 0..steps - 1 {
        let cur = path.state(j);
        let next = path.state(j + 1);
        let remaining = horizon - j as f64 * delta;
        let scale = ((remaining - delta) / remaining).sqrt();
        model.drift(theta, cur, &mut b);
        model.diffusion(theta, cur, &mut lu);
        for i in 0..d {
            let guide = (x_end[i] - total[i] - cur[i] + cum[i]) / remaining;
            r[i] = (next[i] - cur[i] - per_step[j * d + i] - (b[i] + guide) * delta) / scale;
        }
        if !linalg::solve_square(&mut lu, d, &mut r) {
            return Err(Error::DiffusionDegeneracy { state: cur.to_vec() });
        }
        increments.extend_from_slice(&r);
        for i in 0..d {
            cum[i] += per_step[j * d + i];
        }
    }
    increments.extend(std::iter::repeat_n(0.0, d));
    Ok(NoisePath {
        steps,
        dim: d,
        horizon,
        increments,
    })
}

/// Part of `log p_θ(x′ | x)` that does not depend on the starting state `x`:
/// the jump factor and all Construct One segments after the first. Zero for
/// continuous and Construct Two variates.
pub fn tail_logdensity(
    model: &dyn SdeModel,
    theta: &[f64],
    aug: &AugmentedTransition,
    horizon: f64,
    ws: &mut AugWorkspace,
) -> Result<f64> {
    match aug {
        AugmentedTransition::Continuous { .. } | AugmentedTransition::ConstructTwo { .. } => Ok(0.0),
        AugmentedTransition::ConstructOne { jumps, segments } => {
            let law = require_jumps(model)?;
            let mut acc = jump_log_factor(law, theta, jumps, horizon);
            let mut start = segments[0].endpoint.clone();
            for i in 1..segments.len() {
                for (s, b) in start.iter_mut().zip(jumps.size(i - 1)) {
                    *s += b;
                }
                let seg = &segments[i];
                acc += log_pathspace_density_ws(model, theta, &start, &seg.endpoint, &seg.noise, None, &mut ws.bridge)?;
                start.copy_from_slice(&seg.endpoint);
            }
            Ok(acc)
        }
    }
}

/// Part of `log p_θ(x′ | x)` that depends on `x`. Adding
/// [`tail_logdensity`] gives the full density. When `path_out` is given the
/// full reconstructed path is written there.
pub fn head_logdensity(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    aug: &AugmentedTransition,
    horizon: f64,
    ws: &mut AugWorkspace,
    path_out: Option<&mut PathBuf>,
) -> Result<f64> {
    match aug {
        AugmentedTransition::Continuous { endpoint, noise } => {
            let lp = match path_out {
                Some(out) => {
                    out.clear(x.len());
                    let lp = log_pathspace_density_ws(model, theta, x, endpoint, noise, Some(&mut out.states), &mut ws.bridge)?;
                    out.times = uniform_grid(horizon, noise.steps);
                    lp
                }
                None => log_pathspace_density_ws(model, theta, x, endpoint, noise, None, &mut ws.bridge)?,
            };
            Ok(lp)
        }
        AugmentedTransition::ConstructOne { jumps, segments } => {
            let first = &segments[0];
            let t1 = if jumps.is_empty() { horizon } else { jumps.times[0] };
            match path_out {
                None => log_pathspace_density_ws(model, theta, x, &first.endpoint, &first.noise, None, &mut ws.bridge),
                Some(out) => {
                    out.clear(x.len());
                    let lp = log_pathspace_density_ws(
                        model,
                        theta,
                        x,
                        &first.endpoint,
                        &first.noise,
                        Some(&mut out.states),
                        &mut ws.bridge,
                    )?;
                    out.times.extend(uniform_grid(t1, first.noise.steps));
                    let mut start = first.endpoint.clone();
                    let mut t0 = t1;
                    for i in 1..segments.len() {
                        for (s, b) in start.iter_mut().zip(jumps.size(i - 1)) {
                            *s += b;
                        }
                        let seg = &segments[i];
                        let t_end = if i < jumps.count() { jumps.times[i] } else { horizon };
                        bridge_forward_into(model, theta, &seg.noise, &start, &seg.endpoint, &mut ws.seg_states, &mut ws.bridge)?;
                        out.states.extend_from_slice(&ws.seg_states);
                        out.times.extend(seg.noise.horizon_grid().map(|t| t0 + t));
                        start.copy_from_slice(&seg.endpoint);
                        t0 = t_end;
                    }
                    Ok(lp)
                }
            }
        }
        AugmentedTransition::ConstructTwo { endpoint, jumps, noise } => {
            let law = require_jumps(model)?;
            let jump = jump_log_factor(law, theta, jumps, horizon);
            let ratio = construct_two_ratio(model, theta, x, endpoint, jumps, noise, ws, path_out)?;
            Ok(jump + ratio)
        }
    }
}

/// Full `log p_θ(x′ | x; T)` for any augmentation.
pub fn augmented_logdensity(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    aug: &AugmentedTransition,
    horizon: f64,
) -> Result<f64> {
    let mut ws = AugWorkspace::new(x.len());
    Ok(tail_logdensity(model, theta, aug, horizon, &mut ws)? + head_logdensity(model, theta, x, aug, horizon, &mut ws, None)?)
}

/// Construct One density: jump factor plus the bridge density of every
/// inter-jump segment.
pub fn construct_one_logdensity(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    aug: &AugmentedTransition,
    horizon: f64,
) -> Result<f64> {
    if !matches!(aug, AugmentedTransition::ConstructOne { .. }) {
        return Err(Error::InvalidArgument("expected a Construct One variate".into()));
    }
    augmented_logdensity(model, theta, x, aug, horizon)
}

/// Construct Two density: jump factor plus the discretised Euler
/// target/proposal ratio along the reconstructed path.
pub fn construct_two_logdensity(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    aug: &AugmentedTransition,
    horizon: f64,
) -> Result<f64> {
    if !matches!(aug, AugmentedTransition::ConstructTwo { .. }) {
        return Err(Error::InvalidArgument("expected a Construct Two variate".into()));
    }
    augmented_logdensity(model, theta, x, aug, horizon)
}

/// Rebuilds `X = G_θ(J, Z; x, x′)` and accumulates, step by step,
/// `log N(ΔX_j − ΔJ_j; b_jδ, Σ_jδ)` under the unconditioned jump SDE minus
/// the guided proposal's log density of the same step expressed in `Z`
/// (so relative to Wiener measure). The pinned last step contributes only
/// its target term.
#[allow(clippy::too_many_arguments)]
fn construct_two_ratio(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    x_end: &[f64],
    jumps: &JumpSet,
    noise: &NoisePath,
    ws: &mut AugWorkspace,
    mut path_out: Option<&mut PathBuf>,
) -> Result<f64> {
    let d = x.len();
    let steps = noise.steps;
    check_bridge_model(model, steps)?;
    let horizon = noise.horizon;
    let delta = noise.delta();

    ws.jump_step = jumps.per_step(horizon, steps);
    ws.jump_cum.clear();
    ws.jump_cum.resize(d, 0.0);
    let mut total = vec![0.0; d];
    for j in 0..steps {
        for i in 0..d {
            total[i] += ws.jump_step[j * d + i];
        }
    }
    if let Some(out) = path_out.as_deref_mut() {
        out.clear(d);
        out.times = uniform_grid(horizon, steps);
        out.states.extend_from_slice(x);
    }

    let mut cur = x.to_vec();
    let mut next = vec![0.0; d];
    let mut acc = 0.0;
    for j in 0..steps {
        let remaining = horizon - j as f64 * delta;
        model.drift(theta, &cur, &mut ws.b);
        model.diffusion(theta, &cur, &mut ws.sigma);
        linalg::outer_self(&ws.sigma, d, d, &mut ws.chol);
        if !linalg::cholesky_in_place(&mut ws.chol, d) {
            return Err(Error::DiffusionDegeneracy { state: cur.clone() });
        }
        let guided = j + 1 < steps;
        if guided {
            let scale = ((remaining - delta) / remaining).sqrt();
            let z = noise.step(j);
            for i in 0..d {
                let guide = (x_end[i] - total[i] - cur[i] + ws.jump_cum[i]) / remaining;
                let mut v = cur[i] + (ws.b[i] + guide) * delta + ws.jump_step[j * d + i];
                for k in 0..d {
                    v += scale * ws.sigma[i * d + k] * z[k];
                }
                next[i] = v;
            }
        } else {
            next.copy_from_slice(x_end);
        }
        // target: ΔX − ΔJ − bδ ~ N(0, Σδ)
        for i in 0..d {
            ws.resid[i] = next[i] - cur[i] - ws.jump_step[j * d + i] - ws.b[i] * delta;
        }
        ws.scratch.copy_from_slice(&ws.resid);
        linalg::cholesky_solve(&ws.chol, d, &mut ws.scratch);
        let maha = linalg::dot(&ws.resid, &ws.scratch) / delta;
        if guided {
            let r = (remaining - delta) / remaining;
            let z2 = linalg::dot(noise.step(j), noise.step(j)) / delta;
            acc += -0.5 * maha + 0.5 * d as f64 * r.ln() + 0.5 * z2;
        } else {
            let logdet = linalg::cholesky_logdet(&ws.chol, d);
            acc += -0.5 * (d as f64 * (LN_2PI + delta.ln()) + logdet + maha);
        }
        for i in 0..d {
            ws.jump_cum[i] += ws.jump_step[j * d + i];
        }
        if let Some(out) = path_out.as_deref_mut() {
            out.states.extend_from_slice(&next);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    if !acc.is_finite() {
        return Err(Error::NonFiniteValue("Construct Two density".into()));
    }
    Ok(acc)
}
