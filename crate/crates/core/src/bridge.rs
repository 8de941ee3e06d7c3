//! Guided diffusion bridge: the transform `Z ↦ X = F_θ(Z; x, x′)`, its
//! inverse, and the pathspace transition density `p_θ(x′, Z | x; T)` taken
//! with respect to Lebesgue ⊗ Wiener measure.
//!
//! The density below carries the full drift inside log φ
//! (`∫⟨b, Σ⁻¹dX⟩ − ½∫⟨b, Σ⁻¹b⟩dt` plus the two Σ-variation terms), which is
//! the Radon–Nikodym derivative against the *driftless* guided process
//! `dX = (x′ − X)/(T − t)dt + σ_θ(X)dW`. That is the process simulated here.
//!
//! On a uniform grid of `M` steps the guided step from `t_j` uses the
//! Brownian-bridge variance factor `r_j = (T − t_{j+1})/(T − t_j)`:
//!
//! `X_{j+1} = X_j + (x′ − X_j)/(T − t_j)·δ + √r_j·σ_θ(X_j)Z_j`.
//!
//! With constant σ the grid skeleton is then exactly a Brownian bridge, and
//! `r_{M−1} = 0` pins `X_M = x′` without touching the `(T − t)⁻¹`
//! singularity. The last Wiener increment is therefore not consumed.
//!
//! The drift integral is discretised in Stratonovich form with the Itô
//! correction added back,
//!
//! `∫⟨Σ⁻¹b, dX⟩ ≈ Σ_j ½⟨f_j + f_{j+1}, ΔX_j⟩ − ½Σ_j ½(c_j + c_{j+1})δ`,
//!
//! with `f = Σ⁻¹b` and `c = tr(∇f·Σ)`, and the energy term uses the
//! trapezoid rule. A left-point sum here has an `O(δ)` bias because the
//! bridge's realised quadratic variation over the grid is `TΣ(1 − 1/M)`
//! rather than `TΣ`; the symmetric form removes it. The two Σ-variation
//! terms keep left-endpoint coefficients.

use crate::error::{Error, Result};
use crate::linalg::{self, LN_2PI};
use crate::model::SdeModel;
use crate::path::{uniform_grid, JumpSet, NoisePath, PathSegment};

/// One bridged inter-jump segment of a Construct One variate.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSegment {
    /// Pre-jump state at the segment end, `x_{τ_i−}`.
    pub endpoint: Vec<f64>,
    pub noise: NoisePath,
}

/// The augmented transition variable `x′`: the endpoint together with the
/// auxiliary path data that makes its density tractable.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmentedTransition {
    Continuous {
        endpoint: Vec<f64>,
        noise: NoisePath,
    },
    /// Per-segment bridges between jumps. Segment `i` runs from
    /// `x_{τ_{i−1}}` (after the jump) to `x_{τ_i−}` (before the next one);
    /// there are `κ + 1` segments and the last endpoint is `x′`.
    ConstructOne {
        jumps: JumpSet,
        segments: Vec<BridgeSegment>,
    },
    /// One jump-adapted guided bridge over the whole interval.
    ConstructTwo {
        endpoint: Vec<f64>,
        jumps: JumpSet,
        noise: NoisePath,
    },
}

impl AugmentedTransition {
    pub fn endpoint(&self) -> &[f64] {
        match self {
            AugmentedTransition::Continuous { endpoint, .. } => endpoint,
            AugmentedTransition::ConstructTwo { endpoint, .. } => endpoint,
            AugmentedTransition::ConstructOne { segments, .. } => &segments[segments.len() - 1].endpoint,
        }
    }

    pub fn jumps(&self) -> Option<&JumpSet> {
        match self {
            AugmentedTransition::Continuous { .. } => None,
            AugmentedTransition::ConstructOne { jumps, .. } | AugmentedTransition::ConstructTwo { jumps, .. } => {
                Some(jumps)
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            AugmentedTransition::Continuous { endpoint, noise } => {
                endpoint.iter().all(|v| v.is_finite()) && noise.is_finite()
            }
            AugmentedTransition::ConstructTwo { endpoint, noise, .. } => {
                endpoint.iter().all(|v| v.is_finite()) && noise.is_finite()
            }
            AugmentedTransition::ConstructOne { segments, .. } => segments
                .iter()
                .all(|s| s.endpoint.iter().all(|v| v.is_finite()) && s.noise.is_finite()),
        }
    }
}

/// Scratch buffers for the bridge routines; one per worker.
#[derive(Debug, Clone)]
pub struct BridgeWorkspace {
    d: usize,
    b: Vec<f64>,
    sigma: Vec<f64>,
    chol: Vec<f64>,
    inv: Vec<f64>,
    inv_next: Vec<f64>,
    col: Vec<f64>,
    x: Vec<f64>,
    x_next: Vec<f64>,
    tmp: Vec<f64>,
    lu: Vec<f64>,
    grid: GridTable,
}

/// Per-step constants of the guided scheme on a given grid: `δ/(T − t_j)`,
/// `√r_j` and `1/(T − t_j)`.
#[derive(Debug, Clone, Default)]
struct GridTable {
    steps: usize,
    horizon: f64,
    rows: Vec<[f64; 3]>,
}

impl GridTable {
    fn prepare(&mut self, horizon: f64, steps: usize) {
        if self.steps == steps && self.horizon == horizon {
            return;
        }
        let delta = horizon / steps as f64;
        self.rows = (0..steps)
            .map(|j| {
                let remaining = horizon - j as f64 * delta;
                [delta / remaining, ((remaining - delta) / remaining).sqrt(), 1.0 / remaining]
            })
            .collect();
        self.steps = steps;
        self.horizon = horizon;
    }
}

impl BridgeWorkspace {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            b: vec![0.0; d],
            sigma: vec![0.0; d * d],
            chol: vec![0.0; d * d],
            inv: vec![0.0; d * d],
            inv_next: vec![0.0; d * d],
            col: vec![0.0; d],
            x: vec![0.0; d],
            x_next: vec![0.0; d],
            tmp: vec![0.0; d],
            lu: vec![0.0; d * d],
            grid: GridTable::default(),
        }
    }

    fn ensure(&mut self, d: usize) {
        if self.d != d {
            *self = Self::new(d);
        }
    }
}

/// Checks the shape requirements shared by every bridge routine.
pub fn check_bridge_model(model: &dyn SdeModel, steps: usize) -> Result<()> {
    if model.dim_w() != model.dim_x() {
        return Err(Error::NonSquareDiffusion {
            dim_x: model.dim_x(),
            dim_w: model.dim_w(),
        });
    }
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("bridge grids need at least 2 steps, got {steps}")));
    }
    Ok(())
}

/// Evaluates b, σ and Σ⁻¹ at `x`, returning log |Σ(x)| when `logdet` is set
/// (zero otherwise). Errors if Σ(x) is not positive definite.
#[allow(clippy::too_many_arguments)]
fn eval_point(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    ws_b: &mut [f64],
    ws_sigma: &mut [f64],
    chol: &mut [f64],
    inv: &mut [f64],
    col: &mut [f64],
    logdet: bool,
) -> Result<f64> {
    let d = x.len();
    model.drift(theta, x, ws_b);
    model.diffusion(theta, x, ws_sigma);
    if d == 1 {
        let s2 = ws_sigma[0] * ws_sigma[0];
        if !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::DiffusionDegeneracy { state: x.to_vec() });
        }
        inv[0] = 1.0 / s2;
        return Ok(if logdet { s2.ln() } else { 0.0 });
    }
    linalg::outer_self(ws_sigma, d, d, chol);
    if !linalg::cholesky_in_place(chol, d) {
        return Err(Error::DiffusionDegeneracy { state: x.to_vec() });
    }
    linalg::cholesky_inverse(chol, d, inv, col);
    Ok(if logdet { linalg::cholesky_logdet(chol, d) } else { 0.0 })
}

/// Quadratic form `uᵀ A v` for a row-major `d × d` matrix.
#[inline]
fn quad(a: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let d = u.len();
    let mut acc = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for k in 0..d {
            row += a[i * d + k] * v[k];
        }
        acc += u[i] * row;
    }
    acc
}

/// Running accumulation of the terms of log φ along a grid path.
/// `strat` and `correction` together make up the Itô integral.
struct PhiTerms {
    strat: f64,
    correction: f64,
    energy: f64,
    dinv: f64,
    covariation: f64,
}

impl PhiTerms {
    fn new() -> Self {
        Self {
            strat: 0.0,
            correction: 0.0,
            energy: 0.0,
            dinv: 0.0,
            covariation: 0.0,
        }
    }

    fn value(&self) -> f64 {
        self.strat - 0.5 * self.correction - 0.5 * self.energy - 0.5 * self.dinv - 0.5 * self.covariation
    }
}

/// Relative step for the finite-difference fallback of the Itô correction.
const CORRECTION_FD_STEP: f64 = 1e-5;

/// `f = Σ(x)⁻¹ b(x)`.
fn scaled_drift(model: &dyn SdeModel, theta: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
    let d = x.len();
    let mut sigma = vec![0.0; d * d];
    let mut cov = vec![0.0; d * d];
    model.drift(theta, x, out);
    model.diffusion(theta, x, &mut sigma);
    linalg::outer_self(&sigma, d, d, &mut cov);
    if !linalg::cholesky_in_place(&mut cov, d) {
        return Err(Error::DiffusionDegeneracy { state: x.to_vec() });
    }
    linalg::cholesky_solve(&cov, d, out);
    Ok(())
}

/// `c(x) = tr(∇(Σ⁻¹b)·Σ)`, from the model when it has a closed form and by
/// central differences otherwise. `sigma` is `σ_θ(x)`.
fn ito_correction(model: &dyn SdeModel, theta: &[f64], x: &[f64], sigma: &[f64]) -> Result<f64> {
    if let Some(c) = model.ito_correction(theta, x) {
        return Ok(c);
    }
    let d = x.len();
    let mut cov = vec![0.0; d * d];
    linalg::outer_self(sigma, d, d, &mut cov);
    let mut probe = x.to_vec();
    let mut up = vec![0.0; d];
    let mut down = vec![0.0; d];
    let mut acc = 0.0;
    for k in 0..d {
        let h = CORRECTION_FD_STEP * x[k].abs().max(1.0);
        probe[k] = x[k] + h;
        scaled_drift(model, theta, &probe, &mut up)?;
        probe[k] = x[k] - h;
        scaled_drift(model, theta, &probe, &mut down)?;
        probe[k] = x[k];
        for i in 0..d {
            acc += (up[i] - down[i]) / (2.0 * h) * cov[k * d + i];
        }
    }
    Ok(acc)
}

/// Result of a fused bridge evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeDensity {
    pub log_phi: f64,
    pub log_density: f64,
}

/// Builds the bridge path from `noise` and accumulates log φ and the
/// pathspace log density in the same pass. When `states_out` is given the
/// path states are written there (`(M + 1)·d` values).
///
/// If `states_in` is given it is used as the path instead of running the
/// forward map (the noise is then ignored).
fn fused(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    x_end: &[f64],
    horizon: f64,
    steps: usize,
    noise: Option<&[f64]>,
    states_in: Option<&[f64]>,
    mut states_out: Option<&mut Vec<f64>>,
    ws: &mut BridgeWorkspace,
) -> Result<BridgeDensity> {
    let d = x.len();
    if d == 1 && states_in.is_none() {
        let noise = noise.expect("noise or states must be given");
        return fused_scalar(model, theta, x[0], x_end[0], horizon, steps, noise, states_out, ws);
    }
    ws.ensure(d);
    let delta = horizon / steps as f64;
    let BridgeWorkspace {
        b,
        sigma,
        chol,
        inv,
        inv_next,
        col,
        x: cur,
        x_next,
        tmp,
        grid,
        ..
    } = ws;
    grid.prepare(horizon, steps);

    cur.copy_from_slice(x);
    if let Some(out) = states_out.as_deref_mut() {
        out.clear();
        out.extend_from_slice(x);
    }
    let logdet_start = eval_point(model, theta, cur, b, sigma, chol, inv, col, true)?;
    let mut corr = ito_correction(model, theta, cur, sigma)?;

    // log N(x′; x, TΣ(x))
    for i in 0..d {
        tmp[i] = x_end[i] - x[i];
    }
    let maha = quad(inv, tmp, tmp) / horizon;
    let log_gauss = -0.5 * (d as f64 * (LN_2PI + horizon.ln()) + logdet_start + maha);

    let mut terms = PhiTerms::new();
    let mut logdet_end = logdet_start;
    for j in 0..steps {
        let [pull, scale, inv_remaining] = grid.rows[j];
        let guided = j + 1 < steps;
        if let Some(states) = states_in {
            x_next.copy_from_slice(&states[(j + 1) * d..(j + 2) * d]);
        } else if guided {
            let z = &noise.expect("noise or states must be given")[j * d..(j + 1) * d];
            for i in 0..d {
                let mut v = cur[i] + (x_end[i] - cur[i]) * pull;
                for k in 0..d {
                    v += scale * sigma[i * d + k] * z[k];
                }
                x_next[i] = v;
            }
        } else {
            x_next.copy_from_slice(x_end);
        }
        if let Some(out) = states_out.as_deref_mut() {
            out.extend_from_slice(x_next);
        }

        // trapezoid halves from the left end; the right halves follow once
        // the coefficients at X_{j+1} are known
        for i in 0..d {
            tmp[i] = x_next[i] - cur[i];
        }
        terms.strat += 0.5 * quad(inv, b, tmp);
        terms.energy += 0.5 * quad(inv, b, b) * delta;
        terms.correction += 0.5 * corr * delta;

        let logdet_next = eval_point(model, theta, x_next, b, sigma, chol, inv_next, col, !guided)?;
        corr = ito_correction(model, theta, x_next, sigma)?;
        terms.strat += 0.5 * quad(inv_next, b, tmp);
        terms.energy += 0.5 * quad(inv_next, b, b) * delta;
        terms.correction += 0.5 * corr * delta;
        if guided {
            let mut dinv = 0.0;
            let mut cov = 0.0;
            for i in 0..d {
                let ri = x_end[i] - cur[i];
                let ri_next = x_end[i] - x_next[i];
                for k in 0..d {
                    let rk = x_end[k] - cur[k];
                    let rk_next = x_end[k] - x_next[k];
                    let dik = inv_next[i * d + k] - inv[i * d + k];
                    dinv += ri * dik * rk;
                    cov += dik * (ri_next * rk_next - ri * rk);
                }
            }
            terms.dinv += dinv * inv_remaining;
            terms.covariation += cov * inv_remaining;
        } else {
            logdet_end = logdet_next;
        }
        std::mem::swap(inv, inv_next);
        cur.copy_from_slice(x_next);
    }

    let log_phi = terms.value();
    let log_density = log_phi + log_gauss + 0.5 * logdet_start - 0.5 * logdet_end;
    if !log_density.is_finite() {
        return Err(Error::NonFiniteValue(format!(
            "bridge density (log φ = {log_phi}, log N = {log_gauss})"
        )));
    }
    Ok(BridgeDensity { log_phi, log_density })
}

/// One-dimensional specialisation of [`fused`] with identical arithmetic.
#[allow(clippy::too_many_arguments)]
fn fused_scalar(
    model: &dyn SdeModel,
    theta: &[f64],
    x: f64,
    x_end: f64,
    horizon: f64,
    steps: usize,
    noise: &[f64],
    mut states_out: Option<&mut Vec<f64>>,
    ws: &mut BridgeWorkspace,
) -> Result<BridgeDensity> {
    ws.ensure(1);
    ws.grid.prepare(horizon, steps);
    let delta = horizon / steps as f64;
    let mut b = [0.0];
    let mut sg = [0.0];
    let mut eval = |v: f64| -> Result<(f64, f64, f64, f64)> {
        model.drift(theta, &[v], &mut b);
        model.diffusion(theta, &[v], &mut sg);
        let s2 = sg[0] * sg[0];
        if !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::DiffusionDegeneracy { state: vec![v] });
        }
        let c = ito_correction(model, theta, &[v], &sg)?;
        Ok((b[0], sg[0], 1.0 / s2, c))
    };
    if let Some(out) = states_out.as_deref_mut() {
        out.clear();
        out.push(x);
    }
    let (mut bv, mut sig, mut inv, mut corr) = eval(x)?;
    let logdet_start = (sig * sig).ln();
    let gap = x_end - x;
    let maha = gap * (inv * gap) / horizon;
    let log_gauss = -0.5 * ((LN_2PI + horizon.ln()) + logdet_start + maha);

    let mut terms = PhiTerms::new();
    let mut logdet_end = logdet_start;
    let mut cur = x;
    for j in 0..steps {
        let [pull, scale, inv_remaining] = ws.grid.rows[j];
        let guided = j + 1 < steps;
        let next = if guided {
            cur + (x_end - cur) * pull + scale * sig * noise[j]
        } else {
            x_end
        };
        if let Some(out) = states_out.as_deref_mut() {
            out.push(next);
        }
        let dx = next - cur;
        let (b_next, sig_next, inv_next, corr_next) = eval(next)?;
        terms.strat += 0.5 * (bv * (inv * dx) + b_next * (inv_next * dx));
        terms.energy += 0.5 * (bv * (inv * bv) + b_next * (inv_next * b_next)) * delta;
        terms.correction += 0.5 * (corr + corr_next) * delta;
        if guided {
            let r = x_end - cur;
            let r_next = x_end - next;
            let dik = inv_next - inv;
            terms.dinv += r * dik * r * inv_remaining;
            terms.covariation += dik * (r_next * r_next - r * r) * inv_remaining;
        } else {
            logdet_end = (sig_next * sig_next).ln();
        }
        bv = b_next;
        sig = sig_next;
        inv = inv_next;
        corr = corr_next;
        cur = next;
    }

    let log_phi = terms.value();
    let log_density = log_phi + log_gauss + 0.5 * logdet_start - 0.5 * logdet_end;
    if !log_density.is_finite() {
        return Err(Error::NonFiniteValue(format!(
            "bridge density (log φ = {log_phi}, log N = {log_gauss})"
        )));
    }
    Ok(BridgeDensity { log_phi, log_density })
}

/// Guided Euler path `F_θ(Z; x, x′)` on the noise grid. The final state is
/// exactly `x′`.
pub fn bridge_forward_map(
    model: &dyn SdeModel,
    theta: &[f64],
    noise: &NoisePath,
    x: &[f64],
    x_end: &[f64],
) -> Result<PathSegment> {
    check_bridge_model(model, noise.steps)?;
    let mut states = Vec::with_capacity((noise.steps + 1) * x.len());
    let mut ws = BridgeWorkspace::new(x.len());
    fused(
        model,
        theta,
        x,
        x_end,
        noise.horizon,
        noise.steps,
        Some(&noise.increments),
        None,
        Some(&mut states),
        &mut ws,
    )?;
    Ok(PathSegment {
        times: uniform_grid(noise.horizon, noise.steps),
        states,
        dim: x.len(),
        jumps: None,
    })
}

/// Writes `F_θ(Z; x, x′)` into `states` without computing densities.
pub fn bridge_forward_into(
    model: &dyn SdeModel,
    theta: &[f64],
    noise: &NoisePath,
    x: &[f64],
    x_end: &[f64],
    states: &mut Vec<f64>,
    ws: &mut BridgeWorkspace,
) -> Result<()> {
    let d = x.len();
    ws.ensure(d);
    let steps = noise.steps;
    ws.grid.prepare(noise.horizon, steps);
    states.clear();
    states.extend_from_slice(x);
    for j in 0..steps {
        let base = j * d;
        if j + 1 == steps {
            states.extend_from_slice(x_end);
            break;
        }
        ws.x.copy_from_slice(&states[base..base + d]);
        model.diffusion(theta, &ws.x, &mut ws.sigma);
        let [pull, scale, _] = ws.grid.rows[j];
        let z = noise.step(j);
        for i in 0..d {
            let mut v = ws.x[i] + (x_end[i] - ws.x[i]) * pull;
            for k in 0..d {
                v += scale * ws.sigma[i * d + k] * z[k];
            }
            states.push(v);
        }
    }
    Ok(())
}

/// Recovers the driving noise from a path:
/// `Z_j = σ(X_j)⁻¹(ΔX_j − guide_j·δ)/√r_j` for the guided steps `0 … M−2`.
/// The pinned final step consumes no noise and its increment is returned
/// as zero.
pub fn bridge_inverse_map(
    model: &dyn SdeModel,
    theta: &[f64],
    path: &PathSegment,
    x_end: &[f64],
) -> Result<NoisePath> {
    let steps = path.steps();
    check_bridge_model(model, steps)?;
    let d = path.dim;
    let horizon = path.horizon();
    let mut ws = BridgeWorkspace::new(d);
    ws.grid.prepare(horizon, steps);
    let mut increments = Vec::with_capacity(steps * d);
    for j in 0..steps - 1 {
        let cur = path.state(j);
        let next = path.state(j + 1);
        let [pull, scale, _] = ws.grid.rows[j];
        model.diffusion(theta, cur, &mut ws.lu);
        for i in 0..d {
            ws.tmp[i] = (next[i] - cur[i] - (x_end[i] - cur[i]) * pull) / scale;
        }
        if !linalg::solve_square(&mut ws.lu, d, &mut ws.tmp) {
            return Err(Error::DiffusionDegeneracy { state: cur.to_vec() });
        }
        increments.extend_from_slice(&ws.tmp);
    }
    increments.extend(std::iter::repeat_n(0.0, d));
    Ok(NoisePath {
        steps,
        dim: d,
        horizon,
        increments,
    })
}

/// Discretised log φ_θ(X; x, x′) on a uniform-grid path.
pub fn log_phi(model: &dyn SdeModel, theta: &[f64], path: &PathSegment, x: &[f64], x_end: &[f64]) -> Result<f64> {
    let steps = path.steps();
    check_bridge_model(model, steps)?;
    let mut ws = BridgeWorkspace::new(path.dim);
    Ok(fused(
        model,
        theta,
        x,
        x_end,
        path.horizon(),
        steps,
        None,
        Some(&path.states),
        None,
        &mut ws,
    )?
    .log_phi)
}

/// `log p_θ(x′, Z | x; T)`, which is `log φ_θ(F_θ(Z)) + log N(x′; x, TΣ_θ(x))`
/// plus `½log|Σ_θ(x)| − ½log|Σ_θ(x′)|`, recomputing the path `F_θ(Z; x, x′)`
/// internally.
pub fn log_pathspace_density(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    x_end: &[f64],
    noise: &NoisePath,
) -> Result<f64> {
    check_bridge_model(model, noise.steps)?;
    let mut ws = BridgeWorkspace::new(x.len());
    log_pathspace_density_ws(model, theta, x, x_end, noise, None, &mut ws)
}

/// Workspace form of [`log_pathspace_density`]; optionally records the path.
pub fn log_pathspace_density_ws(
    model: &dyn SdeModel,
    theta: &[f64],
    x: &[f64],
    x_end: &[f64],
    noise: &NoisePath,
    states_out: Option<&mut Vec<f64>>,
    ws: &mut BridgeWorkspace,
) -> Result<f64> {
    Ok(fused(
        model,
        theta,
        x,
        x_end,
        noise.horizon,
        noise.steps,
        Some(&noise.increments),
        None,
        states_out,
        ws,
    )?
    .log_density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OrnsteinUhlenbeck, PeriodicDrift};
    use crate::rng::stream;

    /// Brownian motion with unit diffusion.
    fn brownian() -> OrnsteinUhlenbeck {
        OrnsteinUhlenbeck::new(0.1)
    }

    #[test]
    fn brownian_bridge_is_pinned_and_density_is_standard_normal() {
        let m = brownian();
        let theta = [0.0, 0.0, 1.0];
        let z = NoisePath::sample(20, 1, 1.0, &mut stream(1, 0, 0));
        let p = bridge_forward_map(&m, &theta, &z, &[0.0], &[0.0]).unwrap();
        assert_eq!(p.endpoint(), &[0.0]);
        let lp = log_pathspace_density(&m, &theta, &[0.0], &[0.0], &z).unwrap();
        assert!((lp + 0.5 * LN_2PI).abs() < 1e-14);
        assert_eq!(log_phi(&m, &theta, &p, &[0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn constant_path_inverts_to_zero_noise() {
        let m = brownian();
        let p = PathSegment::constant(&[0.7], 1.0, 8);
        let z = bridge_inverse_map(&m, &[0.0, 0.0, 1.3], &p, &[0.7]).unwrap();
        assert!(z.increments.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inverse_matches_direct_single_step_formula() {
        let m = OrnsteinUhlenbeck::new(0.1);
        let theta = [0.4, 0.2, 0.5];
        let z = NoisePath::sample(5, 1, 2.0, &mut stream(2, 0, 0));
        let p = bridge_forward_map(&m, &theta, &z, &[0.1], &[-0.3]).unwrap();
        let back = bridge_inverse_map(&m, &theta, &p, &[-0.3]).unwrap();
        let delta = 0.4;
        for j in 0..4 {
            let xj = p.state(j)[0];
            let dx = p.state(j + 1)[0] - xj;
            let remaining = 2.0 - j as f64 * delta;
            let guide = (-0.3 - xj) / remaining;
            let scale = ((remaining - delta) / remaining).sqrt();
            let direct = (dx - guide * delta) / (0.5 * scale);
            assert!((back.increments[j] - direct).abs() < 1e-14);
            assert!((back.increments[j] - z.increments[j]).abs() < 1e-12);
        }
        assert_eq!(back.increments[4], 0.0);
    }

    #[test]
    fn fused_density_matches_separate_path_evaluation() {
        let m = PeriodicDrift::new(0.1);
        let theta = [0.7, 0.9];
        let z = NoisePath::sample(30, 1, 1.0, &mut stream(3, 0, 0));
        let mut ws = BridgeWorkspace::new(1);
        let mut states = Vec::new();
        let lp = log_pathspace_density_ws(&m, &theta, &[0.2], &[0.5], &z, Some(&mut states), &mut ws).unwrap();
        let p = bridge_forward_map(&m, &theta, &z, &[0.2], &[0.5]).unwrap();
        assert_eq!(states, p.states);
        let phi = log_phi(&m, &theta, &p, &[0.2], &[0.5]).unwrap();
        let gauss = -0.5 * (LN_2PI + (0.81f64).ln() + 0.09 / 0.81);
        assert!((lp - (phi + gauss)).abs() < 1e-12);
        let mut again = Vec::new();
        bridge_forward_into(&m, &theta, &z, &[0.2], &[0.5], &mut again, &mut ws).unwrap();
        assert_eq!(again, p.states);
    }

    #[test]
    fn ou_log_phi_matches_closed_stratonovich_form() {
        let m = OrnsteinUhlenbeck::new(0.1);
        let theta = [0.8, 0.3, 0.6];
        let (x, x_end, horizon, steps) = (0.1, -0.4, 1.5, 25);
        let z = NoisePath::sample(steps, 1, horizon, &mut stream(4, 0, 0));
        let p = bridge_forward_map(&m, &theta, &z, &[x], &[x_end]).unwrap();
        let s2 = theta[2] * theta[2];
        let delta = horizon / steps as f64;
        let b = |v: f64| theta[0] * (theta[1] - v);
        let mut energy = 0.0;
        for j in 0..steps {
            let (u, v) = (p.state(j)[0], p.state(j + 1)[0]);
            energy += 0.5 * (b(u) * b(u) + b(v) * b(v)) * delta;
        }
        // the Stratonovich sum of a gradient field telescopes
        let strat = -0.5 * theta[0] * ((x_end - theta[1]).powi(2) - (x - theta[1]).powi(2));
        let expected = (strat - 0.5 * energy) / s2 + 0.5 * theta[0] * horizon;
        let got = log_phi(&m, &theta, &p, &[x], &[x_end]).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    /// Square-root diffusion without a closed-form correction, so the
    /// finite-difference fallback is exercised.
    #[derive(Debug)]
    struct NoClosedForm(crate::model::Heston);

    impl SdeModel for NoClosedForm {
        fn name(&self) -> &str {
            "no-closed-form"
        }
        fn dim_x(&self) -> usize {
            1
        }
        fn param_names(&self) -> &[&'static str] {
            self.0.param_names()
        }
        fn param_domain(&self) -> &[crate::model::ParamConstraint] {
            self.0.param_domain()
        }
        fn default_theta(&self) -> Vec<f64> {
            self.0.default_theta()
        }
        fn drift(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
            self.0.drift(theta, x, out)
        }
        fn diffusion(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
            self.0.diffusion(theta, x, out)
        }
        fn sample_initial(&self, theta: &[f64], rng: &mut dyn rand::RngCore) -> Vec<f64> {
            self.0.sample_initial(theta, rng)
        }
        fn obs_logdensity(&self, _: &[f64], _: &[f64], _: Option<&[f64]>, _: &crate::path::PathView<'_>) -> f64 {
            0.0
        }
        fn sample_obs(
            &self,
            _: &[f64],
            _: Option<&[f64]>,
            _: &crate::path::PathView<'_>,
            _: &mut dyn rand::RngCore,
        ) -> Vec<f64> {
            vec![0.0]
        }
    }

    #[test]
    fn finite_difference_correction_matches_closed_form() {
        let heston = crate::model::Heston;
        let theta = [1.5, 0.3, 0.4];
        for x in [0.05, 0.3, 1.7] {
            let mut sg = [0.0];
            heston.diffusion(&theta, &[x], &mut sg);
            let fd = ito_correction(&NoClosedForm(heston.clone()), &theta, &[x], &sg).unwrap();
            let exact = heston.ito_correction(&theta, &[x]).unwrap();
            assert!((fd - exact).abs() < 1e-6 * exact.abs().max(1.0), "{fd} vs {exact}");
        }
        let z = NoisePath::sample(40, 1, 1.0, &mut stream(5, 0, 0));
        let a = log_pathspace_density(&heston, &theta, &[0.3], &[0.35], &z).unwrap();
        let b = log_pathspace_density(&NoClosedForm(heston), &theta, &[0.3], &[0.35], &z).unwrap();
        assert!((a - b).abs() < 1e-7);
    }

    /// Two independent O–U coordinates with a constant diagonal diffusion.
    #[derive(Debug)]
    struct PairedOu;

    impl SdeModel for PairedOu {
        fn name(&self) -> &str {
            "paired-ou"
        }
        fn dim_x(&self) -> usize {
            2
        }
        fn param_names(&self) -> &[&'static str] {
            &["a", "b"]
        }
        fn param_domain(&self) -> &[crate::model::ParamConstraint] {
            &[crate::model::ParamConstraint::Positive, crate::model::ParamConstraint::Positive]
        }
        fn default_theta(&self) -> Vec<f64> {
            vec![0.5, 1.2]
        }
        fn drift(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
            out[0] = -theta[0] * x[0];
            out[1] = -theta[1] * x[1];
        }
        fn diffusion(&self, _: &[f64], _: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&[0.4, 0.0, 0.0, 0.7]);
        }
        fn sample_initial(&self, _: &[f64], _: &mut dyn rand::RngCore) -> Vec<f64> {
            vec![0.0, 0.0]
        }
        fn obs_logdensity(&self, _: &[f64], _: &[f64], _: Option<&[f64]>, _: &crate::path::PathView<'_>) -> f64 {
            0.0
        }
        fn sample_obs(
            &self,
            _: &[f64],
            _: Option<&[f64]>,
            _: &crate::path::PathView<'_>,
            _: &mut dyn rand::RngCore,
        ) -> Vec<f64> {
            vec![0.0, 0.0]
        }
    }

    #[test]
    fn diagonal_system_factorises_into_scalar_bridges() {
        let z = NoisePath::sample(16, 2, 1.0, &mut stream(6, 0, 0));
        let joint = log_pathspace_density(&PairedOu, &[0.5, 1.2], &[0.2, -0.1], &[0.4, 0.3], &z).unwrap();
        let ou = OrnsteinUhlenbeck::new(0.1);
        let mut total = 0.0;
        for (c, (a, s)) in [(0.5, 0.4), (1.2, 0.7)].into_iter().enumerate() {
            let zc = NoisePath {
                increments: z.increments.iter().skip(c).step_by(2).copied().collect(),
                dim: 1,
                ..z.clone()
            };
            let x = [[0.2], [-0.1]][c];
            let x_end = [[0.4], [0.3]][c];
            total += log_pathspace_density(&ou, &[a, 0.0, s], &x, &x_end, &zc).unwrap();
        }
        assert!((joint - total).abs() < 1e-10, "{joint} vs {total}");
    }

    #[test]
    fn short_grids_are_rejected() {
        let m = brownian();
        let z = NoisePath::zeros(1, 1, 1.0);
        assert!(matches!(
            log_pathspace_density(&m, &[0.0, 0.0, 1.0], &[0.0], &[0.0], &z),
            Err(Error::InvalidArgument(_))
        ));
    }
}
