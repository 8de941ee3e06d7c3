//! Unconditional Euler–Maruyama simulation with compound-Poisson jumps.

use rand::{Rng, RngCore};
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{check_covariance, JumpLaw, SdeModel};
use crate::path::{uniform_grid, JumpSet, PathSegment, PathView};

pub const DEFAULT_JUMP_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Maximum number of jump events per interval.
    pub jump_cap: usize,
    /// Verify that Σ is positive definite at every grid point.
    pub check_covariance: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            jump_cap: DEFAULT_JUMP_CAP,
            check_covariance: true,
        }
    }
}

/// Draws the compound-Poisson record on `(0, horizon)`.
///
/// Constant rates use exponential gaps directly; time-varying rates are
/// thinned against `intensity_bound`.
pub fn simulate_jumps(
    law: &dyn JumpLaw,
    theta: &[f64],
    dim: usize,
    horizon: f64,
    cap: usize,
    rng: &mut dyn RngCore,
) -> Result<JumpSet> {
    let mut jumps = JumpSet::empty(dim);
    let bound = law.intensity_bound(theta, horizon);
    if !(bound > 0.0) {
        return Ok(jumps);
    }
    let mut size = vec![0.0; dim];
    let mut t = 0.0;
    loop {
        let gap: f64 = rng.sample(Exp1);
        t += gap / bound;
        if t >= horizon {
            break;
        }
        if !law.is_constant_rate() {
            let u: f64 = rng.random();
            if u * bound > law.intensity(theta, t) {
                continue;
            }
        }
        if jumps.count() == cap {
            return Err(Error::JumpOverflow { count: cap + 1, cap });
        }
        law.sample_size(theta, rng, &mut size);
        jumps.push(t, &size);
    }
    Ok(jumps)
}

/// Euler–Maruyama path on a uniform grid of `steps` steps. Coefficients are
/// evaluated at the left endpoint, and each jump is added at the first grid
/// point at or after its event time. The jump record is embedded in the
/// result for jump models.
pub fn simulate_path(
    model: &dyn SdeModel,
    theta: &[f64],
    x0: &[f64],
    horizon: f64,
    steps: usize,
    opts: &SimulationOptions,
    rng: &mut dyn RngCore,
) -> Result<PathSegment> {
    if steps == 0 {
        return Err(Error::InvalidArgument("grid size must be at least 1".into()));
    }
    let dx = model.dim_x();
    if x0.len() != dx {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: dx,
            got: x0.len(),
        });
    }
    let jumps = match model.jump_law() {
        Some(law) => Some(simulate_jumps(law, theta, dx, horizon, opts.jump_cap, rng)?),
        None => None,
    };
    let per_step = jumps.as_ref().map(|j| j.per_step(horizon, steps));
    let states = euler_states(model, theta, x0, horizon, steps, per_step.as_deref(), opts.check_covariance, rng)?;
    Ok(PathSegment {
        times: uniform_grid(horizon, steps),
        states,
        dim: dx,
        jumps,
    })
}

/// Euler states on a uniform grid, optionally adding per-step jump totals
/// (row-major `steps × dim_x`) at the end of each step.
pub fn euler_states(
    model: &dyn SdeModel,
    theta: &[f64],
    x0: &[f64],
    horizon: f64,
    steps: usize,
    per_step_jumps: Option<&[f64]>,
    check: bool,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let (dx, dw) = (model.dim_x(), model.dim_w());
    let delta = horizon / steps as f64;
    let sd = delta.sqrt();
    let mut states = Vec::with_capacity((steps + 1) * dx);
    states.extend_from_slice(x0);
    let mut b = vec![0.0; dx];
    let mut sigma = vec![0.0; dx * dw];
    let mut dwv = vec![0.0; dw];
    for j in 0..steps {
        let cur = &states[j * dx..(j + 1) * dx];
        if check {
            check_covariance(model, theta, cur)?;
        }
        model.drift(theta, cur, &mut b);
        model.diffusion(theta, cur, &mut sigma);
        for w in dwv.iter_mut() {
            *w = sd * rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..dx {
            let mut next = states[j * dx + i] + b[i] * delta;
            for (w, dw_k) in dwv.iter().enumerate() {
                next += sigma[i * dw + w] * dw_k;
            }
            if let Some(ps) = per_step_jumps {
                next += ps[j * dx + i];
            }
            states.push(next);
        }
    }
    if check {
        check_covariance(model, theta, &states[steps * dx..])?;
    }
    if states.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("simulated path left the finite range".into()));
    }
    Ok(states)
}

/// A simulated observation record: `y_0 … y_n` at times `0, Δ, …, nΔ`
/// together with the latent states at those times.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
    pub xs: Vec<Vec<f64>>,
}

/// Simulates `n` intervals of length `delta`, each on a grid of `steps`
/// Euler steps, and draws an observation at the end of every interval.
pub fn simulate_dataset(
    model: &dyn SdeModel,
    theta: &[f64],
    n: usize,
    delta: f64,
    steps: usize,
    opts: &SimulationOptions,
    rng: &mut dyn RngCore,
) -> Result<Dataset> {
    let x0 = model.sample_initial(theta, rng);
    let y0 = match model.initial_observation(theta, &x0) {
        Some(y) => y,
        None => {
            let t = [0.0];
            let view = PathView {
                times: &t,
                states: &x0,
                dim: x0.len(),
            };
            model.sample_obs(theta, None, &view, rng)
        }
    };
    let mut data = Dataset {
        times: vec![0.0],
        ys: vec![y0],
        xs: vec![x0],
    };
    for k in 1..=n {
        let path = simulate_path(model, theta, &data.xs[k - 1], delta, steps, opts, rng)?;
        let y = model.sample_obs(theta, Some(&data.ys[k - 1]), &path.view(), rng);
        data.xs.push(path.endpoint().to_vec());
        data.ys.push(y);
        data.times.push(k as f64 * delta);
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OrnsteinUhlenbeck, UniformJumps};
    use crate::rng::stream;

    #[test]
    fn zero_dynamics_give_constant_path() {
        let m = OrnsteinUhlenbeck::new(0.1);
        let opts = SimulationOptions {
            check_covariance: false,
            ..Default::default()
        };
        let mut rng = stream(1, 0, 0);
        let p = simulate_path(&m, &[0.0, 0.0, 0.0], &[1.25], 2.0, 17, &opts, &mut rng).unwrap();
        assert!(p.states.iter().all(|&v| v == 1.25));
        assert_eq!(p.points(), 18);
    }

    #[test]
    fn degenerate_diffusion_is_rejected() {
        let m = OrnsteinUhlenbeck::new(0.1);
        let mut rng = stream(1, 0, 0);
        let err = simulate_path(&m, &[0.5, 0.0, 0.0], &[0.0], 1.0, 4, &SimulationOptions::default(), &mut rng);
        assert!(matches!(err, Err(Error::DiffusionDegeneracy { .. })));
    }

    #[test]
    fn jump_overflow_is_reported() {
        let law = UniformJumps {
            rate: 1000.0,
            half_width: 0.5,
        };
        let mut rng = stream(3, 0, 0);
        let err = simulate_jumps(&law, &[], 1, 1.0, 10, &mut rng);
        assert!(matches!(err, Err(Error::JumpOverflow { cap: 10, .. })));
    }

    #[test]
    fn zero_rate_gives_no_jumps() {
        let law = UniformJumps {
            rate: 0.0,
            half_width: 0.5,
        };
        let mut rng = stream(3, 0, 0);
        assert!(simulate_jumps(&law, &[], 1, 1.0, 10, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_path() {
        let m = OrnsteinUhlenbeck::with_jumps(0.1, 2.0, 0.5);
        let theta = [0.5, 0.0, 0.4];
        let a = simulate_path(&m, &theta, &[0.0], 1.0, 50, &Default::default(), &mut stream(9, 1, 1)).unwrap();
        let b = simulate_path(&m, &theta, &[0.0], 1.0, 50, &Default::default(), &mut stream(9, 1, 1)).unwrap();
        assert_eq!(a, b);
        assert!(a.jumps.as_ref().unwrap().is_valid(1.0));
    }

    #[test]
    fn dataset_has_one_observation_per_interval_plus_initial() {
        let m = OrnsteinUhlenbeck::new(0.1);
        let d = simulate_dataset(&m, &[0.5, 0.0, 0.4], 5, 1.0, 20, &Default::default(), &mut stream(1, 0, 0)).unwrap();
        assert_eq!(d.ys.len(), 6);
        assert_eq!(d.xs[0], vec![0.0]);
        assert_eq!(d.times[5], 5.0);
        let empty = simulate_dataset(&m, &[0.5, 0.0, 0.4], 0, 1.0, 20, &Default::default(), &mut stream(1, 0, 0)).unwrap();
        assert_eq!(empty.ys.len(), 1);
    }
}
