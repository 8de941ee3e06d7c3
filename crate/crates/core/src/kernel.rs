//! Transition kernels the smoother runs on.
//!
//! A kernel samples the next latent variable from a previous one and
//! evaluates the joint log density `log p_θ(x_n, y_n | x_{n−1})` split into an
//! ancestor-dependent part ([`Kernel::pair_logdensity`]) and a remainder
//! ([`Kernel::own_logdensity`]). Only the first part enters the O(N²)
//! smoothing kernel; the second is evaluated once per particle.

use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::jump_augment::{head_logdensity, sample_transition, tail_logdensity, AugWorkspace, Construct, PathBuf};
use crate::bridge::AugmentedTransition;
use crate::linalg::{self, LN_2PI};
use crate::model::{gaussian_logpdf, SdeModel};
use crate::oracle::LinearGaussian;
use crate::path::PathView;
use crate::simulate::{euler_states, SimulationOptions};

/// The observation being assimilated and its predecessor.
#[derive(Debug, Clone, Copy)]
pub struct Obs<'a> {
    pub y: &'a [f64],
    pub y_prev: Option<&'a [f64]>,
}

pub trait Kernel: Send + Sync {
    type State: Clone + Send + Sync;
    type Workspace: Send;

    fn workspace(&self) -> Self::Workspace;
    fn dim_theta(&self) -> usize;

    /// Draws `x_0`.
    fn initial(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Self::State>;
    fn endpoint<'s>(&self, state: &'s Self::State) -> &'s [f64];
    /// Draws the next latent variable from the model dynamics.
    fn propagate(&self, theta: &[f64], prev: &Self::State, rng: &mut dyn RngCore) -> Result<Self::State>;

    /// `log g_θ(y_0 | x_0)`.
    fn initial_logdensity(&self, theta: &[f64], y0: &[f64], state: &Self::State) -> f64;
    /// Observation log density along the particle's own simulated path; this
    /// is the filter weight.
    fn obs_logdensity(&self, theta: &[f64], obs: Obs<'_>, state: &Self::State, ws: &mut Self::Workspace) -> f64;
    /// Ancestor-dependent part of `log p_θ(x_n, y_n | x_{n−1})`.
    fn pair_logdensity(
        &self,
        theta: &[f64],
        prev: &Self::State,
        new: &Self::State,
        obs: Obs<'_>,
        ws: &mut Self::Workspace,
    ) -> Result<f64>;
    /// The rest of `log p_θ(x_n, y_n | x_{n−1})`.
    fn own_logdensity(&self, theta: &[f64], new: &Self::State, obs: Obs<'_>, ws: &mut Self::Workspace) -> Result<f64>;
}

/// A pathspace particle: the augmented variable and its endpoint, plus the
/// forward path when the observation density reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathParticle {
    pub x: Vec<f64>,
    pub aug: Option<AugmentedTransition>,
    pub path: Option<PathBuf>,
}

pub struct PathspaceWorkspace {
    aug: AugWorkspace,
    path: PathBuf,
    point_times: [f64; 2],
}

/// Pathspace kernel: latent variables are augmented transitions `x′`
/// evaluated against the θ-free reference measure, so the smoother is
/// well-defined for any grid size.
#[derive(Debug, Clone)]
pub struct PathspaceKernel {
    pub model: Arc<dyn SdeModel>,
    /// Time between observations.
    pub delta: f64,
    /// Grid steps per interval.
    pub steps: usize,
    pub construct: Construct,
    pub sim: SimulationOptions,
}

impl PathspaceKernel {
    pub fn new(model: Arc<dyn SdeModel>, delta: f64, steps: usize, construct: Construct) -> Self {
        Self {
            model,
            delta,
            steps,
            construct,
            sim: SimulationOptions::default(),
        }
    }

    fn pair_obs(&self) -> bool {
        self.model.obs_uses_path()
    }

    fn view_of<'s>(&self, state: &'s PathParticle, times: &'s [f64; 2]) -> PathView<'s> {
        match &state.path {
            Some(p) => p.view(),
            None => PathView {
                times: &times[1..],
                states: &state.x,
                dim: state.x.len(),
            },
        }
    }
}

impl Kernel for PathspaceKernel {
    type State = PathParticle;
    type Workspace = PathspaceWorkspace;

    fn workspace(&self) -> PathspaceWorkspace {
        PathspaceWorkspace {
            aug: AugWorkspace::new(self.model.dim_x()),
            path: PathBuf::default(),
            point_times: [0.0, self.delta],
        }
    }

    fn dim_theta(&self) -> usize {
        self.model.dim_theta()
    }

    fn initial(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<PathParticle> {
        Ok(PathParticle {
            x: self.model.sample_initial(theta, rng),
            aug: None,
            path: None,
        })
    }

    fn endpoint<'s>(&self, state: &'s PathParticle) -> &'s [f64] {
        &state.x
    }

    fn propagate(&self, theta: &[f64], prev: &PathParticle, rng: &mut dyn RngCore) -> Result<PathParticle> {
        let sampled = sample_transition(
            self.model.as_ref(),
            theta,
            &prev.x,
            self.delta,
            self.steps,
            self.construct,
            &self.sim,
            rng,
        )?;
        let path = self.pair_obs().then(|| PathBuf {
            times: sampled.path.times,
            states: sampled.path.states,
            dim: sampled.path.dim,
        });
        Ok(PathParticle {
            x: sampled.aug.endpoint().to_vec(),
            aug: Some(sampled.aug),
            path,
        })
    }

    fn initial_logdensity(&self, theta: &[f64], y0: &[f64], state: &PathParticle) -> f64 {
        let times = [0.0];
        let view = PathView {
            times: &times,
            states: &state.x,
            dim: state.x.len(),
        };
        self.model.obs_logdensity(theta, y0, None, &view)
    }

    fn obs_logdensity(&self, theta: &[f64], obs: Obs<'_>, state: &PathParticle, ws: &mut PathspaceWorkspace) -> f64 {
        let view = self.view_of(state, &ws.point_times);
        self.model.obs_logdensity(theta, obs.y, obs.y_prev, &view)
    }

    fn pair_logdensity(
        &self,
        theta: &[f64],
        prev: &PathParticle,
        new: &PathParticle,
        obs: Obs<'_>,
        ws: &mut PathspaceWorkspace,
    ) -> Result<f64> {
        let aug = new.aug.as_ref().expect("propagated particle carries an augmented variable");
        let model = self.model.as_ref();
        if self.pair_obs() {
            // the observation reads the path, which depends on the ancestor
            let head = head_logdensity(model, theta, &prev.x, aug, self.delta, &mut ws.aug, Some(&mut ws.path))?;
            Ok(head + model.obs_logdensity(theta, obs.y, obs.y_prev, &ws.path.view()))
        } else {
            head_logdensity(model, theta, &prev.x, aug, self.delta, &mut ws.aug, None)
        }
    }

    fn own_logdensity(&self, theta: &[f64], new: &PathParticle, obs: Obs<'_>, ws: &mut PathspaceWorkspace) -> Result<f64> {
        let aug = new.aug.as_ref().expect("propagated particle carries an augmented variable");
        let tail = tail_logdensity(self.model.as_ref(), theta, aug, self.delta, &mut ws.aug)?;
        if self.pair_obs() {
            Ok(tail)
        } else {
            Ok(tail + self.obs_logdensity(theta, obs, new, ws))
        }
    }
}

/// The naive finite-dimensional augmentation: the latent variable is the
/// Euler skeleton `(X_1, …, X_M)` and its density is the product of Euler
/// Gaussian steps with respect to Lebesgue measure on `R^{M·d}`.
#[derive(Debug, Clone)]
pub struct EulerKernel {
    pub model: Arc<dyn SdeModel>,
    pub delta: f64,
    pub steps: usize,
}

/// Euler skeleton after the starting point, row-major `steps × d`.
pub type EulerSkeleton = Vec<f64>;

pub struct EulerWorkspace {
    b: Vec<f64>,
    sigma: Vec<f64>,
    cov: Vec<f64>,
    resid: Vec<f64>,
    solved: Vec<f64>,
    times: Vec<f64>,
    path: Vec<f64>,
}

impl EulerKernel {
    pub fn new(model: Arc<dyn SdeModel>, delta: f64, steps: usize) -> Result<Self> {
        if model.jump_law().is_some() {
            return Err(Error::InvalidArgument("the Euler skeleton kernel does not handle jumps".into()));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("grid size must be at least 1".into()));
        }
        Ok(Self { model, delta, steps })
    }

    fn step_logdensity(&self, theta: &[f64], from: &[f64], to: &[f64], ws: &mut EulerWorkspace) -> f64 {
        let (d, dw) = (self.model.dim_x(), self.model.dim_w());
        let h = self.delta / self.steps as f64;
        self.model.drift(theta, from, &mut ws.b);
        self.model.diffusion(theta, from, &mut ws.sigma);
        linalg::outer_self(&ws.sigma, d, dw, &mut ws.cov);
        if !linalg::cholesky_in_place(&mut ws.cov, d) {
            return f64::NEG_INFINITY;
        }
        for i in 0..d {
            ws.resid[i] = to[i] - from[i] - ws.b[i] * h;
        }
        let logdet = linalg::cholesky_logdet(&ws.cov, d);
        ws.solved.copy_from_slice(&ws.resid);
        linalg::cholesky_solve(&ws.cov, d, &mut ws.solved);
        let maha = linalg::dot(&ws.resid, &ws.solved);
        -0.5 * (d as f64 * (LN_2PI + h.ln()) + logdet + maha / h)
    }

    fn full_path(&self, prev: &[f64], new: &[f64], ws: &mut EulerWorkspace) {
        ws.path.clear();
        ws.path.extend_from_slice(prev);
        ws.path.extend_from_slice(new);
    }
}

impl Kernel for EulerKernel {
    type State = EulerSkeleton;
    type Workspace = EulerWorkspace;

    fn workspace(&self) -> EulerWorkspace {
        let (d, dw) = (self.model.dim_x(), self.model.dim_w());
        EulerWorkspace {
            b: vec![0.0; d],
            sigma: vec![0.0; d * dw],
            cov: vec![0.0; d * d],
            resid: vec![0.0; d],
            solved: vec![0.0; d],
            times: crate::path::uniform_grid(self.delta, self.steps),
            path: Vec::new(),
        }
    }

    fn dim_theta(&self) -> usize {
        self.model.dim_theta()
    }

    fn initial(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<EulerSkeleton> {
        Ok(self.model.sample_initial(theta, rng))
    }

    fn endpoint<'s>(&self, state: &'s EulerSkeleton) -> &'s [f64] {
        let d = self.model.dim_x();
        &state[state.len() - d..]
    }

    fn propagate(&self, theta: &[f64], prev: &EulerSkeleton, rng: &mut dyn RngCore) -> Result<EulerSkeleton> {
        let d = self.model.dim_x();
        let x = self.endpoint(prev);
        let mut states = euler_states(self.model.as_ref(), theta, x, self.delta, self.steps, None, false, rng)?;
        states.drain(..d);
        Ok(states)
    }

    fn initial_logdensity(&self, theta: &[f64], y0: &[f64], state: &EulerSkeleton) -> f64 {
        let times = [0.0];
        let view = PathView {
            times: &times,
            states: state,
            dim: state.len(),
        };
        self.model.obs_logdensity(theta, y0, None, &view)
    }

    fn obs_logdensity(&self, theta: &[f64], obs: Obs<'_>, state: &EulerSkeleton, ws: &mut EulerWorkspace) -> f64 {
        // the skeleton lacks its starting point; observation models that read
        // the path only see it through `pair_logdensity`
        let d = self.model.dim_x();
        let view = PathView {
            times: &ws.times[self.steps..],
            states: &state[state.len() - d..],
            dim: d,
        };
        self.model.obs_logdensity(theta, obs.y, obs.y_prev, &view)
    }

    fn pair_logdensity(
        &self,
        theta: &[f64],
        prev: &EulerSkeleton,
        new: &EulerSkeleton,
        obs: Obs<'_>,
        ws: &mut EulerWorkspace,
    ) -> Result<f64> {
        let d = self.model.dim_x();
        let x = self.endpoint(prev).to_vec();
        let mut lp = self.step_logdensity(theta, &x, &new[..d], ws);
        if self.model.obs_uses_path() {
            self.full_path(&x, new, ws);
            let view = PathView {
                times: &ws.times,
                states: &ws.path,
                dim: d,
            };
            lp += self.model.obs_logdensity(theta, obs.y, obs.y_prev, &view);
        }
        Ok(lp)
    }

    fn own_logdensity(&self, theta: &[f64], new: &EulerSkeleton, obs: Obs<'_>, ws: &mut EulerWorkspace) -> Result<f64> {
        let d = self.model.dim_x();
        let mut lp = 0.0;
        for j in 1..self.steps {
            lp += self.step_logdensity(theta, &new[(j - 1) * d..j * d], &new[j * d..(j + 1) * d], ws);
        }
        if !self.model.obs_uses_path() {
            lp += self.obs_logdensity(theta, obs, new, ws);
        }
        Ok(lp)
    }
}

/// Maps a parameter vector to a scalar linear-Gaussian model.
pub type LinearGaussianBuilder = Arc<dyn Fn(&[f64]) -> LinearGaussian + Send + Sync>;

/// Exact transition kernel of a scalar linear-Gaussian model; the discrete
/// baseline with a known transition density.
#[derive(Clone)]
pub struct LinearGaussianKernel {
    pub build: LinearGaussianBuilder,
    pub dim_theta: usize,
}

impl std::fmt::Debug for LinearGaussianKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearGaussianKernel").field("dim_theta", &self.dim_theta).finish()
    }
}

impl LinearGaussianKernel {
    pub fn new(build: LinearGaussianBuilder, dim_theta: usize) -> Self {
        Self { build, dim_theta }
    }

    /// A kernel ignoring θ.
    pub fn fixed(model: LinearGaussian) -> Self {
        Self::new(Arc::new(move |_: &[f64]| model), 0)
    }
}

impl Kernel for LinearGaussianKernel {
    type State = [f64; 1];
    type Workspace = ();

    fn workspace(&self) {}

    fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    fn initial(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<[f64; 1]> {
        let m = (self.build)(theta);
        let e: f64 = rand::Rng::sample(rng, rand_distr::StandardNormal);
        Ok([m.m0 + m.p0.sqrt() * e])
    }

    fn endpoint<'s>(&self, state: &'s [f64; 1]) -> &'s [f64] {
        state
    }

    fn propagate(&self, theta: &[f64], prev: &[f64; 1], rng: &mut dyn RngCore) -> Result<[f64; 1]> {
        let m = (self.build)(theta);
        let e: f64 = rand::Rng::sample(rng, rand_distr::StandardNormal);
        Ok([m.a * prev[0] + m.c + m.q.sqrt() * e])
    }

    fn initial_logdensity(&self, theta: &[f64], y0: &[f64], state: &[f64; 1]) -> f64 {
        gaussian_logpdf(y0[0], state[0], (self.build)(theta).r)
    }

    fn obs_logdensity(&self, theta: &[f64], obs: Obs<'_>, state: &[f64; 1], _ws: &mut ()) -> f64 {
        gaussian_logpdf(obs.y[0], state[0], (self.build)(theta).r)
    }

    fn pair_logdensity(&self, theta: &[f64], prev: &[f64; 1], new: &[f64; 1], _obs: Obs<'_>, _ws: &mut ()) -> Result<f64> {
        Ok((self.build)(theta).transition_logdensity(prev[0], new[0]))
    }

    fn own_logdensity(&self, theta: &[f64], new: &[f64; 1], obs: Obs<'_>, ws: &mut ()) -> Result<f64> {
        Ok(self.obs_logdensity(theta, obs, new, ws))
    }
}
