//! Recursive maximum likelihood: the score is smoothed online as an additive
//! functional (Fisher's identity) and its per-observation increment drives a
//! stochastic-approximation update of θ.

use log::warn;

use crate::error::{Error, Result};
use crate::functional::{FdScore, Functional, OuBridgeScore};
use crate::kernel::{Kernel, Obs, PathspaceKernel};
use crate::model::{canonicalize, ParamConstraint};
use crate::resample::ResampleConfig;
use crate::smoother::{FilterState, Smoother, SmootherConfig};

/// ADAM hyperparameters `(β₁, β₂, α, ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            alpha: 0.001,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub n: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            n: 0,
            config,
        }
    }

    /// One ADAM recursion on the minimisation direction `c`; returns the
    /// additive parameter step `−α m̂ / (√v̂ + ε)`.
    pub fn update(&mut self, c: &[f64]) -> Vec<f64> {
        let AdamConfig { beta1, beta2, alpha, eps } = self.config;
        self.n += 1;
        let n = self.n as i32;
        let bias1 = 1.0 - beta1.powi(n);
        let bias2 = 1.0 - beta2.powi(n);
        let mut step = Vec::with_capacity(c.len());
        for i in 0..c.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * c[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * c[i] * c[i];
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            step.push(-alpha * m_hat / (v_hat.sqrt() + eps));
        }
        step
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_update(state: &AdamState, c: &[f64]) -> (AdamState, Vec<f64>) {
    let mut next = state.clone();
    let step = next.update(c);
    (next, step)
}

/// Parameter update rule. ADAM and the plain Robbins–Monro schedule are
/// alternatives; they are never composed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Adam(AdamConfig),
    /// `θ ← θ + γ₀ n^{−κ} · score increment`.
    RobbinsMonro { gamma0: f64, exponent: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        Self::Adam(AdamConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradMode {
    Analytic,
    #[default]
    FiniteDifference,
}

impl std::str::FromStr for GradMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "analytic" => Ok(Self::Analytic),
            "fd" | "finite-difference" => Ok(Self::FiniteDifference),
            other => Err(format!("unknown gradient mode `{other}`")),
        }
    }
}

/// The score functional for a pathspace kernel: central differences over
/// every coordinate, or the closed-form O–U gradient.
pub fn score_functional(kernel: &PathspaceKernel, mode: GradMode) -> Result<Box<dyn Functional<PathspaceKernel>>> {
    let model = kernel.model.as_ref();
    match mode {
        GradMode::FiniteDifference => Ok(Box::new(FdScore::all(model.dim_theta()).with_domain(model.param_domain()))),
        GradMode::Analytic => {
            let ou = model.name() == "ou" || (model.name() == "ou-jump" && kernel.construct == crate::jump_augment::Construct::One);
            if !ou {
                return Err(Error::InvalidArgument(format!(
                    "no closed-form score for model {} with this augmentation; use finite differences",
                    model.name()
                )));
            }
            Ok(Box::new(OuBridgeScore))
        }
    }
}

/// `s_k(x_{k−1}, x_k) = ∇_θ[log p_θ(x_k | x_{k−1}) + log g_θ(y_k | y_{k−1}, F_k)]`
/// for one transition, with the auxiliary noise held fixed.
pub fn score_increment<K: Kernel, F: Functional<K> + ?Sized>(
    kernel: &K,
    functional: &F,
    theta: &[f64],
    prev: &K::State,
    new: &K::State,
    obs: Obs<'_>,
) -> Result<Vec<f64>> {
    let mut ws = kernel.workspace();
    let mut own = vec![0.0; functional.dim()];
    let mut pair = vec![0.0; functional.dim()];
    functional.own(kernel, theta, new, obs, &mut ws, &mut own)?;
    functional.pair(kernel, theta, prev, new, obs, &mut ws, &mut pair)?;
    Ok(own.iter().zip(&pair).map(|(a, b)| a + b).collect())
}

/// Iterates above this magnitude abort the run.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub particles: usize,
    pub seed: u64,
    pub resample: ResampleConfig,
    pub rule: StepRule,
}

impl FitConfig {
    pub fn new(particles: usize, seed: u64) -> Self {
        Self {
            particles,
            seed,
            resample: ResampleConfig::default(),
            rule: StepRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// `θ̂_0, θ̂_1, …`: `θ̂_0` is the starting value and `θ̂_k` the estimate
    /// after assimilating `y_k`, so there is one entry per observation.
    pub trajectory: Vec<Vec<f64>>,
    /// Per-observation log-likelihood increments, starting with `y_0`.
    pub loglik_increments: Vec<f64>,
    pub loglik: f64,
}

impl FitResult {
    pub fn final_theta(&self) -> &[f64] {
        self.trajectory.last().expect("trajectory holds at least θ̂_0")
    }
}

/// Adds `step` to `theta` coordinate-wise. Periodic coordinates are
/// wrapped; a positive coordinate that would cross zero moves to half its
/// current value instead.
fn apply_step(domain: &[ParamConstraint], theta: &[f64], step: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(step)
        .zip(domain)
        .map(|((&v, &d), c)| match c {
            ParamConstraint::Positive if v + d <= 0.0 => 0.5 * v,
            other => other.canonical(v + d),
        })
        .collect()
}

/// Online gradient ascent on the log-likelihood driven by the forward-only
/// score smoother. The score proxy at step `n` is `Ŝ_n − Ŝ_{n−1}`; the
/// update acts on θ directly, see [`apply_step`] for the domain handling.
pub fn online_gradient_ascent<F: Functional<PathspaceKernel> + ?Sized>(
    kernel: &PathspaceKernel,
    functional: &F,
    ys: &[Vec<f64>],
    theta0: &[f64],
    config: &FitConfig,
) -> Result<FitResult> {
    let model = kernel.model.as_ref();
    model.check_admissible(theta0)?;
    let domain = model.param_domain().to_vec();
    let p = theta0.len();
    if functional.dim() != p {
        return Err(Error::DimensionMismatch {
            what: "score functional",
            expected: p,
            got: functional.dim(),
        });
    }
    let smoother = Smoother::new(
        kernel,
        functional,
        SmootherConfig {
            particles: config.particles,
            resample: config.resample,
            prune: crate::smoother::DEFAULT_PRUNE,
            seed: config.seed,
        },
    );
    let mut theta = theta0.to_vec();
    canonicalize(model, &mut theta);
    let mut trajectory = vec![theta.clone()];
    let Some(first) = ys.first() else {
        return Ok(FitResult {
            trajectory,
            loglik_increments: Vec::new(),
            loglik: 0.0,
        });
    };
    let mut state: FilterState<_> = smoother.init(&theta, first)?;
    let mut increments = vec![state.loglik_increment];
    let mut previous = state.estimate.clone();
    let mut adam = match config.rule {
        StepRule::Adam(cfg) => Some(AdamState::new(p, cfg)),
        StepRule::RobbinsMonro { .. } => None,
    };

    for (k, y) in ys.iter().enumerate().skip(1) {
        smoother.step(&mut state, &theta, y)?;
        increments.push(state.loglik_increment);
        let grad: Vec<f64> = state.estimate.iter().zip(&previous).map(|(a, b)| a - b).collect();
        previous.clone_from(&state.estimate);
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { coordinate: i });
        }

        let step = match (&mut adam, config.rule) {
            (Some(adam), _) => adam.update(&grad.iter().map(|g| -g).collect::<Vec<_>>()),
            (None, StepRule::RobbinsMonro { gamma0, exponent }) => {
                let gamma = gamma0 * (k as f64).powf(-exponent);
                grad.iter().map(|g| gamma * g).collect()
            }
            (None, StepRule::Adam(_)) => unreachable!(),
        };
        theta = apply_step(&domain, &theta, &step);
        if let Some((i, &v)) = theta.iter().enumerate().find(|(_, v)| !(v.abs() <= DIVERGENCE_BOUND)) {
            return Err(Error::Divergence {
                step: k,
                coordinate: i,
                value: v,
            });
        }
        if model.project_admissible(&mut theta) {
            warn!("step {k}: θ̂ left the admissible region of {}; projected to {theta:?}", model.name());
        }
        trajectory.push(theta.clone());
    }
    Ok(FitResult {
        trajectory,
        loglik: increments.iter().sum(),
        loglik_increments: increments,
    })
}
