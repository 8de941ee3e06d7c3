//! SDE/HMM model abstraction and the built-in model catalog.
//!
//! A model supplies the drift `b_θ(v)`, the diffusion coefficient `σ_θ(v)`,
//! an optional compound-Poisson jump law and the observation density
//! `g_θ(y | y_prev, path)`. All evaluators are pure functions of their
//! arguments so a model can be shared read-only across workers.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, LN_2PI};
use crate::path::PathView;

/// Lower bound applied to the state inside square-root (CIR-type) diffusion
/// coefficients and `1/x` drift terms.
pub const STATE_FLOOR: f64 = 1e-8;

/// Per-coordinate parameter constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamConstraint {
    Unconstrained,
    Positive,
    /// Wrapped into `[lower, upper)`.
    Periodic { lower: f64, upper: f64 },
}

impl ParamConstraint {
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            ParamConstraint::Unconstrained => v.is_finite(),
            ParamConstraint::Positive => v.is_finite() && v > 0.0,
            ParamConstraint::Periodic { .. } => v.is_finite(),
        }
    }

    /// Canonical representative (wraps periodic coordinates).
    pub fn canonical(&self, v: f64) -> f64 {
        match *self {
            ParamConstraint::Periodic { lower, upper } => {
                let width = upper - lower;
                let w = lower + (v - lower).rem_euclid(width);
                if w >= upper {
                    lower
                } else {
                    w
                }
            }
            _ => v,
        }
    }
}

/// Compound-Poisson jump law: intensity `λ_θ(t)` and jump-size density `h_θ`.
pub trait JumpLaw: Send + Sync + Debug {
    fn intensity(&self, theta: &[f64], t: f64) -> f64;
    /// `∫_{t0}^{t1} λ_θ(t) dt`.
    fn integrated_intensity(&self, theta: &[f64], t0: f64, t1: f64) -> f64;
    /// Upper bound of `λ_θ` on `[0, horizon]`, used for thinning.
    fn intensity_bound(&self, theta: &[f64], horizon: f64) -> f64;
    fn is_constant_rate(&self) -> bool {
        false
    }
    fn size_logdensity(&self, theta: &[f64], size: &[f64]) -> f64;
    fn sample_size(&self, theta: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);
}

/// A (jump) diffusion observed with noise at discrete times.
pub trait SdeModel: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn dim_x(&self) -> usize;
    fn dim_w(&self) -> usize {
        self.dim_x()
    }
    /// Observation dimension.
    fn dim_y(&self) -> usize {
        1
    }
    fn param_names(&self) -> &[&'static str];
    fn param_domain(&self) -> &[ParamConstraint];
    fn dim_theta(&self) -> usize {
        self.param_domain().len()
    }
    /// Parameter value used to generate data when none is given.
    fn default_theta(&self) -> Vec<f64>;

    /// `b_θ(x)`, length `dim_x`.
    fn drift(&self, theta: &[f64], x: &[f64], out: &mut [f64]);
    /// `σ_θ(x)`, row-major `dim_x × dim_w`.
    fn diffusion(&self, theta: &[f64], x: &[f64], out: &mut [f64]);

    /// `tr(∇(Σ⁻¹b)·Σ)` at `x`, the integrand of the Itô–Stratonovich
    /// correction for `∫⟨Σ⁻¹b, dX⟩`. `None` means "not available in closed
    /// form"; callers then use central differences.
    fn ito_correction(&self, _theta: &[f64], _x: &[f64]) -> Option<f64> {
        None
    }

    fn jump_law(&self) -> Option<&dyn JumpLaw> {
        None
    }

    /// Draws `x_0` from the (θ-free) initial law.
    fn sample_initial(&self, theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// `log g_θ(y | y_prev, F)`; `y_prev` is `None` for the first observation.
    fn obs_logdensity(&self, theta: &[f64], y: &[f64], y_prev: Option<&[f64]>, path: &PathView<'_>) -> f64;

    fn sample_obs(&self, theta: &[f64], y_prev: Option<&[f64]>, path: &PathView<'_>, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Whether `obs_logdensity` reads more than the path endpoint.
    fn obs_uses_path(&self) -> bool {
        false
    }

    /// Deterministic initial observation `y_0`, for models whose likelihood
    /// conditions on the previous observation.
    fn initial_observation(&self, _theta: &[f64], _x0: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Checks `θ` against the parameter domain and any model-specific
    /// admissibility condition.
    fn check_admissible(&self, theta: &[f64]) -> Result<()> {
        check_domain(self.name(), self.param_domain(), theta)
    }

    /// Moves an inadmissible `θ` onto the feasible boundary. Returns `true` if
    /// `θ` was changed.
    fn project_admissible(&self, _theta: &mut [f64]) -> bool {
        false
    }
}

pub fn check_domain(name: &str, domain: &[ParamConstraint], theta: &[f64]) -> Result<()> {
    if theta.len() != domain.len() {
        return Err(Error::DimensionMismatch {
            what: "parameter vector",
            expected: domain.len(),
            got: theta.len(),
        });
    }
    for (i, (c, &v)) in domain.iter().zip(theta).enumerate() {
        if !c.contains(v) {
            return Err(Error::InadmissibleParameter {
                model: name.to_string(),
                theta: theta.to_vec(),
                reason: format!("coordinate {i} violates {c:?}"),
            });
        }
    }
    Ok(())
}

/// Wraps periodic coordinates into their canonical range.
pub fn canonicalize(model: &dyn SdeModel, theta: &mut [f64]) {
    for (v, c) in theta.iter_mut().zip(model.param_domain()) {
        *v = c.canonical(*v);
    }
}

/// Factorises Σ_θ(x) = σσᵀ, failing when it is not symmetric positive
/// definite. Returns log |Σ|.
pub fn check_covariance(model: &dyn SdeModel, theta: &[f64], x: &[f64]) -> Result<f64> {
    let (dx, dw) = (model.dim_x(), model.dim_w());
    let mut sigma = vec![0.0; dx * dw];
    let mut cov = vec![0.0; dx * dx];
    model.diffusion(theta, x, &mut sigma);
    linalg::outer_self(&sigma, dx, dw, &mut cov);
    if !linalg::cholesky_in_place(&mut cov, dx) {
        return Err(Error::DiffusionDegeneracy { state: x.to_vec() });
    }
    Ok(linalg::cholesky_logdet(&cov, dx))
}

pub fn gaussian_logpdf(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (y - mean) * (y - mean) / var)
}

/// Uniform jump sizes on `(-half_width, half_width)` arriving at a constant
/// rate. Neither quantity is part of θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformJumps {
    pub rate: f64,
    pub half_width: f64,
}

impl JumpLaw for UniformJumps {
    fn intensity(&self, _theta: &[f64], _t: f64) -> f64 {
        self.rate
    }

    fn integrated_intensity(&self, _theta: &[f64], t0: f64, t1: f64) -> f64 {
        self.rate * (t1 - t0)
    }

    fn intensity_bound(&self, _theta: &[f64], _horizon: f64) -> f64 {
        self.rate
    }

    fn is_constant_rate(&self) -> bool {
        true
    }

    fn size_logdensity(&self, _theta: &[f64], size: &[f64]) -> f64 {
        if size[0].abs() < self.half_width {
            -(2.0 * self.half_width).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn sample_size(&self, _theta: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        out[0] = self.half_width * (2.0 * rng.random::<f64>() - 1.0);
    }
}

/// `dX = θ₁(θ₂ − X)dt + θ₃dW + dJ`, `y = x + ε`, `ε ~ N(0, obs_sd²)`.
#[derive(Debug, Clone)]
pub struct OrnsteinUhlenbeck {
    pub obs_sd: f64,
    pub x0: f64,
    pub jumps: Option<UniformJumps>,
}

impl OrnsteinUhlenbeck {
    pub const NAME: &'static str = "ou";

    pub fn new(obs_sd: f64) -> Self {
        Self {
            obs_sd,
            x0: 0.0,
            jumps: None,
        }
    }

    pub fn with_jumps(obs_sd: f64, rate: f64, half_width: f64) -> Self {
        Self {
            obs_sd,
            x0: 0.0,
            jumps: Some(UniformJumps { rate, half_width }),
        }
    }
}

const OU_DOMAIN: [ParamConstraint; 3] = [
    ParamConstraint::Positive,
    ParamConstraint::Unconstrained,
    ParamConstraint::Positive,
];

impl SdeModel for OrnsteinUhlenbeck {
    fn name(&self) -> &str {
        if self.jumps.is_some() {
            "ou-jump"
        } else {
            Self::NAME
        }
    }

    fn dim_x(&self) -> usize {
        1
    }

    fn param_names(&self) -> &[&'static str] {
        &["theta1", "theta2", "theta3"]
    }

    fn param_domain(&self) -> &[ParamConstraint] {
        &OU_DOMAIN
    }

    fn default_theta(&self) -> Vec<f64> {
        vec![0.5, 0.0, 0.4]
    }

    #[inline]
    fn drift(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        out[0] = theta[0] * (theta[1] - x[0]);
    }

    #[inline]
    fn diffusion(&self, theta: &[f64], _x: &[f64], out: &mut [f64]) {
        out[0] = theta[2];
    }

    fn ito_correction(&self, theta: &[f64], _x: &[f64]) -> Option<f64> {
        Some(-theta[0])
    }

    fn jump_law(&self) -> Option<&dyn JumpLaw> {
        self.jumps.as_ref().map(|j| j as &dyn JumpLaw)
    }

    fn sample_initial(&self, _theta: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![self.x0]
    }

    fn obs_logdensity(&self, _theta: &[f64], y: &[f64], _y_prev: Option<&[f64]>, path: &PathView<'_>) -> f64 {
        gaussian_logpdf(y[0], path.endpoint()[0], self.obs_sd * self.obs_sd)
    }

    fn sample_obs(&self, _theta: &[f64], _y_prev: Option<&[f64]>, path: &PathView<'_>, rng: &mut dyn RngCore) -> Vec<f64> {
        let e: f64 = rng.sample(StandardNormal);
        vec![path.endpoint()[0] + self.obs_sd * e]
    }
}

/// `dX = sin(X − θ₁)dt + θ₂dW`, `θ₁ ∈ [0, 2π)`, `y = x + ε`.
#[derive(Debug, Clone)]
pub struct PeriodicDrift {
    pub obs_sd: f64,
    pub x0: f64,
}

impl PeriodicDrift {
    pub const NAME: &'static str = "periodic";

    pub fn new(obs_sd: f64) -> Self {
        Self { obs_sd, x0: 0.0 }
    }
}

const PERIODIC_DOMAIN: [ParamConstraint; 2] = [
    ParamConstraint::Periodic {
        lower: 0.0,
        upper: 2.0 * PI,
    },
    ParamConstraint::Positive,
];

impl SdeModel for PeriodicDrift {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn dim_x(&self) -> usize {
        1
    }

    fn param_names(&self) -> &[&'static str] {
        &["theta1", "theta2"]
    }

    fn param_domain(&self) -> &[ParamConstraint] {
        &PERIODIC_DOMAIN
    }

    fn default_theta(&self) -> Vec<f64> {
        vec![PI / 4.0, 0.9]
    }

    #[inline]
    fn drift(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        out[0] = (x[0] - theta[0]).sin();
    }

    #[inline]
    fn diffusion(&self, theta: &[f64], _x: &[f64], out: &mut [f64]) {
        out[0] = theta[1];
    }

    fn ito_correction(&self, theta: &[f64], x: &[f64]) -> Option<f64> {
        Some((x[0] - theta[0]).cos())
    }

    fn sample_initial(&self, _theta: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![self.x0]
    }

    fn obs_logdensity(&self, _theta: &[f64], y: &[f64], _y_prev: Option<&[f64]>, path: &PathView<'_>) -> f64 {
        gaussian_logpdf(y[0], path.endpoint()[0], self.obs_sd * self.obs_sd)
    }

    fn sample_obs(&self, _theta: &[f64], _y_prev: Option<&[f64]>, path: &PathView<'_>, rng: &mut dyn RngCore) -> Vec<f64> {
        let e: f64 = rng.sample(StandardNormal);
        vec![path.endpoint()[0] + self.obs_sd * e]
    }
}

/// Heston stochastic volatility. The latent state is the CIR variance
/// `dX = θ₁(θ₂ − X)dt + θ₃√X dW`, `X₀ = θ₂`; the observed log-price
/// increments are conditionally Gaussian given the variance path:
/// `y_i | y_{i−1}, X ~ N(y_{i−1} + ∫(θ₄ − X/2)ds, ∫X ds)`.
#[derive(Debug, Clone, Default)]
pub struct Heston;

impl Heston {
    pub const NAME: &'static str = "heston";
}

const HESTON_DOMAIN: [ParamConstraint; 4] = [ParamConstraint::Positive; 4];

impl SdeModel for Heston {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn dim_x(&self) -> usize {
        1
    }

    fn param_names(&self) -> &[&'static str] {
        &["theta1", "theta2", "theta3", "theta4"]
    }

    fn param_domain(&self) -> &[ParamConstraint] {
        &HESTON_DOMAIN
    }

    fn default_theta(&self) -> Vec<f64> {
        vec![0.1, 1.0, 0.2, 0.45]
    }

    #[inline]
    fn drift(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        out[0] = theta[0] * (theta[1] - x[0]);
    }

    #[inline]
    fn diffusion(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        // full truncation
        out[0] = theta[2] * x[0].max(STATE_FLOOR).sqrt();
    }

    fn ito_correction(&self, theta: &[f64], x: &[f64]) -> Option<f64> {
        // Σ is frozen below the floor, leaving only b′
        Some(if x[0] > STATE_FLOOR {
            -theta[0] * theta[1] / x[0]
        } else {
            -theta[0]
        })
    }

    fn sample_initial(&self, theta: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![theta[1]]
    }

    fn obs_logdensity(&self, theta: &[f64], y: &[f64], y_prev: Option<&[f64]>, path: &PathView<'_>) -> f64 {
        let Some(prev) = y_prev else {
            // y_0 is the known initial log-price
            return 0.0;
        };
        let (mean, var) = heston_moments(theta, prev[0], path);
        gaussian_logpdf(y[0], mean, var)
    }

    fn sample_obs(&self, theta: &[f64], y_prev: Option<&[f64]>, path: &PathView<'_>, rng: &mut dyn RngCore) -> Vec<f64> {
        let prev = y_prev.map_or(0.0, |p| p[0]);
        let (mean, var) = heston_moments(theta, prev, path);
        let e: f64 = rng.sample(StandardNormal);
        vec![mean + var.sqrt() * e]
    }

    fn obs_uses_path(&self) -> bool {
        true
    }

    fn initial_observation(&self, _theta: &[f64], _x0: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0])
    }

    fn check_admissible(&self, theta: &[f64]) -> Result<()> {
        check_domain(self.name(), self.param_domain(), theta)?;
        if 2.0 * theta[0] * theta[1] <= theta[2] * theta[2] {
            return Err(Error::InadmissibleParameter {
                model: self.name().to_string(),
                theta: theta.to_vec(),
                reason: "Feller condition 2·θ₁·θ₂ > θ₃² violated".to_string(),
            });
        }
        Ok(())
    }

    fn project_admissible(&self, theta: &mut [f64]) -> bool {
        let bound = 2.0 * theta[0] * theta[1];
        if bound > 0.0 && theta[2] * theta[2] >= bound {
            theta[2] = bound.sqrt() * (1.0 - 1e-6);
            true
        } else {
            false
        }
    }
}

fn heston_moments(theta: &[f64], y_prev: f64, path: &PathView<'_>) -> (f64, f64) {
    let drift = path.integrate(|x| theta[3] - 0.5 * x[0].max(0.0));
    let var = path.integrate(|x| x[0].max(STATE_FLOOR));
    (y_prev + drift, var)
}

/// Nested short-rate drift family with diffusion `θ₄√X`:
/// M1 `θ₀ + θ₁X`, M2 adds `θ₂²X²`, M3 adds `θ₃/X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateDrift {
    M1,
    M2,
    M3,
}

#[derive(Debug, Clone)]
pub struct ShortRate {
    pub drift: RateDrift,
    pub obs_sd: f64,
    pub x0: f64,
}

const M1_DOMAIN: [ParamConstraint; 3] = [
    ParamConstraint::Unconstrained,
    ParamConstraint::Unconstrained,
    ParamConstraint::Positive,
];
const M2_DOMAIN: [ParamConstraint; 4] = [
    ParamConstraint::Unconstrained,
    ParamConstraint::Unconstrained,
    ParamConstraint::Unconstrained,
    ParamConstraint::Positive,
];
const M3_DOMAIN: [ParamConstraint; 5] = [
    ParamConstraint::Unconstrained,
    ParamConstraint::Unconstrained,
    ParamConstraint::Unconstrained,
    ParamConstraint::Unconstrained,
    ParamConstraint::Positive,
];

impl ShortRate {
    pub fn new(drift: RateDrift, obs_sd: f64, x0: f64) -> Self {
        Self { drift, obs_sd, x0 }
    }

    fn vol(&self, theta: &[f64]) -> f64 {
        theta[theta.len() - 1]
    }
}

impl SdeModel for ShortRate {
    fn name(&self) -> &str {
        match self.drift {
            RateDrift::M1 => "m1",
            RateDrift::M2 => "m2",
            RateDrift::M3 => "m3",
        }
    }

    fn dim_x(&self) -> usize {
        1
    }

    fn param_names(&self) -> &[&'static str] {
        match self.drift {
            RateDrift::M1 => &["theta0", "theta1", "theta4"],
            RateDrift::M2 => &["theta0", "theta1", "theta2", "theta4"],
            RateDrift::M3 => &["theta0", "theta1", "theta2", "theta3", "theta4"],
        }
    }

    fn param_domain(&self) -> &[ParamConstraint] {
        match self.drift {
            RateDrift::M1 => &M1_DOMAIN,
            RateDrift::M2 => &M2_DOMAIN,
            RateDrift::M3 => &M3_DOMAIN,
        }
    }

    fn default_theta(&self) -> Vec<f64> {
        match self.drift {
            RateDrift::M1 => vec![0.5, -0.1, 0.3],
            RateDrift::M2 => vec![0.5, -0.1, 0.01, 0.3],
            RateDrift::M3 => vec![0.5, -0.1, 0.01, 0.05, 0.3],
        }
    }

    #[inline]
    fn drift(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let v = x[0];
        let mut b = theta[0] + theta[1] * v;
        if matches!(self.drift, RateDrift::M2 | RateDrift::M3) {
            b += theta[2] * theta[2] * v * v;
        }
        if self.drift == RateDrift::M3 {
            b += theta[3] / v.max(STATE_FLOOR);
        }
        out[0] = b;
    }

    #[inline]
    fn diffusion(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        out[0] = self.vol(theta) * x[0].max(STATE_FLOOR).sqrt();
    }

    fn ito_correction(&self, theta: &[f64], x: &[f64]) -> Option<f64> {
        let v = x[0];
        let mut slope = theta[1];
        if matches!(self.drift, RateDrift::M2 | RateDrift::M3) {
            slope += 2.0 * theta[2] * theta[2] * v;
        }
        if v <= STATE_FLOOR {
            return Some(slope);
        }
        if self.drift == RateDrift::M3 {
            slope -= theta[3] / (v * v);
        }
        let mut b = [0.0];
        self.drift(theta, x, &mut b);
        Some(slope - b[0] / v)
    }

    fn sample_initial(&self, _theta: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![self.x0]
    }

    fn obs_logdensity(&self, _theta: &[f64], y: &[f64], _y_prev: Option<&[f64]>, path: &PathView<'_>) -> f64 {
        gaussian_logpdf(y[0], path.endpoint()[0], self.obs_sd * self.obs_sd)
    }

    fn sample_obs(&self, _theta: &[f64], _y_prev: Option<&[f64]>, path: &PathView<'_>, rng: &mut dyn RngCore) -> Vec<f64> {
        let e: f64 = rng.sample(StandardNormal);
        vec![path.endpoint()[0] + self.obs_sd * e]
    }
}

/// Options applied when instantiating a catalog model.
#[derive(Debug, Clone, Default)]
pub struct ModelOptions {
    /// Observation noise standard deviation (default 0.1).
    pub obs_sd: Option<f64>,
    /// Jump rate for `ou-jump` (default 0.5).
    pub jump_rate: Option<f64>,
    /// Half-width ζ of the uniform jump-size law for `ou-jump` (default 0.5).
    pub jump_half_width: Option<f64>,
    /// Initial state (default 0 for O–U and periodic, 5 for short-rate models).
    pub x0: Option<f64>,
}

pub const DEFAULT_OBS_SD: f64 = 0.1;

/// Names accepted by [`builtin_model`].
pub const BUILTIN_NAMES: [&str; 7] = ["ou", "ou-jump", "periodic", "heston", "m1", "m2", "m3"];

/// Instantiates a catalog model by name.
pub fn builtin_model(name: &str, opts: &ModelOptions) -> Result<Arc<dyn SdeModel>> {
    let obs_sd = opts.obs_sd.unwrap_or(DEFAULT_OBS_SD);
    if !(obs_sd > 0.0) {
        return Err(Error::InvalidArgument(format!("observation noise must be positive, got {obs_sd}")));
    }
    let model: Arc<dyn SdeModel> = match name {
        "ou" => {
            let mut m = OrnsteinUhlenbeck::new(obs_sd);
            m.x0 = opts.x0.unwrap_or(0.0);
            Arc::new(m)
        }
        "ou-jump" => {
            let mut m = OrnsteinUhlenbeck::with_jumps(
                obs_sd,
                opts.jump_rate.unwrap_or(0.5),
                opts.jump_half_width.unwrap_or(0.5),
            );
            m.x0 = opts.x0.unwrap_or(0.0);
            Arc::new(m)
        }
        "periodic" => {
            let mut m = PeriodicDrift::new(obs_sd);
            m.x0 = opts.x0.unwrap_or(0.0);
            Arc::new(m)
        }
        "heston" => Arc::new(Heston),
        "m1" => Arc::new(ShortRate::new(RateDrift::M1, obs_sd, opts.x0.unwrap_or(5.0))),
        "m2" => Arc::new(ShortRate::new(RateDrift::M2, obs_sd, opts.x0.unwrap_or(5.0))),
        "m3" => Arc::new(ShortRate::new(RateDrift::M3, obs_sd, opts.x0.unwrap_or(5.0))),
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(model)
}

/// Every catalog model with default options.
pub fn builtin_models() -> Vec<Arc<dyn SdeModel>> {
    BUILTIN_NAMES
        .iter()
        .map(|n| builtin_model(n, &ModelOptions::default()).expect("catalog names are valid"))
        .collect()
}
