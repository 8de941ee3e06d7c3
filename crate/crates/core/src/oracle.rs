//! Exact references: the O–U transition law, a scalar linear-Gaussian state
//! space model with Kalman filter and RTS smoother, and dense joint-Gaussian
//! likelihoods for short series.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::LN_2PI;

fn gaussian_logpdf(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (y - mean) * (y - mean) / var)
}

/// Mean and variance of `X_Δ | X_0 = x` for `dX = θ₁(θ₂ − X)dt + θ₃dW`.
pub fn ou_exact_moments(theta: &[f64], x: f64, delta: f64) -> (f64, f64) {
    let (k, mu, s) = (theta[0], theta[1], theta[2]);
    let decay = (-k * delta).exp();
    let mean = mu + (x - mu) * decay;
    // (1 − e^{−2kΔ}) / (2k), continuous through k = 0
    let ratio = if k == 0.0 {
        delta
    } else {
        -(-2.0 * k * delta).exp_m1() / (2.0 * k)
    };
    (mean, s * s * ratio)
}

/// Exact O–U transition log density `log f_θ(x′ | x; Δ)`.
pub fn ou_exact_transition(theta: &[f64], x: f64, x_end: f64, delta: f64) -> f64 {
    let (mean, var) = ou_exact_moments(theta, x, delta);
    gaussian_logpdf(x_end, mean, var)
}

/// Mean and variance of the O–U bridge `X_t | X_0 = x, X_T = x′`.
pub fn ou_bridge_moments(theta: &[f64], x: f64, x_end: f64, horizon: f64, t: f64) -> (f64, f64) {
    let (m_t, v_t) = ou_exact_moments(theta, x, t);
    let (m_total, v_total) = ou_exact_moments(theta, x, horizon);
    let cov = v_t * (-theta[0] * (horizon - t)).exp();
    (m_t + cov / v_total * (x_end - m_total), v_t - cov * cov / v_total)
}

/// Scalar linear-Gaussian state space model
/// `x_k = a·x_{k−1} + c + w_k`, `w_k ~ N(0, q)`; `y_k = x_k + v_k`,
/// `v_k ~ N(0, r)`; `x_0 ~ N(m0, p0)` (`p0 = 0` is a point mass).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussian {
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
}

impl LinearGaussian {
    /// Exact discretisation of an observed O–U process at spacing `delta`.
    pub fn from_ou(theta: &[f64], delta: f64, obs_sd: f64, x0: f64) -> Self {
        let (mean0, q) = ou_exact_moments(theta, 0.0, delta);
        let a = (-theta[0] * delta).exp();
        Self {
            a,
            c: mean0,
            q,
            r: obs_sd * obs_sd,
            m0: x0,
            p0: 0.0,
        }
    }

    pub fn transition_logdensity(&self, x: f64, x_next: f64) -> f64 {
        gaussian_logpdf(x_next, self.a * x + self.c, self.q)
    }
}

/// Filtering and one-step predictive moments from a Kalman pass.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOutput {
    pub loglik: f64,
    pub filtered_mean: Vec<f64>,
    pub filtered_var: Vec<f64>,
    pub predicted_mean: Vec<f64>,
    pub predicted_var: Vec<f64>,
}

/// Kalman filter over `y_0 … y_n`; `y_0` observes `x_0`.
pub fn kalman_filter(model: &LinearGaussian, ys: &[f64]) -> Result<KalmanOutput> {
    let mut out = KalmanOutput {
        loglik: 0.0,
        filtered_mean: Vec::with_capacity(ys.len()),
        filtered_var: Vec::with_capacity(ys.len()),
        predicted_mean: Vec::with_capacity(ys.len()),
        predicted_var: Vec::with_capacity(ys.len()),
    };
    let (mut m, mut p) = (model.m0, model.p0);
    for (k, &y) in ys.iter().enumerate() {
        if k > 0 {
            m = model.a * m + model.c;
            p = model.a * model.a * p + model.q;
        }
        out.predicted_mean.push(m);
        out.predicted_var.push(p);
        let s = p + model.r;
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NonPositiveInnovation { index: k });
        }
        out.loglik += gaussian_logpdf(y, m, s);
        let gain = p / s;
        m += gain * (y - m);
        p *= 1.0 - gain;
        out.filtered_mean.push(m);
        out.filtered_var.push(p);
    }
    Ok(out)
}

pub fn kalman_loglik(model: &LinearGaussian, ys: &[f64]) -> Result<f64> {
    Ok(kalman_filter(model, ys)?.loglik)
}

/// Exact log-likelihood and its gradient in `θ` by central differences with
/// `h_i = 10⁻⁶·max(1, |θ_i|)`. `build` maps θ to the linear-Gaussian model.
pub fn kalman_loglik_and_score<F>(build: F, theta: &[f64], ys: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> LinearGaussian,
{
    let ll = kalman_loglik(&build(theta), ys)?;
    let mut grad = Vec::with_capacity(theta.len());
    let mut t = theta.to_vec();
    for i in 0..theta.len() {
        let h = 1e-6 * theta[i].abs().max(1.0);
        t[i] = theta[i] + h;
        let up = kalman_loglik(&build(&t), ys)?;
        t[i] = theta[i] - h;
        let down = kalman_loglik(&build(&t), ys)?;
        t[i] = theta[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok((ll, grad))
}

/// Smoothed first and second moments from the Rauch–Tung–Striebel pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherOutput {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// `Cov(x_{k−1}, x_k | y_{0:n})` for `k ≥ 1`; entry 0 is unused (zero).
    pub lag_one_cov: Vec<f64>,
}

impl SmootherOutput {
    /// `E[Σ_k x_k | y_{0:n}]`.
    pub fn sum_states(&self) -> f64 {
        self.mean.iter().sum()
    }

    /// `E[Σ_{k≥1} x_{k−1}x_k | y_{0:n}]`.
    pub fn sum_lag_products(&self) -> f64 {
        (1..self.mean.len())
            .map(|k| self.lag_one_cov[k] + self.mean[k - 1] * self.mean[k])
            .sum()
    }
}

pub fn rts_smoother(model: &LinearGaussian, ys: &[f64]) -> Result<SmootherOutput> {
    let kf = kalman_filter(model, ys)?;
    let n = ys.len();
    let mut mean = kf.filtered_mean.clone();
    let mut var = kf.filtered_var.clone();
    let mut lag = vec![0.0; n];
    for k in (0..n.saturating_sub(1)).rev() {
        let pred_var = kf.predicted_var[k + 1];
        let gain = if pred_var > 0.0 {
            kf.filtered_var[k] * model.a / pred_var
        } else {
            0.0
        };
        mean[k] = kf.filtered_mean[k] + gain * (mean[k + 1] - kf.predicted_mean[k + 1]);
        var[k] = kf.filtered_var[k] + gain * gain * (var[k + 1] - pred_var);
        lag[k + 1] = gain * var[k + 1];
    }
    Ok(SmootherOutput {
        mean,
        var,
        lag_one_cov: lag,
    })
}

/// Joint Gaussian log density of `y_0 … y_n` evaluated densely; meant for
/// short series (cubic cost).
pub fn dense_gaussian_loglik(model: &LinearGaussian, ys: &[f64]) -> Result<f64> {
    let n = ys.len();
    let mut mx = vec![0.0; n];
    let mut vx = vec![0.0; n];
    for k in 0..n {
        if k == 0 {
            mx[0] = model.m0;
            vx[0] = model.p0;
        } else {
            mx[k] = model.a * mx[k - 1] + model.c;
            vx[k] = model.a * model.a * vx[k - 1] + model.q;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            // Cov(x_i, x_j) = a^{j−i} Var(x_i)
            let c = model.a.powi((j - i) as i32) * vx[i];
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
        cov[(i, i)] += model.r;
    }
    let chol = cov.cholesky().ok_or(Error::NonPositiveInnovation { index: 0 })?;
    let resid = DVector::from_iterator(n, ys.iter().zip(&mx).map(|(y, m)| y - m));
    let solved = chol.solve(&resid);
    let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(-0.5 * (n as f64 * LN_2PI + logdet + resid.dot(&solved)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_limit_is_brownian() {
        let (_, v) = ou_exact_moments(&[1e-8, 0.0, 0.7], 0.3, 2.0);
        let (_, v0) = ou_exact_moments(&[0.0, 0.0, 0.7], 0.3, 2.0);
        assert!(((v - v0) / v0).abs() < 1e-6);
        assert!((v0 - 0.49 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn transition_is_sign_symmetric_for_zero_mean() {
        let theta = [0.4, 0.0, 0.5];
        let a = ou_exact_transition(&theta, 0.3, -0.2, 1.0);
        let b = ou_exact_transition(&theta, -0.3, 0.2, 1.0);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn bridge_moments_pin_both_ends() {
        let theta = [0.4, 0.1, 0.5];
        let (m0, v0) = ou_bridge_moments(&theta, 0.2, 0.7, 1.0, 0.0);
        let (m1, v1) = ou_bridge_moments(&theta, 0.2, 0.7, 1.0, 1.0);
        assert!((m0 - 0.2).abs() < 1e-12 && v0.abs() < 1e-12);
        assert!((m1 - 0.7).abs() < 1e-12 && v1.abs() < 1e-12);
    }

    #[test]
    fn kalman_matches_dense_gaussian() {
        let model = LinearGaussian::from_ou(&[0.4, 0.3, 0.5], 1.0, 0.1, 0.0);
        let ys = [0.05, -0.2, 0.4, 0.1, 0.6];
        for n in 1..=5 {
            let k = kalman_loglik(&model, &ys[..n]).unwrap();
            let d = dense_gaussian_loglik(&model, &ys[..n]).unwrap();
            assert!((k - d).abs() < 1e-9, "n = {n}: {k} vs {d}");
        }
    }

    #[test]
    fn single_observation_is_observation_density_only() {
        let model = LinearGaussian::from_ou(&[0.4, 0.0, 0.5], 1.0, 0.1, 0.0);
        let ll = kalman_loglik(&model, &[0.3]).unwrap();
        assert!((ll - gaussian_logpdf(0.3, 0.0, 0.01)).abs() < 1e-14);
    }

    #[test]
    fn smoother_agrees_with_filter_at_the_last_point() {
        let model = LinearGaussian {
            a: 0.8,
            c: 0.1,
            q: 0.3,
            r: 0.2,
            m0: 0.0,
            p0: 1.0,
        };
        let ys = [0.1, 0.5, -0.3, 0.2];
        let kf = kalman_filter(&model, &ys).unwrap();
        let sm = rts_smoother(&model, &ys).unwrap();
        assert_eq!(sm.mean[3], kf.filtered_mean[3]);
        assert!(sm.var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn rts_moments_match_dense_conditioning() {
        // Condition the joint Gaussian of (x, y) directly.
        let model = LinearGaussian {
            a: 0.7,
            c: 0.2,
            q: 0.5,
            r: 0.3,
            m0: 0.1,
            p0: 0.4,
        };
        let ys = [0.3, -0.1, 0.8];
        let n = ys.len();
        let mut mx = vec![model.m0];
        let mut vx = vec![model.p0];
        for k in 1..n {
            mx.push(model.a * mx[k - 1] + model.c);
            vx.push(model.a * model.a * vx[k - 1] + model.q);
        }
        let cxx = DMatrix::from_fn(n, n, |i, j| {
            let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
            model.a.powi((hi - lo) as i32) * vx[lo]
        });
        let cyy = &cxx + DMatrix::identity(n, n) * model.r;
        let inv = cyy.try_inverse().unwrap();
        let resid = DVector::from_iterator(n, ys.iter().zip(&mx).map(|(y, m)| y - m));
        let post_mean = DVector::from_vec(mx.clone()) + &cxx * &inv * resid;
        let post_cov = &cxx - &cxx * &inv * &cxx;
        let sm = rts_smoother(&model, &ys).unwrap();
        for k in 0..n {
            assert!((sm.mean[k] - post_mean[k]).abs() < 1e-12);
            assert!((sm.var[k] - post_cov[(k, k)]).abs() < 1e-12);
        }
        for k in 1..n {
            assert!((sm.lag_one_cov[k] - post_cov[(k - 1, k)]).abs() < 1e-12);
        }
    }
}
