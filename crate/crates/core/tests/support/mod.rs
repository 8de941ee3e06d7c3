//! Reference computations for the integration tests, written out directly
//! rather than shared with the library.

#![allow(dead_code)]

use std::f64::consts::PI;

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Exact O–U transition density for `dX = θ₁(θ₂ − X)dt + θ₃dW`.
pub fn ou_density(theta: &[f64], x: f64, x_end: f64, t: f64) -> f64 {
    let (a, mu, s) = (theta[0], theta[1], theta[2]);
    let decay = (-a * t).exp();
    let mean = mu + (x - mu) * decay;
    let var = s * s * (1.0 - decay * decay) / (2.0 * a);
    (-(x_end - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Scalar model `x_k = a x_{k−1} + c + N(0, q)`, `y_k = x_k + N(0, r)`,
/// `x_0 ~ N(m0, p0)`.
#[derive(Debug, Clone, Copy)]
pub struct Scalar {
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
}

impl Scalar {
    /// Observed O–U at unit spacing started from a known point.
    pub fn ou(theta: &[f64], delta: f64, obs_sd: f64, x0: f64) -> Self {
        let (k, mu, s) = (theta[0], theta[1], theta[2]);
        let a = (-k * delta).exp();
        Self {
            a,
            c: mu * (1.0 - a),
            q: s * s * (1.0 - a * a) / (2.0 * k),
            r: obs_sd * obs_sd,
            m0: x0,
            p0: 0.0,
        }
    }
}

fn log_normal(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (y - mean).powi(2) / var)
}

/// Filtered means/variances, one-step predictions and the log-likelihood.
pub struct Filtered {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub pred_mean: Vec<f64>,
    pub pred_var: Vec<f64>,
    pub loglik: f64,
}

pub fn kalman(m: &Scalar, ys: &[f64]) -> Filtered {
    let mut out = Filtered {
        mean: vec![],
        var: vec![],
        pred_mean: vec![],
        pred_var: vec![],
        loglik: 0.0,
    };
    let (mut mp, mut pp) = (m.m0, m.p0);
    for (k, &y) in ys.iter().enumerate() {
        if k > 0 {
            let (mf, pf) = (out.mean[k - 1], out.var[k - 1]);
            mp = m.a * mf + m.c;
            pp = m.a * m.a * pf + m.q;
        }
        let s = pp + m.r;
        out.loglik += log_normal(y, mp, s);
        let gain = pp / s;
        out.pred_mean.push(mp);
        out.pred_var.push(pp);
        out.mean.push(mp + gain * (y - mp));
        out.var.push(pp * (1.0 - gain));
    }
    out
}

/// `E[Σ_k x_k | y_{0:n}]` by a Rauch–Tung–Striebel pass.
pub fn smoothed_state_sum(m: &Scalar, ys: &[f64]) -> f64 {
    let f = kalman(m, ys);
    let n = ys.len();
    let mut sm = f.mean[n - 1];
    let mut total = sm;
    for k in (0..n - 1).rev() {
        let j = f.var[k] * m.a / f.pred_var[k + 1];
        sm = f.mean[k] + j * (sm - f.pred_mean[k + 1]);
        total += sm;
    }
    total
}

/// Central-difference score of the O–U Kalman log-likelihood.
pub fn ou_kalman_score(theta: &[f64], obs_sd: f64, ys: &[f64]) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let h = 1e-6 * theta[i].abs().max(1.0);
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[i] += h;
            down[i] -= h;
            let lu = kalman(&Scalar::ou(&up, 1.0, obs_sd, 0.0), ys).loglik;
            let ld = kalman(&Scalar::ou(&down, 1.0, obs_sd, 0.0), ys).loglik;
            (lu - ld) / (2.0 * h)
        })
        .collect()
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two-sided Welch t-test p-value for equal means.
pub fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    2.0 * (1.0 - dist.cdf(t.abs()))
}
