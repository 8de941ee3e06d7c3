//! Online BIC for competing models fitted to the same observation stream.
//!
//! Each track stores the running log-likelihood proxy from the model's own
//! recursive-maximum-likelihood run (the sum of per-step log mean weights)
//! together with the running parameter estimate. Nothing is refiltered at
//! the final estimate.

use crate::error::{Error, Result};
use crate::rml::FitResult;

/// `−2ℓ + dim·log n`.
pub fn bic(loglik: f64, dim_theta: usize, n: f64) -> f64 {
    -2.0 * loglik + dim_theta as f64 * n.ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicTrack {
    pub model: String,
    pub dim_theta: usize,
    /// Cumulative `ℓ̂` after each observation.
    pub loglik: Vec<f64>,
    /// `θ̂` in force after each observation.
    pub theta: Vec<Vec<f64>>,
}

impl BicTrack {
    pub fn new(model: impl Into<String>, dim_theta: usize) -> Self {
        Self {
            model: model.into(),
            dim_theta,
            loglik: Vec::new(),
            theta: Vec::new(),
        }
    }

    /// Builds the track from a fit; observation `k` (counting `y_0`) is
    /// paired with `θ̂_k`.
    pub fn from_fit(model: impl Into<String>, fit: &FitResult) -> Result<Self> {
        let dim = fit.trajectory.first().map_or(0, Vec::len);
        let mut track = Self::new(model, dim);
        for (inc, theta) in fit.loglik_increments.iter().zip(&fit.trajectory) {
            track.push(*inc, theta.clone())?;
        }
        Ok(track)
    }

    /// Appends one observation's log-likelihood increment.
    pub fn push(&mut self, increment: f64, theta: Vec<f64>) -> Result<()> {
        let total = self.current_loglik() + increment;
        if !total.is_finite() {
            return Err(Error::NonFiniteValue(format!(
                "log-likelihood proxy of {} after {} observations",
                self.model,
                self.loglik.len() + 1
            )));
        }
        self.loglik.push(total);
        self.theta.push(theta);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.loglik.len()
    }

    pub fn current_loglik(&self) -> f64 {
        self.loglik.last().copied().unwrap_or(0.0)
    }

    pub fn bic(&self) -> Result<f64> {
        if self.n() == 0 {
            return Err(Error::InvalidArgument(format!("BIC of {} needs at least one observation", self.model)));
        }
        Ok(bic(self.current_loglik(), self.dim_theta, self.n() as f64))
    }

    /// BIC after each observation.
    pub fn bic_series(&self) -> Vec<f64> {
        self.loglik
            .iter()
            .enumerate()
            .map(|(k, &l)| bic(l, self.dim_theta, (k + 1) as f64))
            .collect()
    }
}

/// Running `BIC(a) − BIC(b)`; positive values favour `b`.
pub fn bic_difference(a: &BicTrack, b: &BicTrack) -> Result<Vec<f64>> {
    if a.n() != b.n() {
        return Err(Error::StreamLengthMismatch {
            left: a.n(),
            right: b.n(),
        });
    }
    Ok(a.bic_series().iter().zip(b.bic_series()).map(|(x, y)| x - y).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_arithmetic() {
        assert!((bic(0.0, 2, std::f64::consts::E.powi(2)) - 4.0).abs() < 1e-15);
        assert_eq!(bic(-3.0, 0, 10.0), 6.0);
    }

    #[test]
    fn equal_tracks_differ_by_penalty_only() {
        let mut a = BicTrack::new("a", 2);
        let mut b = BicTrack::new("b", 3);
        for inc in [-1.0, -0.5, -2.0] {
            a.push(inc, vec![0.0; 2]).unwrap();
            b.push(inc, vec![0.0; 3]).unwrap();
        }
        let d = bic_difference(&a, &b).unwrap();
        for (k, v) in d.iter().enumerate() {
            assert!((v + ((k + 1) as f64).ln()).abs() < 1e-12);
        }
        b.push(0.0, vec![0.0; 3]).unwrap();
        assert!(matches!(bic_difference(&a, &b), Err(Error::StreamLengthMismatch { left: 3, right: 4 })));
    }

    #[test]
    fn empty_track_has_no_bic() {
        assert!(BicTrack::new("m", 1).bic().is_err());
    }

    #[test]
    fn non_finite_increment_is_rejected() {
        let mut t = BicTrack::new("m", 1);
        assert!(t.push(f64::NEG_INFINITY, vec![0.0]).is_err());
        assert_eq!(t.n(), 0);
    }
}
