//! Penalty schedules controlling how readily anomalies are flagged.
//!
//! Defaults are BIC-style in the data size; for autocorrelated data the
//! inflated constructors scale them by (1 + rho) / (1 - rho).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CostType;

/// Collective penalty (scalar or per-length), point penalty, and the
/// multivariate marginal penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    /// Collective-anomaly penalty. A single entry applies to every length;
    /// a vector of length `max_seg_len - min_seg_len + 1` assigns entry `i`
    /// to anomalies of length `min_seg_len + i`.
    pub beta: Vec<f64>,
    /// Point-anomaly penalty.
    pub beta_tilde: f64,
    /// Marginal penalties for the multivariate pooled saving, one per
    /// variate rank. Entries are non-negative; the tail may reach zero.
    pub marginal_beta: Option<Vec<f64>>,
}

impl PenaltySchedule {
    /// Uniform schedule with the same collective and point penalty.
    pub fn constant(beta: f64) -> Result<Self> {
        Self::univariate(vec![beta], beta)
    }

    pub fn univariate(beta: Vec<f64>, beta_tilde: f64) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument("beta vector must not be empty".into()));
        }
        if beta.iter().any(|b| !(*b > 0.0)) || !(beta_tilde > 0.0) {
            return Err(Error::InvalidArgument("penalties must be positive".into()));
        }
        Ok(Self { beta, beta_tilde, marginal_beta: None })
    }

    pub fn multivariate(marginal_beta: Vec<f64>, beta_tilde: f64) -> Result<Self> {
        if marginal_beta.is_empty() {
            return Err(Error::InvalidArgument("marginal penalty vector must not be empty".into()));
        }
        if marginal_beta.iter().any(|b| !(*b >= 0.0)) || !(beta_tilde > 0.0) {
            return Err(Error::InvalidArgument(
                "marginal penalties must be non-negative and beta_tilde positive".into(),
            ));
        }
        Ok(Self { beta: Vec::new(), beta_tilde, marginal_beta: Some(marginal_beta) })
    }

    /// Collective penalty for an anomaly of length `len`.
    pub fn beta_for_length(&self, len: usize, min_seg_len: usize) -> f64 {
        if self.beta.len() == 1 {
            self.beta[0]
        } else {
            self.beta[len - min_seg_len]
        }
    }

    /// Check the beta vector length against the configured segment bounds.
    pub fn validate_for_range(&self, min_seg_len: usize, max_seg_len: usize) -> Result<()> {
        let expected = max_seg_len - min_seg_len + 1;
        if self.beta.len() != 1 && self.beta.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "beta vector must have length 1 or {expected} (max_seg_len - min_seg_len + 1), \
                 got {}",
                self.beta.len()
            )));
        }
        Ok(())
    }
}

/// BIC-style univariate defaults: 3 ln n for the mean cost, 4 ln n for
/// meanvar, used for both the collective and point penalty.
pub fn default_penalties_uv(n: usize, cost_type: CostType) -> Result<PenaltySchedule> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 observations, got {n}")));
    }
    let factor = match cost_type {
        CostType::Mean => 3.0,
        CostType::MeanVar => 4.0,
    };
    let beta = factor * (n as f64).ln();
    PenaltySchedule::constant(beta)
}

/// Univariate penalties inflated for AR(1) autocorrelation:
/// 3 ((1 + rho) / (1 - rho)) ln n.
pub fn inflated_penalties_uv(n: usize, rho_hat: f64) -> Result<PenaltySchedule> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 observations, got {n}")));
    }
    if !(rho_hat.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rho_hat must lie in (-1, 1), got {rho_hat}"
        )));
    }
    let beta = 3.0 * ((1.0 + rho_hat) / (1.0 - rho_hat)) * (n as f64).ln();
    PenaltySchedule::constant(beta)
}

/// Multivariate defaults: point penalty 3 ln(np) and marginal penalties
/// beta_1 = 3 ln n + 2 ln p, beta_i = 2 ln(p + 1 - i) for i >= 2.
pub fn default_penalties_mv(
    n: usize,
    p: usize,
    _w: usize,
    _cost_type: CostType,
) -> Result<PenaltySchedule> {
    if n < 2 || p < 1 {
        return Err(Error::InvalidArgument(format!("need n >= 2 and p >= 1, got n={n}, p={p}")));
    }
    let nf = n as f64;
    let pf = p as f64;
    let beta_tilde = 3.0 * (nf * pf).ln();
    let mut marginal = Vec::with_capacity(p);
    marginal.push(3.0 * nf.ln() + 2.0 * pf.ln());
    for i in 2..=p {
        marginal.push(2.0 * ((p + 1 - i) as f64).ln());
    }
    PenaltySchedule::multivariate(marginal, beta_tilde)
}

/// Multivariate penalties inflated for per-variate AR(1) autocorrelation.
/// `rho_hats` holds one estimate per variate; order statistics are taken
/// internally (rho_1 = largest).
pub fn inflated_penalties_mv(
    n: usize,
    p: usize,
    w: usize,
    rho_hats: &[f64],
) -> Result<PenaltySchedule> {
    if n < 2 || p < 1 {
        return Err(Error::InvalidArgument(format!("need n >= 2 and p >= 1, got n={n}, p={p}")));
    }
    if rho_hats.len() != p {
        return Err(Error::InvalidArgument(format!(
            "expected {p} autocorrelation estimates, got {}",
            rho_hats.len()
        )));
    }
    if rho_hats.iter().any(|r| !(r.abs() < 1.0)) {
        return Err(Error::InvalidArgument("every rho_hat must lie in (-1, 1)".into()));
    }
    let mut sorted = rho_hats.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let infl = |rho: f64| (1.0 + rho) / (1.0 - rho);
    let nf = n as f64;
    let pf = p as f64;
    let wf = (w + 1) as f64;
    let beta_tilde = 2.0 * infl(sorted[0]) * (nf * pf).ln();
    let mut marginal = Vec::with_capacity(p);
    marginal.push(2.0 * infl(sorted[0]) * (nf * pf * wf).ln());
    for rho in sorted.iter().skip(1) {
        marginal.push(2.0 * infl(*rho) * (pf * wf).ln());
    }
    PenaltySchedule::multivariate(marginal, beta_tilde)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn default_uv_values() {
        let s = default_penalties_uv(5000, CostType::Mean).unwrap();
        assert!(close(s.beta[0], 3.0 * 5000f64.ln(), 1e-12));
        assert!(close(s.beta[0], 25.5516, 1e-3));
        assert_eq!(s.beta.len(), 1);
        assert_eq!(s.beta[0], s.beta_tilde);

        let s = default_penalties_uv(5000, CostType::MeanVar).unwrap();
        assert!(close(s.beta[0], 4.0 * 5000f64.ln(), 1e-12));
        assert!(close(s.beta[0], 34.0688, 1e-3));

        // n = e is not an integer; nearest integer check of the exact form
        let s = default_penalties_uv(3, CostType::Mean).unwrap();
        assert!(close(s.beta[0], 3.0 * 3f64.ln(), 1e-12));

        assert!(default_penalties_uv(1, CostType::Mean).is_err());
    }

    #[test]
    fn inflated_uv_values() {
        // rho = 0 reproduces the mean default exactly
        let s0 = inflated_penalties_uv(5000, 0.0).unwrap();
        let d = default_penalties_uv(5000, CostType::Mean).unwrap();
        assert_eq!(s0, d);

        // machine-temperature style workflow: n = 22695, rho = 0.97
        let s = inflated_penalties_uv(22695, 0.97).unwrap();
        let expect = 3.0 * (1.97 / 0.03) * 22695f64.ln();
        assert!(close(s.beta[0], expect, 1e-9));
        assert!(close(s.beta[0], 1975.89, 0.01));

        let s = inflated_penalties_uv(100, 0.5).unwrap();
        assert!(close(s.beta[0], 9.0 * 100f64.ln(), 1e-12));
        assert!(close(s.beta[0], 41.4465, 1e-3));

        assert!(inflated_penalties_uv(100, 1.0).is_err());
        assert!(inflated_penalties_uv(100, -1.0).is_err());
    }

    #[test]
    fn default_mv_values() {
        let s = default_penalties_mv(500, 200, 0, CostType::Mean).unwrap();
        assert!(close(s.beta_tilde, 3.0 * 100000f64.ln(), 1e-12));
        assert!(close(s.beta_tilde, 34.5388, 1e-3));
        let marg = s.marginal_beta.as_ref().unwrap();
        assert!(close(marg[0], 3.0 * 500f64.ln() + 2.0 * 200f64.ln(), 1e-12));
        assert!(close(marg[0], 29.2405, 1e-3));
        assert!(close(marg[1], 2.0 * 199f64.ln(), 1e-12));
        assert_eq!(marg[marg.len() - 1], 0.0);

        let s = default_penalties_mv(500, 1, 0, CostType::Mean).unwrap();
        let marg = s.marginal_beta.as_ref().unwrap();
        assert_eq!(marg.len(), 1);
        assert!(close(marg[0], 3.0 * 500f64.ln(), 1e-12));
    }

    #[test]
    fn inflated_mv_values() {
        // all rho = 0, w = 0, p = 1: beta_tilde = beta_1 = 2 ln n
        let s = inflated_penalties_mv(100, 1, 0, &[0.0]).unwrap();
        assert!(close(s.beta_tilde, 2.0 * 100f64.ln(), 1e-12));
        let marg = s.marginal_beta.as_ref().unwrap();
        assert!(close(marg[0], 2.0 * 100f64.ln(), 1e-12));

        let s = inflated_penalties_mv(100, 4, 20, &[0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!(close(s.beta_tilde, 6.0 * 400f64.ln(), 1e-12));
        assert!(close(s.beta_tilde, 35.9488, 1e-3));
        let marg = s.marginal_beta.as_ref().unwrap();
        assert!(close(marg[0], 6.0 * 8400f64.ln(), 1e-12));
        assert!(close(marg[0], 54.2159, 1e-3));
        assert!(close(marg[1], 2.0 * 84f64.ln(), 1e-12));
        assert!(close(marg[1], 8.8616, 1e-3));

        // order statistics: input order must not matter
        let a = inflated_penalties_mv(100, 2, 0, &[0.0, 0.5]).unwrap();
        let b = inflated_penalties_mv(100, 2, 0, &[0.5, 0.0]).unwrap();
        assert_eq!(a, b);

        assert!(inflated_penalties_mv(100, 1, 0, &[1.0]).is_err());
    }

    #[test]
    fn marginal_vector_non_increasing_with_constant_rho() {
        let s = inflated_penalties_mv(1000, 6, 2, &[0.3; 6]).unwrap();
        let marg = s.marginal_beta.unwrap();
        for w in marg.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let s = default_penalties_mv(1000, 6, 0, CostType::Mean).unwrap();
        let marg = s.marginal_beta.unwrap();
        for w in marg.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(PenaltySchedule::constant(0.0).is_err());
        assert!(PenaltySchedule::univariate(vec![], 1.0).is_err());
        assert!(PenaltySchedule::univariate(vec![1.0, -2.0], 1.0).is_err());
        let s = PenaltySchedule::univariate(vec![5.0, 6.0, 7.0], 4.0).unwrap();
        assert!(s.validate_for_range(10, 12).is_ok());
        assert!(s.validate_for_range(10, 11).is_err());
        assert_eq!(s.beta_for_length(11, 10), 6.0);
        let c = PenaltySchedule::constant(2.5).unwrap();
        assert_eq!(c.beta_for_length(37, 10), 2.5);
    }
}
