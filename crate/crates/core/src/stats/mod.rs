//! The numerical core: weighted Kaplan-Meier, log-rank, logistic and
//! multinomial logistic MLE, Cox proportional hazards with Harrell's C,
//! univariate tests, and Bonferroni adjustment.
//!
//! All fitters are deterministic: summation follows record order, which
//! callers keep sorted by record id.

pub mod cox;
pub mod km;
pub mod logistic;
pub mod logrank;
pub mod multinomial;
pub mod univariate;

pub use cox::{cox_log_likelihood, fit_cox, harrell_c, CoxFit, TieMethod};
pub use km::{km_estimate, KmCurve};
pub use logistic::fit_logistic;
pub use logrank::{log_rank, LogRankResult};
pub use multinomial::{fit_multinomial, ipw_weights, MultinomialFit, PropensityWeights};
pub use univariate::{anova, chi_square, fisher_exact_2x2, kruskal_wallis, TestResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 50;
pub const GRADIENT_TOL: f64 = 1e-8;
pub const STEP_TOL: f64 = 1e-10;
/// Coefficients beyond this magnitude indicate a divergent MLE
/// (separation / monotone likelihood).
pub const DIVERGENCE_BOUND: f64 = 30.0;

/// One subject's survival contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    /// Days from the time origin (nonnegative).
    pub time: f64,
    /// true = event (death), false = censored.
    pub event: bool,
    pub weight: f64,
    pub covariates: Vec<f64>,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool, covariates: Vec<f64>) -> SurvivalRecord {
        SurvivalRecord {
            time,
            event,
            weight: 1.0,
            covariates,
        }
    }
}

/// Coefficients, covariance and convergence metadata shared by the
/// regression fitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub coefficients: Vec<f64>,
    /// Inverse observed information, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ModelFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        self.covariance
            .iter()
            .enumerate()
            .map(|(i, row)| row[i].max(0.0).sqrt())
            .collect()
    }
}

/// p_adj = min(1, m * p).
pub fn bonferroni(pvals: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < pvals.len() {
        return Err(Error::InvalidInput(format!(
            "bonferroni: m = {m} is less than the number of p-values ({})",
            pvals.len()
        )));
    }
    pvals
        .iter()
        .map(|&p| {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("p-value {p} outside [0, 1]")));
            }
            Ok((m as f64 * p).min(1.0))
        })
        .collect()
}

/// Upper-tail chi-square probability.
pub(crate) fn chi_square_sf(statistic: f64, df: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if df <= 0.0 {
        return 1.0;
    }
    match ChiSquared::new(df) {
        Ok(d) => (1.0 - d.cdf(statistic)).clamp(0.0, 1.0),
        Err(_) => 1.0,
    }
}

/// Detect collinear columns of a design matrix via pivoted Gaussian
/// elimination on the Gram matrix. Returns indices of columns without a
/// usable pivot.
pub(crate) fn collinear_columns(x: &[Vec<f64>]) -> Vec<usize> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let p = x[0].len();
    let mut gram = vec![vec![0.0_f64; p]; p];
    for row in x {
        for i in 0..p {
            for j in 0..p {
                gram[i][j] += row[i] * row[j];
            }
        }
    }
    let scale: f64 = (0..p).map(|i| gram[i][i]).fold(0.0_f64, f64::max).max(1.0);
    let tol = scale * 1e-10;
    let mut used = vec![false; p];
    let mut bad = Vec::new();
    for _ in 0..p {
        // Largest remaining diagonal entry.
        let Some(k) = (0..p)
            .filter(|&i| !used[i])
            .max_by(|&a, &b| gram[a][a].total_cmp(&gram[b][b]))
        else {
            break;
        };
        if gram[k][k] <= tol {
            bad.extend((0..p).filter(|&i| !used[i]));
            break;
        }
        used[k] = true;
        let pivot = gram[k][k];
        for i in 0..p {
            if used[i] || i == k {
                continue;
            }
            let f = gram[i][k] / pivot;
            for j in 0..p {
                gram[i][j] -= f * gram[k][j];
            }
        }
    }
    bad.sort_unstable();
    bad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bonferroni_definition() {
        assert_eq!(bonferroni(&[0.01, 0.04], 2).unwrap(), vec![0.02, 0.08]);
    }

    #[test]
    fn bonferroni_caps_at_one() {
        assert_eq!(bonferroni(&[0.9], 3).unwrap(), vec![1.0]);
    }

    #[test]
    fn bonferroni_identity_for_m_one() {
        assert_eq!(bonferroni(&[0.3], 1).unwrap(), vec![0.3]);
    }

    #[test]
    fn bonferroni_rejects_bad_inputs() {
        assert!(bonferroni(&[0.1, 0.2], 1).is_err());
        assert!(bonferroni(&[1.5], 2).is_err());
    }

    #[test]
    fn collinear_column_detection() {
        // Third column = 2 * second.
        let x: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![1.0, i as f64, 2.0 * i as f64])
            .collect();
        let bad = collinear_columns(&x);
        assert!(!bad.is_empty());
        let ok: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64, (i * i) as f64]).collect();
        assert!(collinear_columns(&ok).is_empty());
    }
}
