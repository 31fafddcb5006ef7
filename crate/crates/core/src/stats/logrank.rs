//! K-sample log-rank test with hypergeometric variance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{chi_square_sf, SurvivalRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
}

/// Observed-minus-expected statistic over the first K-1 groups with the
/// full hypergeometric covariance; df = K - 1. Record weights are
/// ignored: the test runs on raw group membership.
pub fn log_rank(groups: &[Vec<SurvivalRecord>]) -> Result<LogRankResult> {
    let k = groups.len();
    if k < 2 || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidInput(
            "log_rank requires at least 2 nonempty groups".into(),
        ));
    }

    // (time, event, group)
    let mut rows: Vec<(f64, bool, usize)> = Vec::new();
    for (g, records) in groups.iter().enumerate() {
        for r in records {
            rows.push((r.time, r.event, g));
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut event_times: Vec<f64> = rows.iter().filter(|r| r.1).map(|r| r.0).collect();
    event_times.dedup();

    let mut observed = vec![0.0_f64; k];
    let mut expected = vec![0.0_f64; k];
    let dim = k - 1;
    let mut cov = DMatrix::<f64>::zeros(dim, dim);

    for &t in &event_times {
        let mut n_g = vec![0.0_f64; k];
        let mut d_g = vec![0.0_f64; k];
        for &(time, event, g) in &rows {
            if time >= t {
                n_g[g] += 1.0;
            }
            if event && time == t {
                d_g[g] += 1.0;
            }
        }
        let n: f64 = n_g.iter().sum();
        let d: f64 = d_g.iter().sum();
        if n <= 0.0 || d <= 0.0 {
            continue;
        }
        for g in 0..k {
            observed[g] += d_g[g];
            expected[g] += d * n_g[g] / n;
        }
        if n > 1.0 {
            let c = d * (n - d) / (n - 1.0);
            for g in 0..dim {
                for h in 0..dim {
                    let delta = if g == h { 1.0 } else { 0.0 };
                    cov[(g, h)] += c * (n_g[g] / n) * (delta - n_g[h] / n);
                }
            }
        }
    }

    let total_events: f64 = observed.iter().sum();
    if total_events == 0.0 {
        return Ok(LogRankResult {
            statistic: 0.0,
            df: dim,
            p_value: 1.0,
            observed,
            expected,
        });
    }

    let diff = nalgebra::DVector::from_iterator(dim, (0..dim).map(|g| observed[g] - expected[g]));
    let statistic = match cov.clone().try_inverse() {
        Some(inv) => (diff.transpose() * inv * &diff)[(0, 0)].max(0.0),
        None => {
            // Singular covariance (e.g. a group with no one at risk at any
            // event time): fall back to the diagonal approximation.
            (0..k)
                .filter(|&g| expected[g] > 0.0)
                .map(|g| (observed[g] - expected[g]).powi(2) / expected[g])
                .sum()
        }
    };
    let p_value = chi_square_sf(statistic, dim as f64);
    Ok(LogRankResult {
        statistic,
        df: dim,
        p_value,
        observed,
        expected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rec(time: f64, event: bool) -> SurvivalRecord {
        SurvivalRecord::new(time, event, vec![])
    }

    #[test]
    fn identical_groups_statistic_zero() {
        let g: Vec<SurvivalRecord> = (1..=5).map(|t| rec(t as f64, true)).collect();
        let r = log_rank(&[g.clone(), g]).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.0, epsilon = 1e-9);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn disjoint_groups_significant() {
        let a: Vec<SurvivalRecord> = (1..=10).map(|t| rec(t as f64, true)).collect();
        let b: Vec<SurvivalRecord> = (101..=110).map(|t| rec(t as f64, true)).collect();
        let r = log_rank(&[a, b]).unwrap();
        assert!(r.p_value < 0.05, "p = {}", r.p_value);
    }

    #[test]
    fn textbook_two_group_case() {
        // Group A: deaths at 1, 3; censored at 5.
        // Group B: death at 2; censored at 4, 6.
        // Hand-computed O-E table:
        //  t=1: n=6, nA=3, d=1 in A  -> eA += 1/2
        //  t=2: n=5, nA=2, d=1 in B  -> eA += 2/5
        //  t=3: n=4, nA=2, d=1 in A  -> eA += 1/2
        // O_A = 2, E_A = 1.4; var = sum of n_A*n_B*d*(n-d)/(n^2*(n-1))
        //  t=1: 3*3*1*5/(36*5) = 1/4
        //  t=2: 2*3*1*4/(25*4) = 6/25
        //  t=3: 2*2*1*3/(16*3) = 1/4
        // V = 0.74; chi2 = 0.36/0.74 = 0.486486...
        let a = vec![rec(1.0, true), rec(3.0, true), rec(5.0, false)];
        let b = vec![rec(2.0, true), rec(4.0, false), rec(6.0, false)];
        let r = log_rank(&[a, b]).unwrap();
        assert_abs_diff_eq!(r.observed[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.expected[0], 1.4, epsilon = 1e-12);
        assert_abs_diff_eq!(r.statistic, 0.36 / 0.74, epsilon = 1e-9);
        assert_eq!(r.df, 1);
    }

    #[test]
    fn no_events_degenerate() {
        let a = vec![rec(1.0, false), rec(2.0, false)];
        let b = vec![rec(1.5, false)];
        let r = log_rank(&[a, b]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn requires_two_nonempty_groups() {
        assert!(log_rank(&[vec![rec(1.0, true)]]).is_err());
        assert!(log_rank(&[vec![rec(1.0, true)], vec![]]).is_err());
    }

    #[test]
    fn three_group_runs() {
        let a: Vec<SurvivalRecord> = (1..=8).map(|t| rec(t as f64, t % 2 == 0)).collect();
        let b: Vec<SurvivalRecord> = (2..=9).map(|t| rec(t as f64 * 1.5, true)).collect();
        let c: Vec<SurvivalRecord> = (1..=8).map(|t| rec(t as f64 * 2.0, t % 3 == 0)).collect();
        let r = log_rank(&[a, b, c]).unwrap();
        assert_eq!(r.df, 2);
        assert!(r.statistic >= 0.0);
        assert!((0.0..=1.0).contains(&r.p_value));
    }
}
