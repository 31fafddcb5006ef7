//! Group-comparison tests for descriptive tables: Kruskal-Wallis,
//! one-way ANOVA, Pearson chi-square, and Fisher's exact test (2x2).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

use super::chi_square_sf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Kruskal-Wallis H with the tie correction, tested against the
/// chi-square distribution on K-1 df.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    let k = groups.len();
    if k < 2 || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidInput(
            "kruskal_wallis requires at least 2 nonempty groups".into(),
        ));
    }
    let mut pooled: Vec<(f64, usize)> = Vec::new();
    for (g, values) in groups.iter().enumerate() {
        for &v in values {
            if !v.is_finite() {
                return Err(Error::InvalidInput("kruskal_wallis: non-finite value".into()));
            }
            pooled.push((v, g));
        }
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pooled.len() as f64;

    // Midranks, accumulating the tie-correction term sum(t^3 - t).
    let mut rank_sums = vec![0.0_f64; k];
    let mut tie_term = 0.0_f64;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i) as f64;
        let midrank = (i + j + 1) as f64 / 2.0; // average of ranks i+1..=j
        for entry in &pooled[i..j] {
            rank_sums[entry.1] += midrank;
        }
        tie_term += t * t * t - t;
        i = j;
    }

    let mut h = 0.0;
    for (g, values) in groups.iter().enumerate() {
        let ng = values.len() as f64;
        h += rank_sums[g] * rank_sums[g] / ng;
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    let correction = 1.0 - tie_term / (n * n * n - n);
    if correction <= 0.0 {
        // Every observation identical: no evidence either way.
        return Ok(TestResult {
            test: "kruskal-wallis".into(),
            statistic: 0.0,
            df: (k - 1) as f64,
            p_value: 1.0,
        });
    }
    h /= correction;
    let df = (k - 1) as f64;
    Ok(TestResult {
        test: "kruskal-wallis".into(),
        statistic: h,
        df,
        p_value: chi_square_sf(h, df),
    })
}

/// One-way ANOVA F test.
pub fn anova(groups: &[Vec<f64>]) -> Result<TestResult> {
    let k = groups.len();
    if k < 2 || groups.iter().any(|g| g.len() < 1) {
        return Err(Error::InvalidInput(
            "anova requires at least 2 nonempty groups".into(),
        ));
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    if n <= k {
        return Err(Error::InvalidInput("anova: no residual degrees of freedom".into()));
    }
    let grand: f64 = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let mean: f64 = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (mean - grand).powi(2);
        ss_within += g.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    let df1 = (k - 1) as f64;
    let df2 = (n - k) as f64;
    if ss_within <= 0.0 {
        let (statistic, p_value) = if ss_between <= 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        };
        return Ok(TestResult {
            test: "anova".into(),
            statistic,
            df: df1,
            p_value,
        });
    }
    let f = (ss_between / df1) / (ss_within / df2);
    let dist = FisherSnedecor::new(df1, df2)
        .map_err(|e| Error::InvalidInput(format!("anova: {e}")))?;
    Ok(TestResult {
        test: "anova".into(),
        statistic: f,
        df: df1,
        p_value: (1.0 - dist.cdf(f)).clamp(0.0, 1.0),
    })
}

/// Pearson chi-square on an r x c count table.
pub fn chi_square(table: &[Vec<f64>]) -> Result<TestResult> {
    let r = table.len();
    if r < 2 || table[0].is_empty() {
        return Err(Error::InvalidInput("chi_square: need at least a 2x2 table".into()));
    }
    let c = table[0].len();
    if c < 2 || table.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidInput("chi_square: ragged or single-column table".into()));
    }
    if table.iter().flatten().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput("chi_square: negative or non-finite count".into()));
    }
    let row_totals: Vec<f64> = table.iter().map(|row| row.iter().sum()).collect();
    let col_totals: Vec<f64> = (0..c).map(|j| table.iter().map(|row| row[j]).sum()).collect();
    let total: f64 = row_totals.iter().sum();
    if total <= 0.0 || row_totals.iter().any(|&t| t == 0.0) || col_totals.iter().any(|&t| t == 0.0)
    {
        return Err(Error::InvalidInput(
            "chi_square: empty table margin".into(),
        ));
    }
    let mut stat = 0.0;
    for i in 0..r {
        for j in 0..c {
            let expected = row_totals[i] * col_totals[j] / total;
            stat += (table[i][j] - expected).powi(2) / expected;
        }
    }
    let df = ((r - 1) * (c - 1)) as f64;
    Ok(TestResult {
        test: "chi-square".into(),
        statistic: stat,
        df,
        p_value: chi_square_sf(stat, df),
    })
}

fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

fn hypergeom_ln_pmf(a: u64, r1: u64, r2: u64, c1: u64, n: u64) -> f64 {
    // P(table | margins) = r1! r2! c1! c2! / (n! a! b! c! d!)
    let b = r1 - a;
    let c = c1 - a;
    let d = r2 - c;
    ln_factorial(r1) + ln_factorial(r2) + ln_factorial(c1) + ln_factorial(n - c1)
        - ln_factorial(n)
        - ln_factorial(a)
        - ln_factorial(b)
        - ln_factorial(c)
        - ln_factorial(d)
}

/// Two-sided Fisher exact test for a 2x2 table of counts, summing the
/// probabilities of all tables (with the same margins) no more likely
/// than the observed one. Larger tables are not supported.
pub fn fisher_exact_2x2(table: &[Vec<f64>]) -> Result<TestResult> {
    if table.len() != 2 || table.iter().any(|row| row.len() != 2) {
        return Err(Error::InvalidInput(
            "fisher_exact_2x2 supports only 2x2 tables; use chi_square for larger tables".into(),
        ));
    }
    let mut counts = [[0u64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let v = table[i][j];
            if v < 0.0 || !v.is_finite() || v.fract().abs() > 1e-9 {
                return Err(Error::InvalidInput(
                    "fisher_exact_2x2 requires nonnegative integer counts".into(),
                ));
            }
            counts[i][j] = v.round() as u64;
        }
    }
    let r1 = counts[0][0] + counts[0][1];
    let r2 = counts[1][0] + counts[1][1];
    let c1 = counts[0][0] + counts[1][0];
    let n = r1 + r2;
    if n == 0 {
        return Err(Error::InvalidInput("fisher_exact_2x2: empty table".into()));
    }
    let a_obs = counts[0][0];
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let ln_obs = hypergeom_ln_pmf(a_obs, r1, r2, c1, n);
    let mut p = 0.0;
    for a in lo..=hi {
        let ln_p = hypergeom_ln_pmf(a, r1, r2, c1, n);
        if ln_p <= ln_obs + 1e-7 {
            p += ln_p.exp();
        }
    }
    Ok(TestResult {
        test: "fisher-exact".into(),
        statistic: a_obs as f64,
        df: 1.0,
        p_value: p.min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kruskal_wallis_hand_case() {
        // Groups {1,2,3} and {4,5,6}: ranks sums 6 and 15, no ties.
        // H = 12/(6*7) * (36/3 + 225/3) - 3*7 = 12/42 * 87 - 21 = 27/7.
        let r = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_abs_diff_eq!(r.statistic, 27.0 / 7.0, epsilon = 1e-10);
        assert_eq!(r.df, 1.0);
    }

    #[test]
    fn kruskal_wallis_identical_groups() {
        let r = kruskal_wallis(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.0, epsilon = 1e-10);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn kruskal_wallis_all_ties_degenerate() {
        let r = kruskal_wallis(&[vec![5.0, 5.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn anova_hand_case() {
        // Groups {0,2} and {4,6}: grand mean 3, group means 1 and 5.
        // SSB = 2*4 + 2*4 = 16; SSW = 2 + 2 = 4; F = 16 / (4/2) = 8.
        let r = anova(&[vec![0.0, 2.0], vec![4.0, 6.0]]).unwrap();
        assert_abs_diff_eq!(r.statistic, 8.0, epsilon = 1e-10);
        // F(1, 2) upper tail at 8: p = 1 - F_cdf. sqrt(F) = t on 2 df,
        // two-sided t p-value at 2.828 on 2 df is about 0.1056.
        assert_abs_diff_eq!(r.p_value, 0.10557, epsilon = 1e-4);
    }

    #[test]
    fn anova_equal_means() {
        let r = anova(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.0, epsilon = 1e-12);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn chi_square_hand_case() {
        // [[10, 20], [20, 10]]: all expected = 15; each cell (5)^2/15.
        // X2 = 4 * 25/15 = 20/3.
        let r = chi_square(&[vec![10.0, 20.0], vec![20.0, 10.0]]).unwrap();
        assert_abs_diff_eq!(r.statistic, 20.0 / 3.0, epsilon = 1e-10);
        assert_eq!(r.df, 1.0);
        assert!(r.p_value < 0.05);
    }

    #[test]
    fn chi_square_independent_table() {
        let r = chi_square(&[vec![10.0, 20.0], vec![20.0, 40.0]]).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn fisher_tea_tasting() {
        // Fisher's classic lady-tasting-tea table: [[3,1],[1,3]].
        // Two-sided p = 2 * (C(4,3)C(4,1) + C(4,4)C(4,0)) / C(8,4)
        //             = 2 * 17/70 = 0.48571...
        let r = fisher_exact_2x2(&[vec![3.0, 1.0], vec![1.0, 3.0]]).unwrap();
        assert_abs_diff_eq!(r.p_value, 34.0 / 70.0, epsilon = 1e-10);
    }

    #[test]
    fn fisher_extreme_table() {
        // [[5,0],[0,5]]: only the two extreme tables qualify.
        // p = 2 / C(10,5) = 2/252.
        let r = fisher_exact_2x2(&[vec![5.0, 0.0], vec![0.0, 5.0]]).unwrap();
        assert_abs_diff_eq!(r.p_value, 2.0 / 252.0, epsilon = 1e-10);
    }

    #[test]
    fn fisher_rejects_larger_tables() {
        let t = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        assert!(fisher_exact_2x2(&t).is_err());
    }

    #[test]
    fn fisher_matches_chi_square_direction() {
        let t = vec![vec![30.0, 10.0], vec![10.0, 30.0]];
        let f = fisher_exact_2x2(&t).unwrap();
        let c = chi_square(&t).unwrap();
        assert!(f.p_value < 0.01);
        assert!(c.p_value < 0.01);
    }
}
