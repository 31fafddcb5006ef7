//! Multinomial logistic regression (baseline-category logit) and the
//! inverse-probability weights built from its fitted probabilities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{collinear_columns, DIVERGENCE_BOUND, GRADIENT_TOL, MAX_ITERATIONS, STEP_TOL};

/// Fit for K categories with category 0 as reference: one coefficient
/// vector per non-reference category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialFit {
    pub n_categories: usize,
    /// coefficients[k] belongs to category k+1 (vs category 0).
    pub coefficients: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MultinomialFit {
    /// Per-category probabilities for one design row.
    pub fn probabilities(&self, row: &[f64]) -> Vec<f64> {
        let mut etas = vec![0.0_f64];
        for beta in &self.coefficients {
            etas.push(row.iter().zip(beta).map(|(a, b)| a * b).sum());
        }
        let max = etas.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
        let exps: Vec<f64> = etas.iter().map(|e| (e - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.iter().map(|e| e / z).collect()
    }
}

fn probabilities_at(row: &[f64], beta: &[f64], k1: usize, p: usize) -> Vec<f64> {
    let mut etas = vec![0.0_f64];
    for k in 0..k1 {
        let b = &beta[k * p..(k + 1) * p];
        etas.push(row.iter().zip(b).map(|(a, c)| a * c).sum());
    }
    let max = etas.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
    let exps: Vec<f64> = etas.iter().map(|e| (e - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Newton-Raphson MLE on the stacked (K-1)*p system. `y` holds category
/// indices in 0..n_categories, with 0 the reference.
pub fn fit_multinomial(x: &[Vec<f64>], y: &[usize], n_categories: usize) -> Result<MultinomialFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "design has {} rows but response has {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() || n_categories < 2 {
        return Err(Error::InvalidInput(
            "multinomial fit needs rows and at least 2 categories".into(),
        ));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_categories) {
        return Err(Error::InvalidInput(format!(
            "category index {bad} out of range (n_categories = {n_categories})"
        )));
    }
    let bad = collinear_columns(x);
    if !bad.is_empty() {
        return Err(Error::RankDeficient(bad));
    }

    let p = x[0].len();
    let k1 = n_categories - 1;
    let dim = k1 * p;
    let mut beta = vec![0.0_f64; dim];
    let mut iterations = 0;
    let mut converged = false;

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for (row, &yi) in x.iter().zip(y) {
            let probs = probabilities_at(row, &beta, k1, p);
            for k in 0..k1 {
                let r = (if yi == k + 1 { 1.0 } else { 0.0 }) - probs[k + 1];
                for j in 0..p {
                    grad[k * p + j] += r * row[j];
                }
                for l in 0..k1 {
                    let w = probs[k + 1] * ((if k == l { 1.0 } else { 0.0 }) - probs[l + 1]);
                    for a in 0..p {
                        for b in 0..p {
                            hess[(k * p + a, l * p + b)] += w * row[a] * row[b];
                        }
                    }
                }
            }
        }
        let Some(step) = hess.lu().solve(&grad) else {
            break;
        };
        for j in 0..dim {
            beta[j] += step[j];
        }
        let max_grad = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let max_step = step.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max_grad < GRADIENT_TOL || max_step < STEP_TOL {
            converged = true;
            break;
        }
    }

    // As with the binary fit, an unobserved category or separated
    // predictor sends a coefficient to infinity while the gradient still
    // vanishes; check the magnitude and the curvature at the optimum.
    if beta.iter().any(|b| b.abs() > DIVERGENCE_BOUND) {
        converged = false;
    } else if converged {
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for row in x {
            let probs = probabilities_at(row, &beta, k1, p);
            for k in 0..k1 {
                for l in 0..k1 {
                    let w = probs[k + 1] * ((if k == l { 1.0 } else { 0.0 }) - probs[l + 1]);
                    for a in 0..p {
                        for b in 0..p {
                            hess[(k * p + a, l * p + b)] += w * row[a] * row[b];
                        }
                    }
                }
            }
        }
        match hess.try_inverse() {
            Some(inv) => {
                if (0..dim).any(|i| !inv[(i, i)].is_finite() || inv[(i, i)] > 1e4) {
                    converged = false;
                }
            }
            None => converged = false,
        }
    }

    let mut log_likelihood = 0.0;
    for (row, &yi) in x.iter().zip(y) {
        let probs = probabilities_at(row, &beta, k1, p);
        log_likelihood += probs[yi].max(1e-300).ln();
    }

    Ok(MultinomialFit {
        n_categories,
        coefficients: (0..k1).map(|k| beta[k * p..(k + 1) * p].to_vec()).collect(),
        log_likelihood,
        iterations,
        converged,
    })
}

/// Stabilization floor for fitted propensities.
pub const PROPENSITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityWeights {
    /// 1 / max(P(observed category), floor), per subject.
    pub weights: Vec<f64>,
    /// How many fitted probabilities hit the floor.
    pub floored: usize,
}

/// Inverse-probability weights from a fitted multinomial model.
pub fn ipw_weights(fit: &MultinomialFit, x: &[Vec<f64>], y: &[usize]) -> Result<PropensityWeights> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("ipw_weights: row/response length mismatch".into()));
    }
    let mut weights = Vec::with_capacity(x.len());
    let mut floored = 0;
    for (row, &yi) in x.iter().zip(y) {
        if yi >= fit.n_categories {
            return Err(Error::InvalidInput(format!("category index {yi} out of range")));
        }
        let probs = fit.probabilities(row);
        let mut p = probs[yi];
        if p < PROPENSITY_FLOOR {
            p = PROPENSITY_FLOOR;
            floored += 1;
        }
        weights.push(1.0 / p);
    }
    Ok(PropensityWeights { weights, floored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_category_matches_logistic() {
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![1.0, (i as f64 - 10.0) / 4.0])
            .collect();
        let y01: Vec<usize> = (0..20).map(|i| usize::from((i * 13) % 7 < 3)).collect();
        let ybool: Vec<bool> = y01.iter().map(|&c| c == 1).collect();
        let mfit = fit_multinomial(&x, &y01, 2).unwrap();
        let lfit = super::super::fit_logistic(&x, &ybool, None).unwrap();
        assert!(mfit.converged && lfit.converged);
        for (a, b) in mfit.coefficients[0].iter().zip(&lfit.coefficients) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(mfit.log_likelihood, lfit.log_likelihood, epsilon = 1e-6);
    }

    #[test]
    fn intercept_only_recovers_category_frequencies() {
        // Counts 5 / 3 / 2 -> beta_1 = ln(3/5), beta_2 = ln(2/5).
        let x: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0]).collect();
        let y: Vec<usize> = [0, 0, 0, 0, 0, 1, 1, 1, 2, 2].to_vec();
        let fit = fit_multinomial(&x, &y, 3).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.coefficients[0][0], (3.0_f64 / 5.0).ln(), epsilon = 1e-7);
        assert_abs_diff_eq!(fit.coefficients[1][0], (2.0_f64 / 5.0).ln(), epsilon = 1e-7);
        let probs = fit.probabilities(&[1.0]);
        assert_abs_diff_eq!(probs[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(probs[1], 0.3, epsilon = 1e-7);
        assert_abs_diff_eq!(probs[2], 0.2, epsilon = 1e-7);
    }

    #[test]
    fn missing_category_flagged_divergent() {
        // Category 2 never observed: its intercept runs to -inf.
        let x: Vec<Vec<f64>> = (0..8).map(|_| vec![1.0]).collect();
        let y: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let fit = fit_multinomial(&x, &y, 3).unwrap();
        assert!(!fit.converged);
    }

    #[test]
    fn ipw_weights_are_inverse_probabilities() {
        let x: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0]).collect();
        let y: Vec<usize> = [0, 0, 0, 0, 0, 1, 1, 1, 2, 2].to_vec();
        let fit = fit_multinomial(&x, &y, 3).unwrap();
        let w = ipw_weights(&fit, &x, &y).unwrap();
        assert_eq!(w.floored, 0);
        assert_abs_diff_eq!(w.weights[0], 2.0, epsilon = 1e-5); // P = 0.5
        assert_abs_diff_eq!(w.weights[5], 1.0 / 0.3, epsilon = 1e-5);
        assert_abs_diff_eq!(w.weights[8], 5.0, epsilon = 1e-5);
    }

    #[test]
    fn ipw_floor_applies() {
        let fit = MultinomialFit {
            n_categories: 2,
            coefficients: vec![vec![-40.0]],
            log_likelihood: 0.0,
            iterations: 1,
            converged: true,
        };
        // P(category 1) = sigmoid(-40) < 1e-6, so the floor kicks in.
        let w = ipw_weights(&fit, &[vec![1.0]], &[1]).unwrap();
        assert_eq!(w.floored, 1);
        assert_abs_diff_eq!(w.weights[0], 1e6, epsilon = 1e-3);
    }

    #[test]
    fn rejects_out_of_range_category() {
        let x: Vec<Vec<f64>> = (0..4).map(|_| vec![1.0]).collect();
        assert!(fit_multinomial(&x, &[0, 1, 2, 3], 3).is_err());
    }
}
