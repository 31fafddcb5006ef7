//! Logistic regression by Newton-Raphson (IRLS), with optional case
//! weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::{collinear_columns, ModelFit, DIVERGENCE_BOUND, GRADIENT_TOL, MAX_ITERATIONS, STEP_TOL};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weighted log-likelihood at `beta`.
pub fn logistic_log_likelihood(x: &[Vec<f64>], y: &[bool], weights: Option<&[f64]>, beta: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .enumerate()
        .map(|(i, (row, &yi))| {
            let w = weights.map_or(1.0, |w| w[i]);
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            // log p = eta - log(1 + e^eta); log(1-p) = -log(1 + e^eta)
            let log1pe = if eta > 30.0 { eta } else { (1.0 + eta.exp()).ln() };
            w * (if yi { eta } else { 0.0 } - log1pe)
        })
        .sum()
}

/// Analytic gradient of the weighted log-likelihood.
pub fn logistic_gradient(x: &[Vec<f64>], y: &[bool], weights: Option<&[f64]>, beta: &[f64]) -> Vec<f64> {
    let p = beta.len();
    let mut grad = vec![0.0; p];
    for (i, (row, &yi)) in x.iter().zip(y).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let mu = sigmoid(eta);
        let r = w * ((yi as u8 as f64) - mu);
        for j in 0..p {
            grad[j] += r * row[j];
        }
    }
    grad
}

/// Maximum-likelihood fit. The design matrix must include the intercept
/// column. Non-convergence (including separation, detected as divergent
/// coefficients) is reported via the `converged` flag, never silently.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], weights: Option<&[f64]>) -> Result<ModelFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "design has {} rows but response has {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::InvalidInput("empty design matrix".into()));
    }
    if let Some(w) = weights {
        if w.len() != x.len() || w.iter().any(|&wi| !(wi > 0.0)) {
            return Err(Error::InvalidInput("weights must be positive, one per row".into()));
        }
    }
    let bad = collinear_columns(x);
    if !bad.is_empty() {
        return Err(Error::RankDeficient(bad));
    }

    let p = x[0].len();
    let mut beta = vec![0.0_f64; p];
    let mut iterations = 0;
    let mut converged = false;

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        let grad = logistic_gradient(x, y, weights, &beta);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for (i, row) in x.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = sigmoid(eta);
            let wi = w * mu * (1.0 - mu);
            for a in 0..p {
                for b in 0..p {
                    hess[(a, b)] += wi * row[a] * row[b];
                }
            }
        }
        let g = DVector::from_column_slice(&grad);
        let Some(step) = hess.clone().lu().solve(&g) else {
            break;
        };
        for j in 0..p {
            beta[j] += step[j];
        }
        let max_grad = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let max_step = step.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max_grad < GRADIENT_TOL || max_step < STEP_TOL {
            converged = true;
            break;
        }
    }

    let covariance = observed_information_inverse(x, weights, &beta, p);
    // Separation (or an all-one/all-zero response) drives a coefficient
    // toward infinity; the gradient still shrinks below tolerance, so
    // catch it by coefficient magnitude or an exploding Wald SE.
    if beta.iter().any(|b| b.abs() > DIVERGENCE_BOUND)
        || covariance
            .iter()
            .enumerate()
            .any(|(i, row)| !row[i].is_finite() || row[i] > 1e4)
    {
        converged = false;
    }
    Ok(ModelFit {
        log_likelihood: logistic_log_likelihood(x, y, weights, &beta),
        coefficients: beta,
        covariance,
        iterations,
        converged,
    })
}

fn observed_information_inverse(
    x: &[Vec<f64>],
    weights: Option<&[f64]>,
    beta: &[f64],
    p: usize,
) -> Vec<Vec<f64>> {
    let mut hess = DMatrix::<f64>::zeros(p, p);
    for (i, row) in x.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let mu = sigmoid(eta);
        let wi = w * mu * (1.0 - mu);
        for a in 0..p {
            for b in 0..p {
                hess[(a, b)] += wi * row[a] * row[b];
            }
        }
    }
    match hess.try_inverse() {
        Some(inv) => (0..p).map(|i| (0..p).map(|j| inv[(i, j)]).collect()).collect(),
        None => vec![vec![f64::NAN; p]; p],
    }
}
