//! Cox proportional hazards: weighted partial likelihood, Efron or
//! Breslow tie handling, Wald intervals on the hazard-ratio scale, and
//! Harrell's concordance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{
    collinear_columns, ModelFit, SurvivalRecord, DIVERGENCE_BOUND, GRADIENT_TOL, MAX_ITERATIONS,
    STEP_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieMethod {
    Efron,
    Breslow,
}

impl Default for TieMethod {
    fn default() -> Self {
        TieMethod::Efron
    }
}

impl std::str::FromStr for TieMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<TieMethod> {
        match s.to_ascii_lowercase().as_str() {
            "efron" => Ok(TieMethod::Efron),
            "breslow" => Ok(TieMethod::Breslow),
            other => Err(Error::InvalidInput(format!("unknown tie method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub fit: ModelFit,
    pub tie_method: TieMethod,
    pub hazard_ratios: Vec<f64>,
    /// 95% Wald interval bounds, exp(beta +/- 1.96 se).
    pub hr_ci_lower: Vec<f64>,
    pub hr_ci_upper: Vec<f64>,
    /// Harrell's C on the linear predictor; ties in risk score count 1/2.
    pub concordance: f64,
    pub n_events: usize,
    /// True when a coefficient ran off to +/- infinity (monotone partial
    /// likelihood, e.g. a group with no events).
    pub monotone_likelihood: bool,
}

struct Grouped {
    /// Distinct times ascending; per time: indices entering the death set
    /// and the full record list sorted by time descending for risk sums.
    event_times: Vec<f64>,
    deaths_at: Vec<Vec<usize>>,
    order_desc: Vec<usize>,
}

fn group_events(records: &[SurvivalRecord]) -> Grouped {
    let mut times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut deaths_at: Vec<Vec<usize>> = vec![Vec::new(); times.len()];
    for (i, r) in records.iter().enumerate() {
        if r.event {
            let t_idx = times.partition_point(|&t| t < r.time);
            deaths_at[t_idx].push(i);
        }
    }
    let mut order_desc: Vec<usize> = (0..records.len()).collect();
    order_desc.sort_by(|&a, &b| {
        records[b].time.total_cmp(&records[a].time).then(a.cmp(&b))
    });
    Grouped {
        event_times: times,
        deaths_at,
        order_desc,
    }
}

/// Negative log partial likelihood pieces: (loglik, gradient, hessian).
fn partial_likelihood(
    records: &[SurvivalRecord],
    beta: &[f64],
    tie_method: TieMethod,
    grouped: &Grouped,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = beta.len();
    let mut loglik = 0.0;
    let mut grad = DVector::<f64>::zeros(p);
    let mut hess = DMatrix::<f64>::zeros(p, p);

    let etas: Vec<f64> = records
        .iter()
        .map(|r| r.covariates.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect();

    // Risk-set sums S0, S1, S2 maintained incrementally: sweep event
    // times from latest to earliest, admitting each record once when its
    // time enters the risk set (r.time >= t).
    let mut s0 = 0.0;
    let mut s1 = DVector::<f64>::zeros(p);
    let mut s2 = DMatrix::<f64>::zeros(p, p);
    let mut next = 0usize;
    for (t_idx, &t) in grouped.event_times.iter().enumerate().rev() {
        while next < grouped.order_desc.len() {
            let i = grouped.order_desc[next];
            let r = &records[i];
            if r.time < t {
                break;
            }
            let we = r.weight * etas[i].exp();
            s0 += we;
            for a in 0..p {
                s1[a] += we * r.covariates[a];
                for b in 0..p {
                    s2[(a, b)] += we * r.covariates[a] * r.covariates[b];
                }
            }
            next += 1;
        }

        let deaths = &grouped.deaths_at[t_idx];
        let m = deaths.len() as f64;
        let wbar: f64 = deaths.iter().map(|&i| records[i].weight).sum::<f64>() / m;

        // Death-set sums for the Efron correction.
        let mut d0 = 0.0;
        let mut d1 = DVector::<f64>::zeros(p);
        let mut d2 = DMatrix::<f64>::zeros(p, p);
        for &i in deaths {
            let r = &records[i];
            let we = r.weight * etas[i].exp();
            d0 += we;
            for a in 0..p {
                d1[a] += we * r.covariates[a];
                for b in 0..p {
                    d2[(a, b)] += we * r.covariates[a] * r.covariates[b];
                }
            }
            loglik += r.weight * etas[i];
            for a in 0..p {
                grad[a] += r.weight * r.covariates[a];
            }
        }

        match tie_method {
            TieMethod::Breslow => {
                let dw: f64 = m * wbar;
                loglik -= dw * s0.ln();
                let mean = &s1 / s0;
                grad -= dw * &mean;
                hess += dw * (&s2 / s0 - &mean * mean.transpose());
            }
            TieMethod::Efron => {
                let m_usize = deaths.len();
                for l in 0..m_usize {
                    let f = l as f64 / m;
                    let e0 = s0 - f * d0;
                    let e1 = &s1 - f * &d1;
                    let e2 = &s2 - f * &d2;
                    loglik -= wbar * e0.ln();
                    let mean = &e1 / e0;
                    grad -= wbar * &mean;
                    hess += wbar * (&e2 / e0 - &mean * mean.transpose());
                }
            }
        }
    }
    (loglik, grad, hess)
}

/// Harrell's C for a linear predictor: among pairs where ordering of
/// survival is known, the fraction where the shorter-lived subject has
/// the higher risk score. Risk-score ties count one half.
pub fn harrell_c(records: &[SurvivalRecord], scores: &[f64]) -> Result<f64> {
    if records.len() != scores.len() {
        return Err(Error::InvalidInput("harrell_c: length mismatch".into()));
    }
    let mut comparable = 0.0_f64;
    let mut concordant = 0.0_f64;
    for i in 0..records.len() {
        if !records[i].event {
            continue;
        }
        for j in 0..records.len() {
            if i == j {
                continue;
            }
            // i died at t_i; j outlived t_i (strictly later, or censored
            // at exactly t_i). Tied death times are not comparable.
            let later = records[j].time > records[i].time
                || (records[j].time == records[i].time && !records[j].event);
            if !later {
                continue;
            }
            comparable += 1.0;
            if scores[i] > scores[j] {
                concordant += 1.0;
            } else if scores[i] == scores[j] {
                concordant += 0.5;
            }
        }
    }
    if comparable == 0.0 {
        return Err(Error::InvalidInput(
            "harrell_c: no comparable pairs (no events?)".into(),
        ));
    }
    Ok(concordant / comparable)
}

/// Log partial likelihood and its analytic gradient at `beta`, exposed
/// for oracle and finite-difference verification.
pub fn cox_log_likelihood(
    records: &[SurvivalRecord],
    beta: &[f64],
    tie_method: TieMethod,
) -> Result<(f64, Vec<f64>)> {
    if records.is_empty() || records.iter().any(|r| r.covariates.len() != beta.len()) {
        return Err(Error::InvalidInput(
            "cox_log_likelihood: covariate/beta dimension mismatch".into(),
        ));
    }
    let grouped = group_events(records);
    let (ll, grad, _) = partial_likelihood(records, beta, tie_method, &grouped);
    Ok((ll, grad.iter().copied().collect()))
}

pub fn fit_cox(records: &[SurvivalRecord], tie_method: TieMethod) -> Result<CoxFit> {
    if records.is_empty() {
        return Err(Error::InvalidInput("fit_cox: empty records".into()));
    }
    let p = records[0].covariates.len();
    if p == 0 {
        return Err(Error::InvalidInput("fit_cox: no covariates".into()));
    }
    if records.iter().any(|r| r.covariates.len() != p) {
        return Err(Error::InvalidInput("fit_cox: ragged covariate rows".into()));
    }
    if records.iter().any(|r| !(r.weight > 0.0)) {
        return Err(Error::InvalidInput("fit_cox: weights must be positive".into()));
    }
    // There is no intercept, so a constant column is unidentifiable and
    // collinearity is checked on centered covariates.
    let mut means = vec![0.0_f64; p];
    for r in records {
        for (m, &c) in means.iter_mut().zip(&r.covariates) {
            *m += c;
        }
    }
    for m in &mut means {
        *m /= records.len() as f64;
    }
    let centered: Vec<Vec<f64>> = records
        .iter()
        .map(|r| r.covariates.iter().zip(&means).map(|(c, m)| c - m).collect())
        .collect();
    let constant: Vec<usize> = (0..p)
        .filter(|&j| {
            records
                .iter()
                .all(|r| r.covariates[j] == records[0].covariates[j])
        })
        .collect();
    if !constant.is_empty() {
        return Err(Error::RankDeficient(constant));
    }
    let bad = collinear_columns(&centered);
    if !bad.is_empty() {
        return Err(Error::RankDeficient(bad));
    }
    let n_events = records.iter().filter(|r| r.event).count();
    if n_events == 0 {
        return Err(Error::InvalidInput("fit_cox: no events".into()));
    }

    let grouped = group_events(records);
    let mut beta = vec![0.0_f64; p];
    let mut iterations = 0;
    let mut converged = false;
    let mut last = partial_likelihood(records, &beta, tie_method, &grouped);

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        let (_, ref grad, ref hess) = last;
        let Some(step) = hess.clone().lu().solve(grad) else {
            break;
        };
        // Step-halving keeps the likelihood from decreasing.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let candidate: Vec<f64> =
                beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let trial = partial_likelihood(records, &candidate, tie_method, &grouped);
            // Tolerance scales with the likelihood magnitude so that
            // floating-point noise on large cohorts cannot veto a step.
            if trial.0 >= last.0 - 1e-12 * (1.0 + last.0.abs()) {
                beta = candidate;
                last = trial;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        let max_grad = last.1.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let max_step = step.iter().fold(0.0_f64, |m, v| m.max((scale * v).abs()));
        if max_grad < GRADIENT_TOL || max_step < STEP_TOL {
            converged = true;
            break;
        }
    }

    let covariance = match last.2.clone().try_inverse() {
        Some(inv) => (0..p).map(|i| (0..p).map(|j| inv[(i, j)]).collect()).collect(),
        None => vec![vec![f64::NAN; p]; p],
    };
    let mut fit = ModelFit {
        coefficients: beta.clone(),
        covariance,
        log_likelihood: last.0,
        iterations,
        converged,
    };
    let se = fit.standard_errors();
    // A runaway coefficient, or an information matrix so flat that the
    // Wald SE is astronomical (or not computable), means the partial
    // likelihood is monotone -- e.g. a covariate level with no events.
    let monotone = beta.iter().any(|b| b.abs() > DIVERGENCE_BOUND)
        || se.iter().any(|s| !s.is_finite() || *s > 100.0);
    if monotone {
        fit.converged = false;
    }
    let hazard_ratios: Vec<f64> = beta.iter().map(|b| b.exp()).collect();
    let hr_ci_lower: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| (b - 1.96 * s).exp()).collect();
    let hr_ci_upper: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| (b + 1.96 * s).exp()).collect();

    let scores: Vec<f64> = records
        .iter()
        .map(|r| r.covariates.iter().zip(&beta).map(|(a, b)| a * b).sum())
        .collect();
    let concordance = harrell_c(records, &scores)?;

    Ok(CoxFit {
        fit,
        tie_method,
        hazard_ratios,
        hr_ci_lower,
        hr_ci_upper,
        concordance,
        n_events,
        monotone_likelihood: monotone,
    })
}
