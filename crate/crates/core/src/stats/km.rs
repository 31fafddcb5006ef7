//! Weighted product-limit (Kaplan-Meier) estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::SurvivalRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub label: String,
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// S(t) just after each event time.
    pub survival: Vec<f64>,
    /// Weighted number at risk at each event time.
    pub at_risk: Vec<f64>,
    /// Weighted events at each event time.
    pub events: Vec<f64>,
}

impl KmCurve {
    /// Survival at time t (step function; 1 before the first event).
    pub fn survival_at(&self, t: f64) -> f64 {
        let mut s = 1.0;
        for (&time, &surv) in self.times.iter().zip(&self.survival) {
            if time <= t {
                s = surv;
            } else {
                break;
            }
        }
        s
    }
}

/// S(t) = prod_{t_i <= t} (1 - d_i / n_i) with weighted event and risk
/// sums. A subject censored at t leaves the risk set after t.
pub fn km_estimate(records: &[SurvivalRecord], label: &str) -> Result<KmCurve> {
    if records.is_empty() {
        return Err(Error::InvalidInput("km_estimate: empty records".into()));
    }
    let total_weight: f64 = records.iter().map(|r| r.weight).sum();
    if total_weight <= 0.0 {
        return Err(Error::InvalidInput("km_estimate: all-zero weights".into()));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].time.total_cmp(&records[b].time));

    let mut times = Vec::new();
    let mut survival = Vec::new();
    let mut at_risk = Vec::new();
    let mut events = Vec::new();

    let mut remaining = total_weight;
    let mut s = 1.0;
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let mut d = 0.0;
        let mut removed = 0.0;
        let mut j = i;
        while j < order.len() && records[order[j]].time == t {
            let r = &records[order[j]];
            if r.event {
                d += r.weight;
            }
            removed += r.weight;
            j += 1;
        }
        if d > 0.0 {
            times.push(t);
            at_risk.push(remaining);
            events.push(d);
            s *= 1.0 - d / remaining;
            survival.push(s.max(0.0));
        }
        remaining -= removed;
        i = j;
    }

    Ok(KmCurve {
        label: label.to_string(),
        times,
        survival,
        at_risk,
        events,
    })
}
