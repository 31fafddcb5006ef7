//! CKD-EPI 2021 race-free eGFR: forward evaluation, back-calculation of
//! creatinine from a target eGFR, and G-stage assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of the 2021 CKD-EPI creatinine refit (race-free).
pub mod ckd_epi_2021 {
    pub const SCALE: f64 = 142.0;
    pub const AGE_FACTOR: f64 = 0.9938;
    pub const FEMALE_FACTOR: f64 = 1.012;
    pub const KAPPA_FEMALE: f64 = 0.7;
    pub const KAPPA_MALE: f64 = 0.9;
    pub const ALPHA_FEMALE: f64 = -0.241;
    pub const ALPHA_MALE: f64 = -0.302;
    pub const BETA: f64 = -1.200;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn parse(s: &str) -> Option<Sex> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M" | "MALE" => Some(Sex::Male),
            "F" | "FEMALE" => Some(Sex::Female),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgfrResult {
    /// mL/min/1.73 m^2
    pub egfr: f64,
    pub creatinine: f64,
    pub age: f64,
    pub sex: Sex,
}

/// eGFR from serum creatinine (mg/dL), age (years) and sex.
pub fn ckd_epi_egfr(scr: f64, age: f64, sex: Sex) -> Result<EgfrResult> {
    if !(scr > 0.0) {
        return Err(Error::InvalidInput(format!(
            "creatinine must be positive, got {scr}"
        )));
    }
    if !(18.0..=120.0).contains(&age) {
        return Err(Error::InvalidInput(format!(
            "age must be in [18, 120], got {age}"
        )));
    }
    use ckd_epi_2021::*;
    let (kappa, alpha) = match sex {
        Sex::Female => (KAPPA_FEMALE, ALPHA_FEMALE),
        Sex::Male => (KAPPA_MALE, ALPHA_MALE),
    };
    let ratio = scr / kappa;
    let mut egfr = SCALE
        * ratio.min(1.0).powf(alpha)
        * ratio.max(1.0).powf(BETA)
        * AGE_FACTOR.powf(age);
    if sex == Sex::Female {
        egfr *= FEMALE_FACTOR;
    }
    Ok(EgfrResult {
        egfr,
        creatinine: scr,
        age,
        sex,
    })
}

const SCR_LO: f64 = 0.01;
const SCR_HI: f64 = 50.0;

/// Creatinine whose eGFR equals `target_egfr`, by bisection on the
/// piecewise-monotone (strictly decreasing) forward expression.
/// Relative accuracy 1e-12 on the bracket.
pub fn back_calculate_scr(target_egfr: f64, age: f64, sex: Sex) -> Result<f64> {
    if !(target_egfr > 0.0) {
        return Err(Error::InvalidInput(format!(
            "target eGFR must be positive, got {target_egfr}"
        )));
    }
    let f = |scr: f64| ckd_epi_egfr(scr, age, sex).map(|r| r.egfr);
    let (hi_val, lo_val) = (f(SCR_LO)?, f(SCR_HI)?);
    // eGFR decreases in scr, so f(SCR_LO) is the maximum attainable.
    if target_egfr > hi_val || target_egfr < lo_val {
        return Err(Error::EgfrUnattainable(target_egfr));
    }
    let (mut lo, mut hi) = (SCR_LO, SCR_HI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > target_egfr {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) / hi < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GStage {
    G1,
    G2,
    G3a,
    G3b,
    G4,
    G5,
}

/// Half-open eGFR intervals: G1 >=90, G2 [60,90), G3a [45,60), G3b [30,45),
/// G4 [15,30), G5 <15.
pub fn assign_g_stage(egfr: f64) -> GStage {
    if egfr >= 90.0 {
        GStage::G1
    } else if egfr >= 60.0 {
        GStage::G2
    } else if egfr >= 45.0 {
        GStage::G3a
    } else if egfr >= 30.0 {
        GStage::G3b
    } else if egfr >= 15.0 {
        GStage::G4
    } else {
        GStage::G5
    }
}
