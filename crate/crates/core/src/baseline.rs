//! Reference-creatinine determination and CKD status.
//!
//! The reference cascade prefers measured preadmission baselines: minimum
//! creatinine in the 7 days before admission, then the median of the
//! 8-365 day window, then the admission-day value, then (no CKD only) a
//! creatinine back-calculated from an assumed eGFR of 75, and finally the
//! first in-stay creatinine.

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::codes::CodeList;
use crate::config::CodeMapConfig;
use crate::egfr::{assign_g_stage, back_calculate_scr, ckd_epi_egfr, GStage, Sex};
use crate::error::Result;
use crate::ingest::{age_at, Analyte, CreatinineSeries, EncounterRecord, EventContext, Patient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMethod {
    Admission,
    MinPrior7d,
    MedianPrior8To365d,
    EstimatedCkdEpi,
    FirstCreatinine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCreatinine {
    /// mg/dL
    pub value: f64,
    pub method: ReferenceMethod,
    /// The time the reference is considered to hold.
    pub anchor: NaiveDateTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CkdPresence {
    Yes,
    No,
    InsufficientData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CkdBasis {
    MedicalHistory,
    CreatinineCriteria,
    PostTransplant,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AkdState {
    None,
    RecoveredRecentAki,
    NonRecoveredRecentAki,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CkdStatus {
    pub present: CkdPresence,
    pub basis: CkdBasis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_stage: Option<GStage>,
    pub akd_on_admission: AkdState,
}

impl CkdStatus {
    pub fn is_present(&self) -> bool {
        self.present == CkdPresence::Yes
    }
}

/// Chronicity window for CKD by creatinine: reduced eGFR on at least two
/// preadmission measurements at least this many days apart.
pub const CKD_CHRONICITY_DAYS: i64 = 90;
/// Recent-AKI (AKD) lookback before admission.
pub const AKD_LOOKBACK_DAYS: i64 = 90;
/// Reduced-eGFR threshold for CKD by creatinine.
pub const CKD_EGFR_THRESHOLD: f64 = 60.0;

fn preadmission_scr(patient: &Patient, admit: NaiveDateTime) -> Vec<(NaiveDateTime, f64)> {
    patient
        .labs
        .iter()
        .filter(|l| l.analyte == Analyte::SerumCreatinine && l.at < admit)
        .map(|l| (l.at, l.value))
        .collect()
}

fn any_code_before(
    patient: &Patient,
    list: &CodeList,
    admit: NaiveDateTime,
    lookback_days: Option<i64>,
) -> bool {
    let admit_date = admit.date();
    patient.coded_events.iter().any(|ev| {
        ev.date < admit_date
            && lookback_days
                .map(|d| ev.date >= admit_date - Duration::days(d))
                .unwrap_or(true)
            && list.matches(&ev.code)
    })
}

/// CKD presence, basis and AKD-on-admission state from preadmission codes
/// and labs.
pub fn identify_ckd(
    patient: &Patient,
    enc: &EncounterRecord,
    code_map: &CodeMapConfig,
) -> CkdStatus {
    let admit = enc.admit;
    let history = preadmission_scr(patient, admit);
    let age = age_at(patient.birth_date, admit.date()) as f64;

    let basis = if any_code_before(patient, &code_map.ckd_history, admit, None) {
        Some(CkdBasis::MedicalHistory)
    } else if sustained_reduced_egfr(&history, age, patient.sex) {
        Some(CkdBasis::CreatinineCriteria)
    } else if patient.coded_events.iter().any(|ev| {
        ev.date < admit.date() && code_map.kidney_transplant.matches(&ev.code)
    }) {
        Some(CkdBasis::PostTransplant)
    } else {
        None
    };

    let present = match basis {
        Some(_) => CkdPresence::Yes,
        None => {
            let any_history_codes = patient
                .coded_events
                .iter()
                .any(|ev| ev.date < admit.date() && ev.context == EventContext::Diagnosis);
            if history.is_empty() && !any_history_codes {
                CkdPresence::InsufficientData
            } else {
                CkdPresence::No
            }
        }
    };

    let akd_on_admission = if any_code_before(
        patient,
        &code_map.aki_history,
        admit,
        Some(AKD_LOOKBACK_DAYS),
    ) {
        akd_recovery_state(&history, admit)
    } else {
        AkdState::None
    };

    CkdStatus {
        present,
        basis: basis.unwrap_or(CkdBasis::None),
        g_stage: None,
        akd_on_admission,
    }
}

fn sustained_reduced_egfr(history: &[(NaiveDateTime, f64)], age: f64, sex: Sex) -> bool {
    if !(18.0..=120.0).contains(&age) {
        return false;
    }
    let reduced: Vec<NaiveDateTime> = history
        .iter()
        .filter(|(_, scr)| {
            ckd_epi_egfr(*scr, age, sex)
                .map(|r| r.egfr < CKD_EGFR_THRESHOLD)
                .unwrap_or(false)
        })
        .map(|(t, _)| *t)
        .collect();
    match (reduced.iter().min(), reduced.iter().max()) {
        (Some(first), Some(last)) => *last - *first >= Duration::days(CKD_CHRONICITY_DAYS),
        _ => false,
    }
}

/// Recovered vs non-recovered recent AKI: the latest preadmission
/// creatinine is compared to the preadmission baseline (median of the
/// 8-365 day window, else the 7-day minimum). Non-recovered when it still
/// meets an AKI criterion (>= 1.5x or +0.3 mg/dL). When no baseline or no
/// recent value can be evaluated, the episode counts as recovered.
fn akd_recovery_state(history: &[(NaiveDateTime, f64)], admit: NaiveDateTime) -> AkdState {
    let latest = history.iter().max_by_key(|(t, _)| *t);
    let baseline = median_window(history, admit, 365, 7)
        .or_else(|| min_window(history, admit, 7));
    match (latest, baseline) {
        (Some((_, latest_value)), Some(base)) if base > 0.0 => {
            if *latest_value >= 1.5 * base || *latest_value - base >= 0.3 {
                AkdState::NonRecoveredRecentAki
            } else {
                AkdState::RecoveredRecentAki
            }
        }
        _ => AkdState::RecoveredRecentAki,
    }
}

fn min_window(history: &[(NaiveDateTime, f64)], admit: NaiveDateTime, days: i64) -> Option<f64> {
    history
        .iter()
        .filter(|(t, _)| *t >= admit - Duration::days(days) && *t < admit)
        .map(|(_, v)| *v)
        .min_by(f64::total_cmp)
}

fn median_window(
    history: &[(NaiveDateTime, f64)],
    admit: NaiveDateTime,
    outer_days: i64,
    inner_days: i64,
) -> Option<f64> {
    let mut values: Vec<f64> = history
        .iter()
        .filter(|(t, _)| {
            *t >= admit - Duration::days(outer_days) && *t < admit - Duration::days(inner_days)
        })
        .map(|(_, v)| *v)
        .collect();
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub const ASSUMED_BASELINE_EGFR: f64 = 75.0;
/// Admission-day creatinine = earliest measurement within this many hours
/// after admit.
const ADMISSION_WINDOW_HOURS: i64 = 24;

/// The reference-creatinine cascade. Total for encounters that passed the
/// cohort filters (which guarantee an in-stay creatinine).
pub fn determine_reference_creatinine(
    patient: &Patient,
    enc: &EncounterRecord,
    series: &CreatinineSeries,
    ckd: &CkdStatus,
) -> Result<ReferenceCreatinine> {
    let admit = enc.admit;
    let history = preadmission_scr(patient, admit);

    if let Some(min7) = min_window(&history, admit, 7) {
        return Ok(ReferenceCreatinine {
            value: min7,
            method: ReferenceMethod::MinPrior7d,
            anchor: admit,
        });
    }
    if let Some(median) = median_window(&history, admit, 365, 7) {
        return Ok(ReferenceCreatinine {
            value: median,
            method: ReferenceMethod::MedianPrior8To365d,
            anchor: admit,
        });
    }
    let admission_day = series
        .points
        .iter()
        .find(|(t, _)| *t <= admit + Duration::hours(ADMISSION_WINDOW_HOURS));
    if let Some((t, v)) = admission_day {
        return Ok(ReferenceCreatinine {
            value: *v,
            method: ReferenceMethod::Admission,
            anchor: *t,
        });
    }
    if !ckd.is_present() {
        let age = age_at(patient.birth_date, admit.date()) as f64;
        let age = age.clamp(18.0, 120.0);
        let value = back_calculate_scr(ASSUMED_BASELINE_EGFR, age, patient.sex)?;
        return Ok(ReferenceCreatinine {
            value,
            method: ReferenceMethod::EstimatedCkdEpi,
            anchor: admit,
        });
    }
    let (t, v) = series.points.first().ok_or_else(|| {
        crate::error::Error::InvalidInput(format!(
            "encounter {} has no in-stay creatinine; cohort filters not applied?",
            enc.encounter_id
        ))
    })?;
    Ok(ReferenceCreatinine {
        value: *v,
        method: ReferenceMethod::FirstCreatinine,
        anchor: *t,
    })
}

/// Fill the G stage from the reference creatinine and age at admission.
pub fn stage_ckd(
    status: &mut CkdStatus,
    reference: &ReferenceCreatinine,
    patient: &Patient,
    enc: &EncounterRecord,
) {
    let age = age_at(patient.birth_date, enc.admit.date()) as f64;
    if let Ok(r) = ckd_epi_egfr(reference.value, age.clamp(18.0, 120.0), patient.sex) {
        status.g_stage = Some(assign_g_stage(r.egfr));
    }
}
