//! Outcome derivation: mortality horizons, disposition, readmission, new
//! KRT, new CKD, CKD progression, and censored survival times.
//!
//! Among-survivor outcomes (readmission, renal outcomes, post-discharge
//! survival) are `None` for hospital deaths so denominators stay honest.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::aki::{EncounterAkiResult, TrajectoryGroup};
use crate::baseline::{CkdStatus, CKD_CHRONICITY_DAYS, CKD_EGFR_THRESHOLD};
use crate::config::{CodeMapConfig, MortalityAnchor};
use crate::egfr::{assign_g_stage, ckd_epi_egfr, GStage};
use crate::ingest::{age_at, Analyte, Disposition, EncounterRecord, Patient};

pub const SURVIVAL_HORIZON_DAYS: i64 = 1095;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSet {
    pub hospital_mortality: bool,
    /// Among hospital survivors only.
    pub death_within_30d_of_discharge: Option<bool>,
    /// Anchored per [`MortalityAnchor`].
    pub mortality_30d: bool,
    pub mortality_1y: bool,
    pub mortality_3y: bool,
    pub disposition: Disposition,
    pub readmission_30d: Option<bool>,
    pub readmission_90d: Option<bool>,
    pub readmission_1y: Option<bool>,
    /// Among survivors without in-stay KRT.
    pub new_krt_90d: Option<bool>,
    pub new_krt_1y: Option<bool>,
    /// Among survivors without index CKD.
    pub new_ckd_90d: Option<bool>,
    pub new_ckd_1y: Option<bool>,
    /// Among survivors with index CKD and a stageable 1-year eGFR.
    pub ckd_progression_1y: Option<bool>,
    /// Trajectory group of the first readmission within 30 days.
    pub readmission_30d_trajectory: Option<TrajectoryGroup>,
    /// Days from discharge to death or censoring, truncated at 3 years.
    pub survival_days: f64,
    pub survival_event: bool,
    /// Death date precedes admission.
    pub data_error: bool,
}

pub struct OutcomeInputs<'a> {
    pub patient: &'a Patient,
    pub encounter: &'a EncounterRecord,
    /// All of the patient's encounters, time-ordered by admission.
    pub patient_encounters: &'a [EncounterRecord],
    pub aki: &'a EncounterAkiResult,
    pub aki_by_encounter: &'a BTreeMap<String, EncounterAkiResult>,
    pub ckd: &'a CkdStatus,
    pub code_map: &'a CodeMapConfig,
    pub anchor: MortalityAnchor,
    /// Administrative end of data coverage; censoring never extends past it.
    pub end_of_data: NaiveDate,
}

fn within(death: NaiveDate, anchor: NaiveDate, days: i64) -> bool {
    death <= anchor + Duration::days(days)
}

/// Earliest date at which the CKD creatinine criterion is met using only
/// post-discharge measurements: the second of two reduced-eGFR values at
/// least the chronicity window apart.
fn creatinine_ckd_met_after(
    patient: &Patient,
    after: NaiveDate,
    age: f64,
    sex: crate::egfr::Sex,
) -> Option<NaiveDate> {
    let mut first_reduced: Option<NaiveDate> = None;
    for lab in &patient.labs {
        if lab.analyte != Analyte::SerumCreatinine || lab.at.date() <= after {
            continue;
        }
        let reduced = ckd_epi_egfr(lab.value, age, sex)
            .map(|r| r.egfr < CKD_EGFR_THRESHOLD)
            .unwrap_or(false);
        if !reduced {
            continue;
        }
        match first_reduced {
            None => first_reduced = Some(lab.at.date()),
            Some(first) => {
                if lab.at.date() - first >= Duration::days(CKD_CHRONICITY_DAYS) {
                    return Some(lab.at.date());
                }
            }
        }
    }
    None
}

pub fn derive_outcomes(inp: &OutcomeInputs) -> OutcomeSet {
    let enc = inp.encounter;
    let discharge = enc.discharge.date();
    let admit = enc.admit.date();
    let death = inp.patient.death_date;
    let data_error = death.map(|d| d < admit).unwrap_or(false);
    let death = if data_error { None } else { death };

    let hospital_mortality = enc.disposition == Disposition::Expired
        || death.map(|d| d >= admit && d <= discharge).unwrap_or(false);

    let anchor_date = match inp.anchor {
        MortalityAnchor::Admission => admit,
        MortalityAnchor::Discharge => discharge,
    };
    let mortality_30d = death.map(|d| within(d, anchor_date, 30)).unwrap_or(false)
        || (hospital_mortality && death.is_none() && within(discharge, anchor_date, 30));
    let mortality_1y = death.map(|d| within(d, anchor_date, 365)).unwrap_or(false)
        || (hospital_mortality && death.is_none());
    let mortality_3y = death.map(|d| within(d, anchor_date, 1095)).unwrap_or(false)
        || (hospital_mortality && death.is_none());

    let death_within_30d_of_discharge = if hospital_mortality {
        None
    } else {
        Some(death.map(|d| d > discharge && within(d, discharge, 30)).unwrap_or(false))
    };

    let survivor = !hospital_mortality;

    // Readmission: any later admission within the window.
    let readmit_within = |days: i64| -> Option<bool> {
        if !survivor {
            return None;
        }
        Some(inp.patient_encounters.iter().any(|e| {
            e.encounter_id != enc.encounter_id
                && e.admit > enc.discharge
                && e.admit.date() <= discharge + Duration::days(days)
        }))
    };
    let readmission_30d = readmit_within(30);
    let readmission_90d = readmit_within(90);
    let readmission_1y = readmit_within(365);

    let readmission_30d_trajectory = if survivor {
        inp.patient_encounters
            .iter()
            .filter(|e| {
                e.encounter_id != enc.encounter_id
                    && e.admit > enc.discharge
                    && e.admit.date() <= discharge + Duration::days(30)
            })
            .min_by_key(|e| e.admit)
            .and_then(|e| inp.aki_by_encounter.get(&e.encounter_id))
            .map(|r| r.trajectory_group)
    } else {
        None
    };

    // New KRT among survivors with no KRT on the index admission.
    let new_krt_within = |days: i64| -> Option<bool> {
        if !survivor || inp.aki.krt {
            return None;
        }
        Some(inp.patient.coded_events.iter().any(|ev| {
            ev.date > discharge
                && ev.date <= discharge + Duration::days(days)
                && inp.code_map.krt.matches(&ev.code)
        }))
    };
    let new_krt_90d = new_krt_within(90);
    let new_krt_1y = new_krt_within(365);

    let age = age_at(inp.patient.birth_date, admit) as f64;
    let age = age.clamp(18.0, 120.0);

    // New CKD among survivors without index CKD: first CKD diagnosis or
    // transplant code, or the creatinine criterion first met, after
    // discharge and within the window.
    let ckd_met_date: Option<NaiveDate> = if survivor && !inp.ckd.is_present() {
        let code_date = inp
            .patient
            .coded_events
            .iter()
            .filter(|ev| {
                ev.date > discharge
                    && (inp.code_map.ckd_history.matches(&ev.code)
                        || inp.code_map.kidney_transplant.matches(&ev.code))
            })
            .map(|ev| ev.date)
            .min();
        let lab_date = creatinine_ckd_met_after(inp.patient, discharge, age, inp.patient.sex);
        match (code_date, lab_date) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    } else {
        None
    };
    let new_ckd = |days: i64| -> Option<bool> {
        if !survivor || inp.ckd.is_present() {
            return None;
        }
        Some(ckd_met_date.map(|d| d <= discharge + Duration::days(days)).unwrap_or(false))
    };
    let new_ckd_90d = new_ckd(90);
    let new_ckd_1y = new_ckd(365);

    // CKD progression: 1-year G stage strictly worse than index stage,
    // staged from the latest creatinine in the year after discharge.
    let ckd_progression_1y = if survivor && inp.ckd.is_present() {
        let index_stage = inp.ckd.g_stage;
        let year_stage: Option<GStage> = inp
            .patient
            .labs
            .iter()
            .filter(|l| {
                l.analyte == Analyte::SerumCreatinine
                    && l.at.date() > discharge
                    && l.at.date() <= discharge + Duration::days(365)
            })
            .max_by_key(|l| l.at)
            .and_then(|l| ckd_epi_egfr(l.value, age, inp.patient.sex).ok())
            .map(|r| assign_g_stage(r.egfr));
        match (index_stage, year_stage) {
            (Some(ix), Some(yr)) => Some(yr > ix),
            _ => None,
        }
    } else {
        None
    };

    // Post-discharge survival, truncated at the 3-year horizon.
    let (survival_days, survival_event) = if !survivor {
        (0.0, false)
    } else {
        let horizon = SURVIVAL_HORIZON_DAYS;
        match death {
            Some(d) => {
                let t = (d - discharge).num_days();
                if t <= horizon {
                    (t.max(0) as f64, true)
                } else {
                    (horizon as f64, false)
                }
            }
            None => {
                let last_activity = last_known_activity(inp.patient, inp.end_of_data);
                let t = (last_activity - discharge).num_days().max(0).min(horizon);
                (t as f64, false)
            }
        }
    };

    OutcomeSet {
        hospital_mortality,
        death_within_30d_of_discharge,
        mortality_30d,
        mortality_1y,
        mortality_3y,
        disposition: enc.disposition,
        readmission_30d,
        readmission_90d,
        readmission_1y,
        new_krt_90d,
        new_krt_1y,
        new_ckd_90d,
        new_ckd_1y,
        ckd_progression_1y,
        readmission_30d_trajectory,
        survival_days,
        survival_event,
        data_error,
    }
}

/// Censoring date: the later of the patient's last recorded EHR activity
/// and the administrative end of death-data coverage (absence of a death
/// record means alive through that date).
fn last_known_activity(patient: &Patient, end_of_data: NaiveDate) -> NaiveDate {
    let lab_max = patient.labs.iter().map(|l| l.at.date()).max();
    let code_max = patient.coded_events.iter().map(|e| e.date).max();
    let med_max = patient.medications.iter().map(|m| m.date).max();
    [lab_max, code_max, med_max]
        .into_iter()
        .flatten()
        .max()
        .map_or(end_of_data, |a| a.max(end_of_data))
}
