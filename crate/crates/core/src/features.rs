//! Code-driven feature extraction: Charlson comorbidity index, comorbidity
//! and therapy flags, and nephrotoxic-drug-group exposure counts.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::aki::KrtInterval;
use crate::codes::CodeList;
use crate::config::CodeMapConfig;
use crate::ingest::{CodedEvent, EncounterRecord, MedicationEvent, Patient};

/// Diagnosis lookback for comorbidities, days before admission.
pub const COMORBIDITY_LOOKBACK_DAYS: i64 = 365;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EncounterFeatures {
    pub cci: u32,
    pub hypertension: bool,
    pub chronic_pulmonary: bool,
    pub cardiovascular: bool,
    pub diabetes: bool,
    pub ckd_history: bool,
    pub icu: bool,
    pub mechanical_ventilation: bool,
    pub vasopressor_inotrope: bool,
    /// Distinct nephrotoxic groups with exposure in [admit, admit+2d).
    pub nephrotoxins_2d: u32,
    /// Distinct nephrotoxic groups with exposure in [admit, admit+3d).
    pub nephrotoxins_3d: u32,
    /// Distinct nephrotoxic groups with exposure in [admit, first AKI
    /// onset); 0 when no AKI.
    pub nephrotoxins_to_aki_onset: u32,
}

fn in_lookback(ev: &CodedEvent, admit: NaiveDate, days: i64) -> bool {
    ev.date < admit && ev.date >= admit - Duration::days(days)
}

/// Sum of weights of distinct Charlson categories matched by any
/// diagnosis code in the lookback window, hierarchy rules applied
/// (a category contributes nothing when its superseding category also
/// matched).
pub fn charlson_score(
    events: &[CodedEvent],
    admit: NaiveDate,
    lookback_days: i64,
    config: &CodeMapConfig,
) -> u32 {
    let matched: Vec<bool> = config
        .charlson
        .iter()
        .map(|cat| {
            events.iter().any(|ev| {
                ev.context == crate::ingest::EventContext::Diagnosis
                    && in_lookback(ev, admit, lookback_days)
                    && cat.list.matches(&ev.code)
            })
        })
        .collect();
    config
        .charlson
        .iter()
        .zip(&matched)
        .filter(|(cat, hit)| {
            **hit
                && cat.superseded_by.as_ref().map_or(true, |sup| {
                    !config
                        .charlson
                        .iter()
                        .zip(&matched)
                        .any(|(c, h)| *h && c.name == *sup)
                })
        })
        .map(|(cat, _)| cat.weight)
        .sum()
}

/// True iff any event dated within the stay matches the list.
pub fn detect_code_flag(
    events: &[CodedEvent],
    enc: &EncounterRecord,
    list: &CodeList,
) -> bool {
    let (start, end) = (enc.admit.date(), enc.discharge.date());
    events
        .iter()
        .any(|ev| ev.date >= start && ev.date <= end && list.matches(&ev.code))
}

fn medication_matches(ev: &MedicationEvent, patterns: &[String]) -> bool {
    patterns
        .iter()
        .any(|p| ev.name.contains(p.as_str()) || ev.class.contains(p.as_str()))
}

/// Count of distinct nephrotoxic groups with at least one medication
/// event dated in the half-open window [start, end), at day granularity.
pub fn nephrotoxin_group_count(
    medications: &[MedicationEvent],
    config: &CodeMapConfig,
    start: NaiveDateTime,
    end: NaiveDateTime,
) -> u32 {
    if end <= start {
        return 0;
    }
    let (start, end) = (start.date(), end.date());
    config
        .nephrotoxins
        .iter()
        .filter(|group| {
            medications
                .iter()
                .any(|m| m.date >= start && m.date < end && medication_matches(m, &group.patterns))
        })
        .count() as u32
}

/// KRT-active intervals from in-stay procedure codes: each matching event
/// day becomes a whole-day interval.
pub fn krt_intervals(
    events: &[CodedEvent],
    enc: &EncounterRecord,
    config: &CodeMapConfig,
) -> Vec<KrtInterval> {
    let (start, end) = (enc.admit.date(), enc.discharge.date());
    let mut days: Vec<NaiveDate> = events
        .iter()
        .filter(|ev| ev.date >= start && ev.date <= end && config.krt.matches(&ev.code))
        .map(|ev| ev.date)
        .collect();
    days.sort();
    days.dedup();
    days.into_iter()
        .map(|d| KrtInterval {
            start: d.and_hms_opt(0, 0, 0).unwrap(),
            end: d.and_hms_opt(23, 59, 59).unwrap(),
        })
        .collect()
}

/// All code- and medication-derived features for one encounter.
pub fn compute_features(
    patient: &Patient,
    enc: &EncounterRecord,
    config: &CodeMapConfig,
    first_aki_onset: Option<NaiveDateTime>,
) -> EncounterFeatures {
    let admit_date = enc.admit.date();
    let flag = |list: &CodeList| {
        patient.coded_events.iter().any(|ev| {
            ev.context == crate::ingest::EventContext::Diagnosis
                && in_lookback(ev, admit_date, COMORBIDITY_LOOKBACK_DAYS)
                && list.matches(&ev.code)
        })
    };
    let vaso_group = config
        .nephrotoxins
        .iter()
        .find(|g| g.name == "vasopressors_inotropes");
    let vasopressor_inotrope = vaso_group.is_some_and(|g| {
        patient.medications.iter().any(|m| {
            m.date >= admit_date && m.date <= enc.discharge.date() && medication_matches(m, &g.patterns)
        })
    });

    EncounterFeatures {
        cci: charlson_score(
            &patient.coded_events,
            admit_date,
            COMORBIDITY_LOOKBACK_DAYS,
            config,
        ),
        hypertension: flag(&config.hypertension),
        chronic_pulmonary: flag(&config.chronic_pulmonary),
        cardiovascular: flag(&config.cardiovascular),
        diabetes: flag(&config.diabetes),
        ckd_history: flag(&config.ckd_history),
        icu: detect_code_flag(&patient.coded_events, enc, &config.icu),
        mechanical_ventilation: detect_code_flag(
            &patient.coded_events,
            enc,
            &config.mechanical_ventilation,
        ),
        vasopressor_inotrope,
        nephrotoxins_2d: nephrotoxin_group_count(
            &patient.medications,
            config,
            enc.admit,
            enc.admit + Duration::days(2),
        ),
        nephrotoxins_3d: nephrotoxin_group_count(
            &patient.medications,
            config,
            enc.admit,
            enc.admit + Duration::days(3),
        ),
        nephrotoxins_to_aki_onset: first_aki_onset
            .map(|onset| nephrotoxin_group_count(&patient.medications, config, enc.admit, onset))
            .unwrap_or(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{normalize_code, CodeSystem};
    use crate::egfr::Sex;
    use crate::ingest::{Disposition, EventContext};

    fn dt(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").unwrap()
    }

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn dx(code: &str, date: &str) -> CodedEvent {
        CodedEvent {
            code: normalize_code(code),
            system: CodeSystem::Icd10,
            date: d(date),
            context: EventContext::Diagnosis,
        }
    }

    fn px(code: &str, date: &str) -> CodedEvent {
        CodedEvent {
            code: normalize_code(code),
            system: CodeSystem::Cpt,
            date: d(date),
            context: EventContext::Procedure,
        }
    }

    fn med(name: &str, date: &str) -> MedicationEvent {
        MedicationEvent {
            name: name.to_string(),
            class: String::new(),
            date: d(date),
        }
    }

    fn enc() -> EncounterRecord {
        EncounterRecord {
            patient_id: "p1".into(),
            encounter_id: "e1".into(),
            admit: dt("2019-06-01T08:00:00"),
            discharge: dt("2019-06-08T08:00:00"),
            disposition: Disposition::HomeRehab,
        }
    }

    fn patient(coded: Vec<CodedEvent>, meds: Vec<MedicationEvent>) -> Patient {
        Patient {
            id: "p1".into(),
            birth_date: d("1959-01-01"),
            sex: Sex::Male,
            race: "white".into(),
            labs: vec![],
            coded_events: coded,
            medications: meds,
            death_date: None,
        }
    }

    fn cfg() -> CodeMapConfig {
        CodeMapConfig::embedded_default()
    }

    #[test]
    fn cci_empty_is_zero() {
        assert_eq!(charlson_score(&[], d("2019-06-01"), 365, &cfg()), 0);
    }

    #[test]
    fn cci_single_chf() {
        let ev = vec![dx("I50.9", "2019-02-21")];
        assert_eq!(charlson_score(&ev, d("2019-06-01"), 365, &cfg()), 1);
    }

    #[test]
    fn cci_mi_plus_metastatic_is_seven() {
        let ev = vec![dx("I21.4", "2019-02-21"), dx("C78.0", "2019-03-01")];
        assert_eq!(charlson_score(&ev, d("2019-06-01"), 365, &cfg()), 7);
    }

    #[test]
    fn cci_hierarchy_metastatic_supersedes_malignancy() {
        // Primary + metastatic: 6, not 2 + 6.
        let ev = vec![dx("C34.1", "2019-02-21"), dx("C78.0", "2019-03-01")];
        assert_eq!(charlson_score(&ev, d("2019-06-01"), 365, &cfg()), 6);
    }

    #[test]
    fn cci_hierarchy_diabetes() {
        // Complicated diabetes code matches both diabetes categories via
        // the "250"/"E11" prefixes; only the weight-2 category counts.
        let ev = vec![dx("E11.2", "2019-02-21")];
        assert_eq!(charlson_score(&ev, d("2019-06-01"), 365, &cfg()), 2);
    }

    #[test]
    fn cci_outside_lookback_ignored() {
        let ev = vec![dx("I50.9", "2017-01-01")];
        assert_eq!(charlson_score(&ev, d("2019-06-01"), 365, &cfg()), 0);
    }

    #[test]
    fn cci_duplicate_codes_idempotent() {
        let ev = vec![dx("I50.9", "2019-02-21")];
        let mut doubled = ev.clone();
        doubled.extend(ev.clone());
        assert_eq!(
            charlson_score(&ev, d("2019-06-01"), 365, &cfg()),
            charlson_score(&doubled, d("2019-06-01"), 365, &cfg())
        );
    }

    #[test]
    fn icu_flag_from_cpt() {
        let p = patient(vec![px("99291", "2019-06-02")], vec![]);
        assert!(detect_code_flag(&p.coded_events, &enc(), &cfg().icu));
    }

    #[test]
    fn vent_flag_from_dotted_icd() {
        let p = patient(vec![px("96.72", "2019-06-02")], vec![]);
        assert!(detect_code_flag(
            &p.coded_events,
            &enc(),
            &cfg().mechanical_ventilation
        ));
    }

    #[test]
    fn no_match_is_false() {
        let p = patient(vec![px("12345", "2019-06-02")], vec![]);
        assert!(!detect_code_flag(&p.coded_events, &enc(), &cfg().icu));
    }

    #[test]
    fn nephrotoxin_distinct_group_count() {
        let meds = vec![
            med("vancomycin", "2019-06-01"),
            med("furosemide", "2019-06-01"),
            med("vancomycin", "2019-06-02"),
        ];
        let n = nephrotoxin_group_count(
            &meds,
            &cfg(),
            dt("2019-06-01T08:00:00"),
            dt("2019-06-03T08:00:00"),
        );
        assert_eq!(n, 2);
    }

    #[test]
    fn nephrotoxin_outside_window_is_zero() {
        let meds = vec![med("vancomycin", "2019-06-05")];
        let n = nephrotoxin_group_count(
            &meds,
            &cfg(),
            dt("2019-06-01T08:00:00"),
            dt("2019-06-03T08:00:00"),
        );
        assert_eq!(n, 0);
    }

    #[test]
    fn nephrotoxin_cap_at_six() {
        let meds = vec![
            med("gentamicin", "2019-06-01"),
            med("furosemide", "2019-06-01"),
            med("vancomycin", "2019-06-01"),
            med("lisinopril", "2019-06-01"),
            med("ibuprofen", "2019-06-01"),
            med("norepinephrine", "2019-06-01"),
        ];
        let n = nephrotoxin_group_count(
            &meds,
            &cfg(),
            dt("2019-06-01T08:00:00"),
            dt("2019-06-03T08:00:00"),
        );
        assert_eq!(n, 6);
    }

    #[test]
    fn window_containment_monotone() {
        let meds = vec![
            med("vancomycin", "2019-06-01"),
            med("furosemide", "2019-06-03"),
        ];
        let small = nephrotoxin_group_count(
            &meds,
            &cfg(),
            dt("2019-06-01T00:00:00"),
            dt("2019-06-02T00:00:00"),
        );
        let large = nephrotoxin_group_count(
            &meds,
            &cfg(),
            dt("2019-06-01T00:00:00"),
            dt("2019-06-05T00:00:00"),
        );
        assert!(small <= large);
    }

    #[test]
    fn krt_intervals_cover_event_days() {
        let p = patient(vec![px("90935", "2019-06-03")], vec![]);
        let ivs = krt_intervals(&p.coded_events, &enc(), &cfg());
        assert_eq!(ivs.len(), 1);
        assert!(ivs[0].contains(dt("2019-06-03T12:00:00")));
        assert!(!ivs[0].contains(dt("2019-06-04T12:00:00")));
    }

    #[test]
    fn full_feature_assembly() {
        let p = patient(
            vec![
                dx("I10", "2019-01-15"),
                dx("I50.9", "2019-02-21"),
                px("99291", "2019-06-02"),
            ],
            vec![med("vancomycin", "2019-06-01"), med("norepinephrine", "2019-06-02")],
        );
        let f = compute_features(&p, &enc(), &cfg(), Some(dt("2019-06-03T00:00:00")));
        assert!(f.hypertension);
        assert!(f.cardiovascular);
        assert!(f.icu);
        assert!(f.vasopressor_inotrope);
        assert_eq!(f.cci, 1);
        assert_eq!(f.nephrotoxins_2d, 2);
        assert_eq!(f.nephrotoxins_to_aki_onset, 2);
    }
}
