//! Load common-data-model style delimited tables into an immutable
//! in-memory cohort store, apply cohort exclusions (adult, creatinine
//! available), and expose per-encounter creatinine series.
//!
//! Row-level parse failures are dropped and counted in an error ledger;
//! a table aborts ingestion only when its failure fraction exceeds the
//! configured tolerance.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::codes::{normalize_code, CodeSystem};
use crate::config::IngestConfig;
use crate::egfr::Sex;
use crate::error::{Error, Result};

pub const CREATININE_MAX_PLAUSIBLE: f64 = 50.0;
/// Hours after admission within which a creatinine keeps the encounter
/// eligible (inclusive boundary).
pub const CREATININE_WINDOW_HOURS: i64 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analyte {
    SerumCreatinine,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabObservation {
    pub analyte: Analyte,
    pub value: f64,
    pub at: NaiveDateTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventContext {
    Diagnosis,
    Procedure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedEvent {
    /// Normalized (uppercase, dots stripped).
    pub code: String,
    pub system: CodeSystem,
    pub date: NaiveDate,
    pub context: EventContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicationEvent {
    /// Lowercased name.
    pub name: String,
    /// Lowercased class, possibly empty.
    pub class: String,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Disposition {
    Expired,
    HomeRehab,
    OtherFacility,
    Unknown,
}

impl Disposition {
    pub fn parse(s: &str) -> Disposition {
        let s = s.trim().to_ascii_lowercase();
        if s.contains("expire") || s.contains("deceas") || s.contains("died") {
            Disposition::Expired
        } else if s.contains("home") || s.contains("rehab") {
            Disposition::HomeRehab
        } else if s.contains("facility")
            || s.contains("snf")
            || s.contains("hospice")
            || s.contains("ltac")
            || s.contains("hospital")
            || s.contains("transfer")
        {
            Disposition::OtherFacility
        } else {
            Disposition::Unknown
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: String,
    pub birth_date: NaiveDate,
    pub sex: Sex,
    pub race: String,
    /// Sorted by timestamp (stable, ties keep file order).
    pub labs: Vec<LabObservation>,
    /// Sorted by date.
    pub coded_events: Vec<CodedEvent>,
    /// Sorted by date.
    pub medications: Vec<MedicationEvent>,
    pub death_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub patient_id: String,
    pub encounter_id: String,
    pub admit: NaiveDateTime,
    pub discharge: NaiveDateTime,
    pub disposition: Disposition,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableErrors {
    pub total_rows: usize,
    pub bad_rows: usize,
    /// First few offending rows, for diagnostics.
    pub samples: Vec<String>,
}

impl TableErrors {
    const MAX_SAMPLES: usize = 5;

    fn record(&mut self, detail: String) {
        self.bad_rows += 1;
        if self.samples.len() < Self::MAX_SAMPLES {
            self.samples.push(detail);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorLedger {
    pub tables: BTreeMap<String, TableErrors>,
}

impl ErrorLedger {
    pub fn total_bad_rows(&self) -> usize {
        self.tables.values().map(|t| t.bad_rows).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStore {
    pub patients: BTreeMap<String, Patient>,
    pub encounters: BTreeMap<String, EncounterRecord>,
    pub errors: ErrorLedger,
}

impl CohortStore {
    pub fn patient(&self, encounter: &EncounterRecord) -> &Patient {
        &self.patients[&encounter.patient_id]
    }

    /// Encounter ids sorted (BTreeMap order), the canonical iteration order
    /// for deterministic output.
    pub fn encounter_ids(&self) -> Vec<String> {
        self.encounters.keys().cloned().collect()
    }
}

struct TableReader {
    headers: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl TableReader {
    fn open(dir: &Path, rel: &str, delimiter: char) -> Result<TableReader> {
        let path = dir.join(rel);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter as u8)
            .flexible(true)
            .from_path(&path)?;
        let headers = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(TableReader { headers, records })
    }

    fn column(&self, table: &str, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                table: table.to_string(),
                column: name.to_string(),
            })
    }
}

fn req_col<'a>(table: &str, col: &'a Option<String>, name: &str) -> Result<&'a str> {
    col.as_deref().ok_or_else(|| Error::Config(format!(
        "table `{table}` is missing required column mapping `{name}`"
    )))
}

fn parse_ts(s: &str, fmt: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), fmt).ok()
}

fn parse_date(s: &str, fmt: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), fmt).ok()
}

/// Load all configured tables from `dir` into a cohort store.
///
/// Deterministic given identical input bytes: rows are kept in file order,
/// sorts are stable, and all maps are ordered.
pub fn load_cohort(config: &IngestConfig, dir: &Path) -> Result<CohortStore> {
    config.validate()?;
    let mut ledger = ErrorLedger::default();
    let mut patients: BTreeMap<String, Patient> = BTreeMap::new();
    let mut encounters: BTreeMap<String, EncounterRecord> = BTreeMap::new();

    // Demographics first: every other table links by patient id.
    {
        let spec = &config.demographics;
        let t = TableReader::open(dir, &spec.path, config.delimiter)?;
        let c = &spec.columns;
        let pid = t.column("demographics", req_col("demographics", &c.patient_id, "patient_id")?)?;
        let birth = t.column("demographics", req_col("demographics", &c.birth_date, "birth_date")?)?;
        let sex = t.column("demographics", req_col("demographics", &c.sex, "sex")?)?;
        let race = c.race.as_deref().map(|n| t.column("demographics", n)).transpose()?;
        let errs = ledger.tables.entry("demographics".into()).or_default();
        errs.total_rows = t.records.len();
        for rec in &t.records {
            let parsed = (|| {
                let id = rec.get(pid)?.trim().to_string();
                if id.is_empty() {
                    return None;
                }
                let birth_date = parse_date(rec.get(birth)?, &config.date_format)?;
                let sex = Sex::parse(rec.get(sex)?)?;
                let race = race
                    .and_then(|i| rec.get(i))
                    .map(|r| r.trim().to_string())
                    .unwrap_or_default();
                Some((id, birth_date, sex, race))
            })();
            match parsed {
                Some((id, birth_date, sex, race)) => {
                    patients.entry(id.clone()).or_insert_with(|| Patient {
                        id,
                        birth_date,
                        sex,
                        race,
                        labs: Vec::new(),
                        coded_events: Vec::new(),
                        medications: Vec::new(),
                        death_date: None,
                    });
                }
                None => errs.record(format!("demographics: unparseable row {rec:?}")),
            }
        }
        check_tolerance("demographics", errs, config.error_tolerance)?;
    }

    // Encounters.
    {
        let spec = &config.encounters;
        let t = TableReader::open(dir, &spec.path, config.delimiter)?;
        let c = &spec.columns;
        let pid = t.column("encounters", req_col("encounters", &c.patient_id, "patient_id")?)?;
        let eid = t.column("encounters", req_col("encounters", &c.encounter_id, "encounter_id")?)?;
        let admit = t.column("encounters", req_col("encounters", &c.admit, "admit")?)?;
        let discharge = t.column("encounters", req_col("encounters", &c.discharge, "discharge")?)?;
        let dispo = c.disposition.as_deref().map(|n| t.column("encounters", n)).transpose()?;
        let errs = ledger.tables.entry("encounters".into()).or_default();
        errs.total_rows = t.records.len();
        for rec in &t.records {
            let parsed = (|| {
                let patient_id = rec.get(pid)?.trim().to_string();
                let encounter_id = rec.get(eid)?.trim().to_string();
                if patient_id.is_empty() || encounter_id.is_empty() {
                    return None;
                }
                let admit = parse_ts(rec.get(admit)?, &config.timestamp_format)?;
                let discharge = parse_ts(rec.get(discharge)?, &config.timestamp_format)?;
                if admit > discharge {
                    return None;
                }
                let disposition = dispo
                    .and_then(|i| rec.get(i))
                    .map(Disposition::parse)
                    .unwrap_or(Disposition::Unknown);
                Some(EncounterRecord {
                    patient_id,
                    encounter_id,
                    admit,
                    discharge,
                    disposition,
                })
            })();
            match parsed {
                Some(enc) => {
                    if !patients.contains_key(&enc.patient_id) {
                        errs.record(format!(
                            "encounters: unknown patient `{}` on encounter `{}`",
                            enc.patient_id, enc.encounter_id
                        ));
                        continue;
                    }
                    if encounters.contains_key(&enc.encounter_id) {
                        errs.record(format!("encounters: duplicate encounter id `{}`", enc.encounter_id));
                        continue;
                    }
                    encounters.insert(enc.encounter_id.clone(), enc);
                }
                None => errs.record(format!("encounters: unparseable row {rec:?}")),
            }
        }
        check_tolerance("encounters", errs, config.error_tolerance)?;
    }

    // Labs.
    {
        let spec = &config.labs;
        let t = TableReader::open(dir, &spec.path, config.delimiter)?;
        let c = &spec.columns;
        let pid = t.column("labs", req_col("labs", &c.patient_id, "patient_id")?)?;
        let code = t.column("labs", req_col("labs", &c.code, "code")?)?;
        let value = t.column("labs", req_col("labs", &c.value, "value")?)?;
        let ts = t.column("labs", req_col("labs", &c.timestamp, "timestamp")?)?;
        let scr_codes: Vec<String> = config
            .creatinine_codes
            .iter()
            .map(|s| s.trim().to_ascii_uppercase())
            .collect();
        let errs = ledger.tables.entry("labs".into()).or_default();
        errs.total_rows = t.records.len();
        for rec in &t.records {
            enum RowOutcome {
                Ok(String, LabObservation),
                Bad(String),
            }
            let outcome = (|| {
                let id = rec.get(pid)?.trim().to_string();
                let lab_code = rec.get(code)?.trim().to_ascii_uppercase();
                let raw_value = rec.get(value)?;
                let at = parse_ts(rec.get(ts)?, &config.timestamp_format)?;
                let analyte = if scr_codes.iter().any(|s| *s == lab_code) {
                    Analyte::SerumCreatinine
                } else {
                    Analyte::Other
                };
                let value: f64 = raw_value.trim().parse().ok()?;
                if analyte == Analyte::SerumCreatinine
                    && !(value > 0.0 && value < CREATININE_MAX_PLAUSIBLE)
                {
                    return Some(RowOutcome::Bad(format!(
                        "labs: implausible creatinine {value} for patient `{id}`"
                    )));
                }
                Some(RowOutcome::Ok(id, LabObservation { analyte, value, at }))
            })();
            match outcome {
                Some(RowOutcome::Ok(id, obs)) => match patients.get_mut(&id) {
                    Some(p) => p.labs.push(obs),
                    None => errs.record(format!("labs: unknown patient `{id}`")),
                },
                Some(RowOutcome::Bad(detail)) => errs.record(detail),
                None => errs.record(format!("labs: unparseable row {rec:?}")),
            }
        }
        check_tolerance("labs", errs, config.error_tolerance)?;
    }

    // Diagnoses and procedures share a shape.
    for (table, spec, context) in [
        ("diagnoses", &config.diagnoses, EventContext::Diagnosis),
        ("procedures", &config.procedures, EventContext::Procedure),
    ] {
        let t = TableReader::open(dir, &spec.path, config.delimiter)?;
        let c = &spec.columns;
        let pid = t.column(table, req_col(table, &c.patient_id, "patient_id")?)?;
        let code = t.column(table, req_col(table, &c.code, "code")?)?;
        let system = c.code_system.as_deref().map(|n| t.column(table, n)).transpose()?;
        let date = t.column(table, req_col(table, &c.date, "date")?)?;
        let errs = ledger.tables.entry(table.into()).or_default();
        errs.total_rows = t.records.len();
        for rec in &t.records {
            let parsed = (|| {
                let id = rec.get(pid)?.trim().to_string();
                let code = normalize_code(rec.get(code)?);
                if code.is_empty() {
                    return None;
                }
                let system = system
                    .and_then(|i| rec.get(i))
                    .map(CodeSystem::parse)
                    .unwrap_or(CodeSystem::Other);
                let date = parse_date(rec.get(date)?, &config.date_format)?;
                Some((
                    id,
                    CodedEvent {
                        code,
                        system,
                        date,
                        context,
                    },
                ))
            })();
            match parsed {
                Some((id, ev)) => match patients.get_mut(&id) {
                    Some(p) => p.coded_events.push(ev),
                    None => errs.record(format!("{table}: unknown patient `{id}`")),
                },
                None => errs.record(format!("{table}: unparseable row {rec:?}")),
            }
        }
        check_tolerance(table, errs, config.error_tolerance)?;
    }

    // Medications.
    {
        let spec = &config.medications;
        let t = TableReader::open(dir, &spec.path, config.delimiter)?;
        let c = &spec.columns;
        let pid = t.column("medications", req_col("medications", &c.patient_id, "patient_id")?)?;
        let name = t.column("medications", req_col("medications", &c.name, "name")?)?;
        let class = c.class.as_deref().map(|n| t.column("medications", n)).transpose()?;
        let date = t.column("medications", req_col("medications", &c.date, "date")?)?;
        let errs = ledger.tables.entry("medications".into()).or_default();
        errs.total_rows = t.records.len();
        for rec in &t.records {
            let parsed = (|| {
                let id = rec.get(pid)?.trim().to_string();
                let name = rec.get(name)?.trim().to_ascii_lowercase();
                if name.is_empty() {
                    return None;
                }
                let class = class
                    .and_then(|i| rec.get(i))
                    .map(|s| s.trim().to_ascii_lowercase())
                    .unwrap_or_default();
                let date = parse_date(rec.get(date)?, &config.date_format)?;
                Some((id, MedicationEvent { name, class, date }))
            })();
            match parsed {
                Some((id, ev)) => match patients.get_mut(&id) {
                    Some(p) => p.medications.push(ev),
                    None => errs.record(format!("medications: unknown patient `{id}`")),
                },
                None => errs.record(format!("medications: unparseable row {rec:?}")),
            }
        }
        check_tolerance("medications", errs, config.error_tolerance)?;
    }

    // Death records.
    {
        let spec = &config.death;
        let t = TableReader::open(dir, &spec.path, config.delimiter)?;
        let c = &spec.columns;
        let pid = t.column("death", req_col("death", &c.patient_id, "patient_id")?)?;
        let dd = t.column("death", req_col("death", &c.death_date, "death_date")?)?;
        let errs = ledger.tables.entry("death".into()).or_default();
        errs.total_rows = t.records.len();
        for rec in &t.records {
            let parsed = (|| {
                let id = rec.get(pid)?.trim().to_string();
                let date = parse_date(rec.get(dd)?, &config.date_format)?;
                Some((id, date))
            })();
            match parsed {
                Some((id, date)) => match patients.get_mut(&id) {
                    Some(p) => {
                        // Earliest recorded death date wins.
                        p.death_date = Some(match p.death_date {
                            Some(existing) => existing.min(date),
                            None => date,
                        });
                    }
                    None => errs.record(format!("death: unknown patient `{id}`")),
                },
                None => errs.record(format!("death: unparseable row {rec:?}")),
            }
        }
        check_tolerance("death", errs, config.error_tolerance)?;
    }

    for p in patients.values_mut() {
        p.labs.sort_by_key(|l| l.at);
        p.coded_events.sort_by(|a, b| (a.date, &a.code).cmp(&(b.date, &b.code)));
        p.medications.sort_by(|a, b| (a.date, &a.name).cmp(&(b.date, &b.name)));
    }

    Ok(CohortStore {
        patients,
        encounters,
        errors: ledger,
    })
}

fn check_tolerance(table: &str, errs: &TableErrors, tolerance: f64) -> Result<()> {
    if errs.total_rows > 0 {
        let frac = errs.bad_rows as f64 / errs.total_rows as f64;
        if frac > tolerance {
            return Err(Error::ParseToleranceExceeded {
                table: table.to_string(),
                bad: errs.bad_rows,
                total: errs.total_rows,
                tolerance,
            });
        }
    }
    Ok(())
}

/// Whole years at the admission date (floor).
pub fn age_at(birth: NaiveDate, on: NaiveDate) -> i32 {
    let mut age = on.year() - birth.year();
    if (on.month(), on.day()) < (birth.month(), birth.day()) {
        age -= 1;
    }
    age
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    Age,
    NoCreatinine,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionTally {
    pub loaded: usize,
    pub included: usize,
    pub excluded_age: usize,
    pub excluded_no_creatinine: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredCohort {
    /// Sorted encounter ids surviving exclusions.
    pub included: Vec<String>,
    pub tally: ExclusionTally,
}

fn has_eligible_creatinine(store: &CohortStore, enc: &EncounterRecord) -> bool {
    let window_end = (enc.admit + Duration::hours(CREATININE_WINDOW_HOURS)).max(enc.discharge);
    store.patient(enc).labs.iter().any(|l| {
        l.analyte == Analyte::SerumCreatinine && l.at >= enc.admit && l.at <= window_end
    })
}

/// Apply the cohort exclusions, in order: adult at admission, then
/// creatinine availability (in-stay or within 48h of admission,
/// boundary inclusive).
pub fn apply_cohort_filters(store: &CohortStore, candidates: &[String]) -> FilteredCohort {
    let mut tally = ExclusionTally {
        loaded: candidates.len(),
        ..Default::default()
    };
    let mut included = Vec::new();
    for id in candidates {
        let Some(enc) = store.encounters.get(id) else {
            continue;
        };
        let patient = store.patient(enc);
        if age_at(patient.birth_date, enc.admit.date()) < 18 {
            tally.excluded_age += 1;
            continue;
        }
        if !has_eligible_creatinine(store, enc) {
            tally.excluded_no_creatinine += 1;
            continue;
        }
        included.push(id.clone());
    }
    included.sort();
    tally.included = included.len();
    FilteredCohort { included, tally }
}

/// A time-sorted creatinine series restricted to the stay.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreatinineSeries {
    pub points: Vec<(NaiveDateTime, f64)>,
}

impl CreatinineSeries {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// In-stay creatinine observations, time-sorted; ties at an identical
/// timestamp keep the maximum value.
pub fn creatinine_series(store: &CohortStore, enc: &EncounterRecord) -> CreatinineSeries {
    let window_end = (enc.admit + Duration::hours(CREATININE_WINDOW_HOURS)).max(enc.discharge);
    let mut points: Vec<(NaiveDateTime, f64)> = store
        .patient(enc)
        .labs
        .iter()
        .filter(|l| {
            l.analyte == Analyte::SerumCreatinine && l.at >= enc.admit && l.at <= window_end
        })
        .map(|l| (l.at, l.value))
        .collect();
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    points.dedup_by(|next, prev| {
        if next.0 == prev.0 {
            // Sorted ascending by value within a timestamp, so the survivor
            // is the maximum.
            prev.1 = prev.1.max(next.1);
            true
        } else {
            false
        }
    });
    CreatinineSeries { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::IngestConfig;
    use std::fs;

    fn dt(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").unwrap()
    }

    fn write_tables(dir: &Path, labs_extra: &str) {
        fs::write(
            dir.join("demographics.csv"),
            "patient_id,birth_date,sex,race\np1,1970-01-15,F,white\np2,2002-06-01,M,african american\n",
        )
        .unwrap();
        fs::write(
            dir.join("encounters.csv"),
            "patient_id,encounter_id,admit_ts,discharge_ts,disposition\n\
             p1,e1,2019-03-01T08:00:00,2019-03-06T12:00:00,home\n\
             p2,e2,2019-05-01T00:00:00,2019-05-03T00:00:00,home\n",
        )
        .unwrap();
        fs::write(
            dir.join("labs.csv"),
            format!(
                "patient_id,lab_code,value,unit,lab_ts\n\
                 p1,SCR,1.0,mg/dL,2019-03-01T09:00:00\n\
                 p1,SCR,1.2,mg/dL,2019-03-02T09:00:00\n\
                 p1,SCR,0.9,mg/dL,2019-03-03T09:00:00\n{labs_extra}"
            ),
        )
        .unwrap();
        fs::write(dir.join("diagnoses.csv"), "patient_id,code,code_system,dx_date\np1,N18.3,ICD10,2018-01-01\n").unwrap();
        fs::write(dir.join("procedures.csv"), "patient_id,code,code_system,px_date\n").unwrap();
        fs::write(dir.join("medications.csv"), "patient_id,med_name,med_class,med_date\n").unwrap();
        fs::write(dir.join("death.csv"), "patient_id,death_date\n").unwrap();
    }

    fn load(dir: &Path) -> CohortStore {
        let mut cfg = IngestConfig::embedded_default();
        cfg.error_tolerance = 0.5;
        load_cohort(&cfg, dir).unwrap()
    }

    #[test]
    fn identity_load_three_labs() {
        let tmp = tempfile::tempdir().unwrap();
        write_tables(tmp.path(), "");
        let store = load(tmp.path());
        assert_eq!(store.patients["p1"].labs.len(), 3);
        assert_eq!(store.errors.total_bad_rows(), 0);
    }

    #[test]
    fn implausible_creatinine_dropped_and_counted() {
        let tmp = tempfile::tempdir().unwrap();
        write_tables(tmp.path(), "p1,SCR,-1.0,mg/dL,2019-03-04T09:00:00\n");
        let store = load(tmp.path());
        assert_eq!(store.patients["p1"].labs.len(), 3);
        assert_eq!(store.errors.tables["labs"].bad_rows, 1);
    }

    #[test]
    fn deterministic_serialization() {
        let tmp = tempfile::tempdir().unwrap();
        write_tables(tmp.path(), "");
        let a = serde_json::to_vec(&load(tmp.path())).unwrap();
        let b = serde_json::to_vec(&load(tmp.path())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tolerance_exceeded_is_fatal() {
        let tmp = tempfile::tempdir().unwrap();
        write_tables(tmp.path(), "p1,SCR,not-a-number,mg/dL,bogus\n");
        let mut cfg = IngestConfig::embedded_default();
        cfg.error_tolerance = 0.0;
        assert!(matches!(
            load_cohort(&cfg, tmp.path()),
            Err(Error::ParseToleranceExceeded { .. })
        ));
    }

    #[test]
    fn missing_mapped_column_is_fatal() {
        let tmp = tempfile::tempdir().unwrap();
        write_tables(tmp.path(), "");
        fs::write(tmp.path().join("labs.csv"), "patient_id,code,value,unit,lab_ts\n").unwrap();
        let cfg = IngestConfig::embedded_default();
        assert!(matches!(
            load_cohort(&cfg, tmp.path()),
            Err(Error::MissingColumn { .. })
        ));
    }

    #[test]
    fn filters_age_and_creatinine() {
        let tmp = tempfile::tempdir().unwrap();
        write_tables(tmp.path(), "");
        // p2 is 16 at admission (born 2002-06-01, admitted 2019-05-01).
        let store = load(tmp.path());
        let ids = store.encounter_ids();
        let filtered = apply_cohort_filters(&store, &ids);
        assert_eq!(filtered.included, vec!["e1".to_string()]);
        assert_eq!(filtered.tally.excluded_age, 1);
        assert_eq!(filtered.tally.excluded_no_creatinine, 0);
        assert_eq!(
            filtered.tally.included + filtered.tally.excluded_age + filtered.tally.excluded_no_creatinine,
            filtered.tally.loaded
        );
    }

    #[test]
    fn creatinine_at_47h_is_inside_window() {
        let tmp = tempfile::tempdir().unwrap();
        write_tables(
            tmp.path(),
            "p2x,SCR,1.0,mg/dL,2019-05-02T23:00:00\n",
        );
        // Give p2 an adult twin whose only creatinine is at admit+47h.
        fs::write(
            tmp.path().join("demographics.csv"),
            "patient_id,birth_date,sex,race\np1,1970-01-15,F,white\np2x,1980-06-01,M,white\n",
        )
        .unwrap();
        fs::write(
            tmp.path().join("encounters.csv"),
            "patient_id,encounter_id,admit_ts,discharge_ts,disposition\n\
             p1,e1,2019-03-01T08:00:00,2019-03-06T12:00:00,home\n\
             p2x,e2,2019-05-01T00:00:00,2019-05-03T00:00:00,home\n",
        )
        .unwrap();
        let store = load(tmp.path());
        let filtered = apply_cohort_filters(&store, &store.encounter_ids());
        assert!(filtered.included.contains(&"e2".to_string()));
    }

    #[test]
    fn no_creatinine_excluded() {
        let tmp = tempfile::tempdir().unwrap();
        write_tables(tmp.path(), "");
        fs::write(
            tmp.path().join("demographics.csv"),
            "patient_id,birth_date,sex,race\np1,1970-01-15,F,white\np3,1979-01-01,M,white\n",
        )
        .unwrap();
        fs::write(
            tmp.path().join("encounters.csv"),
            "patient_id,encounter_id,admit_ts,discharge_ts,disposition\n\
             p1,e1,2019-03-01T08:00:00,2019-03-06T12:00:00,home\n\
             p3,e3,2019-05-01T00:00:00,2019-05-03T00:00:00,home\n",
        )
        .unwrap();
        let store = load(tmp.path());
        let filtered = apply_cohort_filters(&store, &store.encounter_ids());
        assert!(!filtered.included.contains(&"e3".to_string()));
        assert_eq!(filtered.tally.excluded_no_creatinine, 1);
    }

    #[test]
    fn filter_idempotence() {
        let tmp = tempfile::tempdir().unwrap();
        write_tables(tmp.path(), "");
        let store = load(tmp.path());
        let once = apply_cohort_filters(&store, &store.encounter_ids());
        let twice = apply_cohort_filters(&store, &once.included);
        assert_eq!(once.included, twice.included);
        assert_eq!(twice.tally.excluded_age, 0);
        assert_eq!(twice.tally.excluded_no_creatinine, 0);
    }

    #[test]
    fn series_sorted_and_tie_keeps_max() {
        let tmp = tempfile::tempdir().unwrap();
        write_tables(
            tmp.path(),
            "p1,SCR,1.3,mg/dL,2019-03-02T09:00:00\n",
        );
        let store = load(tmp.path());
        let enc = store.encounters["e1"].clone();
        let series = creatinine_series(&store, &enc);
        assert_eq!(
            series.points,
            vec![
                (dt("2019-03-01T09:00:00"), 1.0),
                (dt("2019-03-02T09:00:00"), 1.3),
                (dt("2019-03-03T09:00:00"), 0.9),
            ]
        );
        // Strictly increasing in time.
        for w in series.points.windows(2) {
            assert!(w[0].0 < w[1].0);
        }
    }

    #[test]
    fn age_floor() {
        let b = NaiveDate::from_ymd_opt(2000, 6, 15).unwrap();
        assert_eq!(age_at(b, NaiveDate::from_ymd_opt(2018, 6, 14).unwrap()), 17);
        assert_eq!(age_at(b, NaiveDate::from_ymd_opt(2018, 6, 15).unwrap()), 18);
    }
}
