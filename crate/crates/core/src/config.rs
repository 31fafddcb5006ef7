//! Declarative configuration: table/column mappings for ingestion and the
//! versioned code-map (Charlson categories, flag code lists, nephrotoxic
//! drug groups). Defaults are embedded from `configs/` and can be replaced
//! by user-supplied JSON validated through [`CodeMapConfig::validate`].

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codes::CodeList;
use crate::error::{Error, Result};

pub const DEFAULT_CODE_MAP_JSON: &str = include_str!("../configs/code_map.json");
pub const DEFAULT_INGEST_JSON: &str = include_str!("../configs/ingest.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MortalityAnchor {
    Admission,
    Discharge,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSpec {
    pub path: String,
    pub columns: ColumnMap,
}

/// Column-name mapping for one table. Only the fields relevant to the
/// table kind are read.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ColumnMap {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encounter_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub admit: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discharge: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disposition: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub birth_date: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sex: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub race: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code_system: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub death_date: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// chrono format string for datetime columns.
    #[serde(default = "default_ts_format")]
    pub timestamp_format: String,
    /// chrono format string for date-only columns.
    #[serde(default = "default_date_format")]
    pub date_format: String,
    #[serde(default = "default_anchor")]
    pub mortality_anchor: MortalityAnchor,
    /// Fraction of unparseable rows tolerated per table before ingestion
    /// aborts.
    #[serde(default = "default_tolerance")]
    pub error_tolerance: f64,
    /// Lab codes identifying serum creatinine (matched case-insensitively,
    /// exact).
    pub creatinine_codes: Vec<String>,
    pub encounters: TableSpec,
    pub demographics: TableSpec,
    pub labs: TableSpec,
    pub diagnoses: TableSpec,
    pub procedures: TableSpec,
    pub medications: TableSpec,
    pub death: TableSpec,
}

fn default_delimiter() -> char {
    ','
}
fn default_ts_format() -> String {
    "%Y-%m-%dT%H:%M:%S".to_string()
}
fn default_date_format() -> String {
    "%Y-%m-%d".to_string()
}
fn default_anchor() -> MortalityAnchor {
    MortalityAnchor::Admission
}
fn default_tolerance() -> f64 {
    0.01
}

impl IngestConfig {
    pub fn embedded_default() -> IngestConfig {
        serde_json::from_str(DEFAULT_INGEST_JSON).expect("embedded ingest config is valid")
    }

    pub fn from_file(path: &Path) -> Result<IngestConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: IngestConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.error_tolerance) {
            return Err(Error::Config(format!(
                "error_tolerance must be in [0,1], got {}",
                self.error_tolerance
            )));
        }
        if self.creatinine_codes.is_empty() {
            return Err(Error::Config("creatinine_codes must be non-empty".into()));
        }
        let req = |table: &str, col: &Option<String>, name: &str| -> Result<()> {
            if col.is_none() {
                return Err(Error::Config(format!(
                    "table `{table}` is missing required column mapping `{name}`"
                )));
            }
            Ok(())
        };
        let e = &self.encounters.columns;
        req("encounters", &e.patient_id, "patient_id")?;
        req("encounters", &e.encounter_id, "encounter_id")?;
        req("encounters", &e.admit, "admit")?;
        req("encounters", &e.discharge, "discharge")?;
        let d = &self.demographics.columns;
        req("demographics", &d.patient_id, "patient_id")?;
        req("demographics", &d.birth_date, "birth_date")?;
        req("demographics", &d.sex, "sex")?;
        let l = &self.labs.columns;
        req("labs", &l.patient_id, "patient_id")?;
        req("labs", &l.code, "code")?;
        req("labs", &l.value, "value")?;
        req("labs", &l.timestamp, "timestamp")?;
        for (name, spec) in [("diagnoses", &self.diagnoses), ("procedures", &self.procedures)] {
            req(name, &spec.columns.patient_id, "patient_id")?;
            req(name, &spec.columns.code, "code")?;
            req(name, &spec.columns.date, "date")?;
        }
        let m = &self.medications.columns;
        req("medications", &m.patient_id, "patient_id")?;
        req("medications", &m.name, "name")?;
        req("medications", &m.date, "date")?;
        let dd = &self.death.columns;
        req("death", &dd.patient_id, "patient_id")?;
        req("death", &dd.death_date, "death_date")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharlsonCategory {
    pub name: String,
    pub weight: u32,
    #[serde(flatten)]
    pub list: CodeList,
    /// When the named category also matches, this one contributes nothing
    /// (e.g. uncomplicated diabetes superseded by complicated diabetes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superseded_by: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NephrotoxinGroup {
    pub name: String,
    /// Case-insensitive substring patterns matched against medication name
    /// and class.
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodeMapConfig {
    pub version: String,
    pub mechanical_ventilation: CodeList,
    pub icu: CodeList,
    pub krt: CodeList,
    pub ckd_history: CodeList,
    pub aki_history: CodeList,
    pub kidney_transplant: CodeList,
    pub hypertension: CodeList,
    pub chronic_pulmonary: CodeList,
    pub cardiovascular: CodeList,
    pub diabetes: CodeList,
    pub charlson: Vec<CharlsonCategory>,
    pub nephrotoxins: Vec<NephrotoxinGroup>,
}

impl CodeMapConfig {
    pub fn embedded_default() -> CodeMapConfig {
        let mut cfg: CodeMapConfig =
            serde_json::from_str(DEFAULT_CODE_MAP_JSON).expect("embedded code map is valid");
        cfg.normalize();
        cfg.validate().expect("embedded code map passes validation");
        cfg
    }

    pub fn from_file(path: &Path) -> Result<CodeMapConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: CodeMapConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    fn normalize(&mut self) {
        for list in [
            &mut self.mechanical_ventilation,
            &mut self.icu,
            &mut self.krt,
            &mut self.ckd_history,
            &mut self.aki_history,
            &mut self.kidney_transplant,
            &mut self.hypertension,
            &mut self.chronic_pulmonary,
            &mut self.cardiovascular,
            &mut self.diabetes,
        ] {
            list.normalize();
        }
        for cat in self.charlson.iter_mut() {
            cat.list.normalize();
        }
        for group in self.nephrotoxins.iter_mut() {
            for p in group.patterns.iter_mut() {
                *p = p.to_ascii_lowercase();
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nephrotoxins.len() != 6 {
            return Err(Error::Config(format!(
                "nephrotoxin config must have exactly 6 groups, got {}",
                self.nephrotoxins.len()
            )));
        }
        let names: BTreeSet<&str> = self.charlson.iter().map(|c| c.name.as_str()).collect();
        if names.len() != self.charlson.len() {
            return Err(Error::Config("duplicate Charlson category names".into()));
        }
        for cat in &self.charlson {
            if ![1, 2, 3, 6].contains(&cat.weight) {
                return Err(Error::Config(format!(
                    "Charlson category `{}` has weight {}, expected one of 1, 2, 3, 6",
                    cat.name, cat.weight
                )));
            }
            if cat.list.is_empty() {
                return Err(Error::Config(format!(
                    "Charlson category `{}` has no codes or prefixes",
                    cat.name
                )));
            }
            if let Some(sup) = &cat.superseded_by {
                if !names.contains(sup.as_str()) {
                    return Err(Error::Config(format!(
                        "Charlson category `{}` superseded_by unknown category `{sup}`",
                        cat.name
                    )));
                }
            }
        }
        for group in &self.nephrotoxins {
            if group.patterns.is_empty() {
                return Err(Error::Config(format!(
                    "nephrotoxin group `{}` has no patterns",
                    group.name
                )));
            }
        }
        for (name, list) in [
            ("mechanical_ventilation", &self.mechanical_ventilation),
            ("icu", &self.icu),
            ("krt", &self.krt),
        ] {
            if list.is_empty() {
                return Err(Error::Config(format!("code list `{name}` is empty")));
            }
        }
        Ok(())
    }
}
