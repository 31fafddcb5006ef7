//! Deterministic synthetic-cohort generator. Emits the same delimited
//! tables the ingest layer consumes, plus a ground-truth CSV, with
//! creatinine series constructed so the engine's own rules reproduce the
//! intended trajectory label exactly.
//!
//! Construction, on a 12-hour sampling grid (values are multiples of the
//! subject's baseline `b`; `f` is the stage-target ratio):
//! - no AKI: flat at `b` for the whole stay;
//! - rapidly reversed: elevated at 12h and 24h, back to `b` at 36h
//!   (onset-to-resolution 24h <= 48h);
//! - persistent with recovery: elevated 12h-84h, normal from 96h on
//!   (resolution 84h after onset);
//! - persistent without recovery: elevated from 12h through discharge.
//!
//! Every patient gets a preadmission creatinine (admit - 3d) equal to the
//! baseline, pinning the reference cascade to the 7-day minimum.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aki::{AkiStage, Severity, TrajectoryGroup};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_encounters: usize,
    /// P(no-AKI), P(rapidly-reversed), P(persistent-with-recovery),
    /// P(persistent-without-recovery); must sum to 1.
    pub prevalence: [f64; 4],
    /// Fraction of AKI encounters with worst stage >= 2.
    pub severe_fraction: f64,
    /// Among severe, fraction reaching stage 3.
    pub stage3_fraction_of_severe: f64,
    /// Post-discharge exponential death rate per day, per trajectory
    /// group in the same order as `prevalence`.
    pub hazards_per_day: [f64; 4],
    /// Fraction of subjects whose death record is dropped when the death
    /// falls beyond the survival horizon (registry loss that cannot bias
    /// the planted hazards).
    pub censoring_rate: f64,
    /// Probability of in-hospital death (flat across groups).
    pub hospital_mortality_rate: f64,
    pub icu_rate: f64,
    pub age_min: u32,
    pub age_max: u32,
    pub female_fraction: f64,
    /// (label, probability) pairs; probabilities must sum to 1.
    pub race_mix: Vec<(String, f64)>,
    /// Independent per-condition probabilities feeding the Charlson
    /// score: diabetes (E11.9), heart failure (I50.9), COPD (J44.9).
    pub p_diabetes: f64,
    pub p_heart_failure: f64,
    pub p_copd: f64,
    pub p_hypertension: f64,
    pub p_nsaid: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 1,
            n_encounters: 1000,
            // 14% AKI split 69/31 reversed/persistent; persistent split
            // evenly by recovery.
            prevalence: [0.86, 0.0966, 0.0217, 0.0217],
            severe_fraction: 0.35,
            stage3_fraction_of_severe: 0.4,
            hazards_per_day: [0.0004, 0.0008, 0.0016, 0.0032],
            censoring_rate: 0.15,
            hospital_mortality_rate: 0.02,
            icu_rate: 0.3,
            age_min: 25,
            age_max: 89,
            female_fraction: 0.5,
            race_mix: vec![
                ("white".into(), 0.55),
                ("black".into(), 0.20),
                ("hispanic".into(), 0.15),
                ("other".into(), 0.10),
            ],
            p_diabetes: 0.25,
            p_heart_failure: 0.12,
            p_copd: 0.15,
            p_hypertension: 0.4,
            p_nsaid: 0.25,
        }
    }
}

impl GeneratorConfig {
    pub fn from_file(path: &Path) -> Result<GeneratorConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: GeneratorConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_encounters == 0 {
            return Err(Error::Config("n_encounters must be positive".into()));
        }
        let sum: f64 = self.prevalence.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.prevalence.iter().any(|&p| p < 0.0) {
            return Err(Error::Config(format!(
                "prevalence must be nonnegative and sum to 1 (sum = {sum})"
            )));
        }
        if self.hazards_per_day.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Config("hazards_per_day must all be positive".into()));
        }
        for (name, p) in [
            ("severe_fraction", self.severe_fraction),
            ("stage3_fraction_of_severe", self.stage3_fraction_of_severe),
            ("censoring_rate", self.censoring_rate),
            ("hospital_mortality_rate", self.hospital_mortality_rate),
            ("icu_rate", self.icu_rate),
            ("female_fraction", self.female_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        let aki_total: f64 = self.prevalence[1..].iter().sum();
        if aki_total == 0.0 && self.severe_fraction > 0.0 {
            return Err(Error::Config(
                "severity mix is inconsistent with zero AKI prevalence".into(),
            ));
        }
        if self.age_min < 18 || self.age_min > self.age_max || self.age_max > 110 {
            return Err(Error::Config(format!(
                "age range [{}, {}] must lie within [18, 110]",
                self.age_min, self.age_max
            )));
        }
        let race_sum: f64 = self.race_mix.iter().map(|(_, p)| p).sum();
        if self.race_mix.is_empty() || (race_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config("race_mix probabilities must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub encounter_id: String,
    pub patient_id: String,
    pub group: TrajectoryGroup,
    pub severity: Severity,
    pub worst_stage: AkiStage,
    pub hospital_death: bool,
    /// Days from discharge to death; `None` when censored.
    pub death_day_post_discharge: Option<i64>,
}

pub fn group_label(g: TrajectoryGroup) -> &'static str {
    match g {
        TrajectoryGroup::NoAki => "no-aki",
        TrajectoryGroup::RapidlyReversed => "rapidly-reversed",
        TrajectoryGroup::PersistentWithRecovery => "persistent-with-recovery",
        TrajectoryGroup::PersistentWithoutRecovery => "persistent-without-recovery",
    }
}

pub fn severity_label(s: Severity) -> &'static str {
    match s {
        Severity::None => "none",
        Severity::Mild => "mild",
        Severity::Severe => "severe",
    }
}

const GROUPS: [TrajectoryGroup; 4] = [
    TrajectoryGroup::NoAki,
    TrajectoryGroup::RapidlyReversed,
    TrajectoryGroup::PersistentWithRecovery,
    TrajectoryGroup::PersistentWithoutRecovery,
];

/// Stay length in hours per group; chosen so every label resolves inside
/// the stay on the 12-hour grid.
fn los_hours(group: TrajectoryGroup) -> i64 {
    match group {
        TrajectoryGroup::NoAki => 96,
        TrajectoryGroup::RapidlyReversed => 120,
        TrajectoryGroup::PersistentWithRecovery => 168,
        TrajectoryGroup::PersistentWithoutRecovery => 168,
    }
}

/// Hours (from admit) at which the creatinine is elevated.
fn elevated_hours(group: TrajectoryGroup) -> &'static [i64] {
    match group {
        TrajectoryGroup::NoAki => &[],
        TrajectoryGroup::RapidlyReversed => &[12, 24],
        TrajectoryGroup::PersistentWithRecovery => &[12, 24, 36, 48, 60, 72, 84],
        // Through discharge at 168h.
        TrajectoryGroup::PersistentWithoutRecovery => {
            &[12, 24, 36, 48, 60, 72, 84, 96, 108, 120, 132, 144, 156, 168]
        }
    }
}

fn ts(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

struct Tables {
    demographics: String,
    encounters: String,
    labs: String,
    diagnoses: String,
    procedures: String,
    medications: String,
    death: String,
    ground_truth: String,
}

fn draw_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn draw_exponential_days(rng: &mut ChaCha8Rng, rate: f64) -> i64 {
    let u: f64 = rng.random();
    let days = -(1.0 - u).ln() / rate;
    (days.ceil() as i64).max(1)
}

/// Generate the cohort into `out_dir` and return the ground truth.
/// Identical config (including seed) produces byte-identical files.
pub fn generate(config: &GeneratorConfig, out_dir: &Path) -> Result<Vec<GroundTruthRecord>> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut t = Tables {
        demographics: "patient_id,birth_date,sex,race\n".into(),
        encounters: "patient_id,encounter_id,admit_ts,discharge_ts,disposition\n".into(),
        labs: "patient_id,lab_code,value,unit,lab_ts\n".into(),
        diagnoses: "patient_id,code,code_system,dx_date\n".into(),
        procedures: "patient_id,code,code_system,px_date\n".into(),
        medications: "patient_id,med_name,med_class,med_date\n".into(),
        death: "patient_id,death_date\n".into(),
        ground_truth:
            "encounter_id,patient_id,group,severity,worst_stage,hospital_death,death_day_post_discharge\n"
                .into(),
    };
    let mut truth = Vec::with_capacity(config.n_encounters);
    let epoch = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
    let race_probs: Vec<f64> = config.race_mix.iter().map(|(_, p)| *p).collect();

    for i in 0..config.n_encounters {
        let pid = format!("P{i:06}");
        let eid = format!("E{i:06}");
        let group = GROUPS[draw_categorical(&mut rng, &config.prevalence)];

        let female = rng.random::<f64>() < config.female_fraction;
        let (sex_str, baseline) = if female { ("F", 0.8) } else { ("M", 1.0) };
        let age = rng.random_range(config.age_min..=config.age_max) as i64;
        let race = config.race_mix[draw_categorical(&mut rng, &race_probs)].0.clone();

        let admit_day: i64 = rng.random_range(0..730);
        let admit = (epoch + Duration::days(admit_day)).and_hms_opt(8, 0, 0).unwrap();
        let discharge = admit + Duration::hours(los_hours(group));
        let birth = admit.date() - Duration::days(age * 365 + 180);

        // Severity / stage target for AKI groups.
        let (severity, worst_stage, factor) = if group == TrajectoryGroup::NoAki {
            (Severity::None, AkiStage::None, 1.0)
        } else if rng.random::<f64>() < config.severe_fraction {
            if rng.random::<f64>() < config.stage3_fraction_of_severe {
                (Severity::Severe, AkiStage::Stage3, 3.5)
            } else {
                (Severity::Severe, AkiStage::Stage2, 2.5)
            }
        } else {
            (Severity::Mild, AkiStage::Stage1, 1.6)
        };

        writeln!(t.demographics, "{pid},{},{sex_str},{race}", birth.format("%Y-%m-%d")).unwrap();

        // Preadmission baseline creatinine pins the reference cascade.
        let pre = admit - Duration::days(3);
        writeln!(t.labs, "{pid},SCR,{baseline:.2},mg/dL,{}", ts(pre)).unwrap();
        let elevated = elevated_hours(group);
        let mut h = 0;
        while h <= los_hours(group) {
            let value = if elevated.contains(&h) { baseline * factor } else { baseline };
            writeln!(t.labs, "{pid},SCR,{value:.2},mg/dL,{}", ts(admit + Duration::hours(h)))
                .unwrap();
            h += 12;
        }

        // Comorbidity history (365-day lookback window).
        let dx_date = (admit.date() - Duration::days(30)).format("%Y-%m-%d").to_string();
        for (p, code) in [
            (config.p_diabetes, "E11.9"),
            (config.p_heart_failure, "I50.9"),
            (config.p_copd, "J44.9"),
            (config.p_hypertension, "I10"),
        ] {
            if rng.random::<f64>() < p {
                writeln!(t.diagnoses, "{pid},{code},ICD10,{dx_date}").unwrap();
            }
        }

        let icu = rng.random::<f64>() < config.icu_rate;
        let stay_date = admit.date().format("%Y-%m-%d").to_string();
        if icu {
            writeln!(t.procedures, "{pid},99291,CPT,{stay_date}").unwrap();
            if rng.random::<f64>() < 0.5 {
                writeln!(t.procedures, "{pid},5A1935Z,ICD10PCS,{stay_date}").unwrap();
            }
            if rng.random::<f64>() < 0.4 {
                writeln!(t.medications, "{pid},norepinephrine,vasopressor,{stay_date}").unwrap();
            }
        }
        if rng.random::<f64>() < config.p_nsaid {
            writeln!(t.medications, "{pid},ibuprofen,nsaid,{stay_date}").unwrap();
        }

        // Survival: flat in-hospital mortality, then group-specific
        // exponential post-discharge hazard with administrative censoring.
        let hospital_death = rng.random::<f64>() < config.hospital_mortality_rate;
        let censored = rng.random::<f64>() < config.censoring_rate;
        let death_day_draw = draw_exponential_days(
            &mut rng,
            config.hazards_per_day[group as usize],
        );
        let (disposition, death_day_post_discharge) = if hospital_death {
            writeln!(t.death, "{pid},{}", discharge.date().format("%Y-%m-%d")).unwrap();
            ("expired", None)
        } else if censored && death_day_draw > crate::outcomes::SURVIVAL_HORIZON_DAYS {
            // Lost to the death registry, which is only observable when
            // the death falls beyond the survival horizon; a registry gap
            // before the horizon would look like survival and bias the
            // planted hazards.
            ("home", None)
        } else {
            let death_date = discharge.date() + Duration::days(death_day_draw);
            writeln!(t.death, "{pid},{}", death_date.format("%Y-%m-%d")).unwrap();
            ("home", Some(death_day_draw))
        };

        writeln!(
            t.encounters,
            "{pid},{eid},{},{},{disposition}",
            ts(admit),
            ts(discharge)
        )
        .unwrap();

        writeln!(
            t.ground_truth,
            "{eid},{pid},{},{},{},{},{}",
            group_label(group),
            severity_label(severity),
            worst_stage.as_u8(),
            hospital_death,
            death_day_post_discharge.map(|d| d.to_string()).unwrap_or_default()
        )
        .unwrap();

        truth.push(GroundTruthRecord {
            encounter_id: eid,
            patient_id: pid,
            group,
            severity,
            worst_stage,
            hospital_death,
            death_day_post_discharge,
        });
    }

    for (name, body) in [
        ("demographics.csv", &t.demographics),
        ("encounters.csv", &t.encounters),
        ("labs.csv", &t.labs),
        ("diagnoses.csv", &t.diagnoses),
        ("procedures.csv", &t.procedures),
        ("medications.csv", &t.medications),
        ("death.csv", &t.death),
        ("ground_truth.csv", &t.ground_truth),
    ] {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aki;
    use crate::baseline;
    use crate::config::IngestConfig;
    use crate::ingest;

    fn small_config(seed: u64, n: usize) -> GeneratorConfig {
        GeneratorConfig {
            seed,
            n_encounters: n,
            // Oversample AKI so small runs exercise every group.
            prevalence: [0.4, 0.3, 0.15, 0.15],
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn same_seed_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate(&small_config(42, 50), d1.path()).unwrap();
        generate(&small_config(42, 50), d2.path()).unwrap();
        for name in [
            "demographics.csv",
            "encounters.csv",
            "labs.csv",
            "diagnoses.csv",
            "procedures.csv",
            "medications.csv",
            "death.csv",
            "ground_truth.csv",
        ] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn different_seed_differs() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate(&small_config(1, 50), d1.path()).unwrap();
        generate(&small_config(2, 50), d2.path()).unwrap();
        let a = std::fs::read(d1.path().join("labs.csv")).unwrap();
        let b = std::fs::read(d2.path().join("labs.csv")).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn ingests_with_zero_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        generate(&small_config(7, 100), dir.path()).unwrap();
        let store = ingest::load_cohort(&IngestConfig::embedded_default(), dir.path()).unwrap();
        assert_eq!(store.errors.total_bad_rows(), 0);
        let filtered = ingest::apply_cohort_filters(&store, &store.encounter_ids());
        assert_eq!(filtered.included.len(), 100);
    }

    #[test]
    fn engine_recovers_every_label() {
        let dir = tempfile::tempdir().unwrap();
        let truth = generate(&small_config(11, 200), dir.path()).unwrap();
        let store = ingest::load_cohort(&IngestConfig::embedded_default(), dir.path()).unwrap();
        let code_map = crate::config::CodeMapConfig::embedded_default();
        for rec in &truth {
            let enc = &store.encounters[&rec.encounter_id];
            let patient = store.patient(enc);
            let series = ingest::creatinine_series(&store, enc);
            let ckd = baseline::identify_ckd(patient, enc, &code_map);
            let reference =
                baseline::determine_reference_creatinine(patient, enc, &series, &ckd).unwrap();
            assert_eq!(reference.method, baseline::ReferenceMethod::MinPrior7d);
            let krt = crate::features::krt_intervals(&patient.coded_events, enc, &code_map);
            let (_, _, result) = aki::evaluate(&series, &reference, &krt);
            assert_eq!(result.trajectory_group, rec.group, "{}", rec.encounter_id);
            assert_eq!(result.severity, rec.severity, "{}", rec.encounter_id);
            assert_eq!(result.worst_stage, rec.worst_stage, "{}", rec.encounter_id);
        }
    }

    #[test]
    fn prevalence_within_three_sigma() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig {
            seed: 3,
            n_encounters: 1000,
            ..GeneratorConfig::default()
        };
        let truth = generate(&cfg, dir.path()).unwrap();
        let n = cfg.n_encounters as f64;
        for (gi, g) in GROUPS.iter().enumerate() {
            let observed = truth.iter().filter(|r| r.group == *g).count() as f64;
            let p = cfg.prevalence[gi];
            let sigma = (n * p * (1.0 - p)).sqrt();
            assert!(
                (observed - n * p).abs() <= 3.0 * sigma,
                "group {g:?}: observed {observed}, expected {}",
                n * p
            );
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = GeneratorConfig::default();
        cfg.prevalence = [0.5, 0.5, 0.5, 0.5];
        assert!(cfg.validate().is_err());

        let mut cfg = GeneratorConfig::default();
        cfg.hazards_per_day[2] = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = GeneratorConfig::default();
        cfg.prevalence = [1.0, 0.0, 0.0, 0.0];
        cfg.severe_fraction = 0.3;
        assert!(cfg.validate().is_err());

        let mut cfg = GeneratorConfig::default();
        cfg.age_min = 10;
        assert!(cfg.validate().is_err());
    }
}
