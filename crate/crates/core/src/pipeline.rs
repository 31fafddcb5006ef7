//! End-to-end orchestration: the phenotype run (ingest -> baseline ->
//! AKI engine -> features -> outcomes) with a reproducibility manifest,
//! and the reporting run (grouped summary tables with pairwise tests,
//! Cox/logistic model suites, unadjusted and IPW-adjusted KM curves).
//!
//! Everything here is deterministic: encounters are processed in sorted
//! id order and all emitted files are byte-stable across reruns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write as IoWrite};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aki::{self, AkiStage, EncounterAkiResult, Severity, Subphenotype, TrajectoryGroup};
use crate::baseline::{self, CkdStatus, ReferenceCreatinine};
use crate::config::{CodeMapConfig, IngestConfig};
use crate::egfr::Sex;
use crate::error::{Error, Result};
use crate::features::{self, EncounterFeatures};
use crate::ingest::{self, CohortStore, EncounterRecord, ExclusionTally};
use crate::outcomes::{derive_outcomes, OutcomeInputs, OutcomeSet};
use crate::stats::{
    self, bonferroni, fit_cox, fit_logistic, fit_multinomial, ipw_weights, km_estimate, log_rank,
    CoxFit, ModelFit, SurvivalRecord, TieMethod,
};
use crate::synth::group_label;

/// One encounter's complete phenotype, the unit of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeRecord {
    pub encounter_id: String,
    pub patient_id: String,
    pub age: f64,
    pub sex: Sex,
    pub race: String,
    pub ckd: CkdStatus,
    pub reference: ReferenceCreatinine,
    pub aki: EncounterAkiResult,
    pub features: EncounterFeatures,
    pub outcomes: OutcomeSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_map_version: String,
    pub ingest_config_sha256: String,
    pub code_map_sha256: String,
    /// Input file name -> sha256 of its bytes.
    pub input_sha256: BTreeMap<String, String>,
    pub exclusions: ExclusionTally,
    pub aki_encounters: usize,
    pub group_counts: BTreeMap<String, usize>,
    pub parse_errors: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn end_of_data(store: &CohortStore) -> NaiveDate {
    let mut max: Option<NaiveDate> = None;
    let mut push = |d: NaiveDate| max = Some(max.map_or(d, |m: NaiveDate| m.max(d)));
    for enc in store.encounters.values() {
        push(enc.discharge.date());
    }
    for p in store.patients.values() {
        if let Some(l) = p.labs.last() {
            push(l.at.date());
        }
        if let Some(e) = p.coded_events.last() {
            push(e.date);
        }
        if let Some(m) = p.medications.last() {
            push(m.date);
        }
        if let Some(d) = p.death_date {
            push(d);
        }
    }
    max.unwrap_or_else(|| NaiveDate::from_ymd_opt(1970, 1, 1).unwrap())
}

/// The full phenotype pass over a cohort directory. Returns the records
/// (sorted by encounter id) and the manifest; `write_outputs` also emits
/// `results.jsonl` and `manifest.json` into `out_dir`.
pub fn run_phenotype(
    ingest_cfg: &IngestConfig,
    code_map: &CodeMapConfig,
    input_dir: &Path,
    out_dir: Option<&Path>,
) -> Result<(Vec<PhenotypeRecord>, RunManifest)> {
    let store = ingest::load_cohort(ingest_cfg, input_dir)?;
    let filtered = ingest::apply_cohort_filters(&store, &store.encounter_ids());
    let eod = end_of_data(&store);

    // Per-patient encounter lists, admission-ordered, for readmissions.
    let mut by_patient: BTreeMap<&str, Vec<EncounterRecord>> = BTreeMap::new();
    for enc in store.encounters.values() {
        by_patient.entry(&enc.patient_id).or_default().push(enc.clone());
    }
    for list in by_patient.values_mut() {
        list.sort_by(|a, b| (a.admit, &a.encounter_id).cmp(&(b.admit, &b.encounter_id)));
    }

    // First pass: AKI classification for every included encounter (the
    // readmission-trajectory outcome needs the full map).
    struct Staged {
        ckd: CkdStatus,
        reference: ReferenceCreatinine,
        aki: EncounterAkiResult,
        features: EncounterFeatures,
    }
    let mut staged: BTreeMap<String, Staged> = BTreeMap::new();
    let mut aki_by_encounter: BTreeMap<String, EncounterAkiResult> = BTreeMap::new();
    for id in &filtered.included {
        let enc = &store.encounters[id];
        let patient = store.patient(enc);
        let series = ingest::creatinine_series(&store, enc);
        let mut ckd = baseline::identify_ckd(patient, enc, code_map);
        let reference = baseline::determine_reference_creatinine(patient, enc, &series, &ckd)?;
        baseline::stage_ckd(&mut ckd, &reference, patient, enc);
        let krt = features::krt_intervals(&patient.coded_events, enc, code_map);
        let (_, episodes, aki) = aki::evaluate(&series, &reference, &krt);
        let feats = features::compute_features(
            patient,
            enc,
            code_map,
            episodes.first().map(|e| e.onset),
        );
        aki_by_encounter.insert(id.clone(), aki.clone());
        staged.insert(
            id.clone(),
            Staged {
                ckd,
                reference,
                aki,
                features: feats,
            },
        );
    }

    let mut records = Vec::with_capacity(filtered.included.len());
    for id in &filtered.included {
        let enc = &store.encounters[id];
        let patient = store.patient(enc);
        let s = &staged[id];
        let outcomes = derive_outcomes(&OutcomeInputs {
            patient,
            encounter: enc,
            patient_encounters: &by_patient[enc.patient_id.as_str()],
            aki: &s.aki,
            aki_by_encounter: &aki_by_encounter,
            ckd: &s.ckd,
            code_map,
            anchor: ingest_cfg.mortality_anchor,
            end_of_data: eod,
        });
        records.push(PhenotypeRecord {
            encounter_id: id.clone(),
            patient_id: enc.patient_id.clone(),
            age: ingest::age_at(patient.birth_date, enc.admit.date()) as f64,
            sex: patient.sex,
            race: patient.race.clone(),
            ckd: s.ckd,
            reference: s.reference,
            aki: s.aki.clone(),
            features: s.features.clone(),
            outcomes,
        });
    }

    let mut group_counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        *group_counts.entry(group_label(r.aki.trajectory_group).to_string()).or_default() += 1;
    }
    let mut input_sha256 = BTreeMap::new();
    for spec in [
        &ingest_cfg.demographics,
        &ingest_cfg.encounters,
        &ingest_cfg.labs,
        &ingest_cfg.diagnoses,
        &ingest_cfg.procedures,
        &ingest_cfg.medications,
        &ingest_cfg.death,
    ] {
        let path = input_dir.join(&spec.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        input_sha256.insert(spec.path.clone(), sha256_hex(&bytes));
    }
    let manifest = RunManifest {
        code_map_version: code_map.version.clone(),
        ingest_config_sha256: sha256_hex(serde_json::to_string(ingest_cfg)?.as_bytes()),
        code_map_sha256: sha256_hex(serde_json::to_string(code_map)?.as_bytes()),
        input_sha256,
        aki_encounters: records.iter().filter(|r| r.aki.has_aki).count(),
        group_counts,
        exclusions: filtered.tally,
        parse_errors: store.errors.total_bad_rows(),
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let results_path = dir.join("results.jsonl");
        let mut out = String::new();
        for r in &records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        fs::write(&results_path, out).map_err(|e| Error::io(&results_path, e))?;
        let manifest_path = dir.join("manifest.json");
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&manifest_path, e))?;
    }
    Ok((records, manifest))
}

pub fn load_results(path: &Path) -> Result<Vec<PhenotypeRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Flat per-encounter outcome table.
pub fn write_outcomes_csv(records: &[PhenotypeRecord], path: &Path) -> Result<()> {
    fn opt(v: Option<bool>) -> &'static str {
        match v {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        }
    }
    let mut out = String::from(
        "encounter_id,patient_id,trajectory_group,severity,worst_stage,\
         hospital_mortality,death_within_30d_of_discharge,mortality_30d,mortality_1y,mortality_3y,\
         readmission_30d,readmission_90d,readmission_1y,new_krt_90d,new_krt_1y,\
         new_ckd_90d,new_ckd_1y,ckd_progression_1y,survival_days,survival_event\n",
    );
    for r in records {
        let o = &r.outcomes;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.encounter_id,
            r.patient_id,
            group_label(r.aki.trajectory_group),
            crate::synth::severity_label(r.aki.severity),
            r.aki.worst_stage.as_u8(),
            o.hospital_mortality,
            opt(o.death_within_30d_of_discharge),
            o.mortality_30d,
            o.mortality_1y,
            o.mortality_3y,
            opt(o.readmission_30d),
            opt(o.readmission_90d),
            opt(o.readmission_1y),
            opt(o.new_krt_90d),
            opt(o.new_krt_1y),
            opt(o.new_ckd_90d),
            opt(o.new_ckd_1y),
            opt(o.ckd_progression_1y),
            o.survival_days,
            o.survival_event,
        )
        .unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    TrajectoryGroups,
    Severity,
    Subphenotypes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummaryKind {
    MeanSd,
    MedianIqr,
    NPct,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: SummaryKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSpec {
    pub grouping: Grouping,
    pub variables: Vec<VariableSpec>,
    /// Emit pairwise tests vs the first three groups with Bonferroni
    /// markers (a/b/c footnote scheme).
    pub pairwise: bool,
}

impl Default for ReportSpec {
    fn default() -> Self {
        fn v(name: &str, kind: SummaryKind) -> VariableSpec {
            VariableSpec {
                name: name.into(),
                kind,
            }
        }
        ReportSpec {
            grouping: Grouping::TrajectoryGroups,
            variables: vec![
                v("age", SummaryKind::MeanSd),
                v("female", SummaryKind::NPct),
                v("cci", SummaryKind::MedianIqr),
                v("icu", SummaryKind::NPct),
                v("mechanical_ventilation", SummaryKind::NPct),
                v("hospital_mortality", SummaryKind::NPct),
                v("mortality_1y", SummaryKind::NPct),
            ],
            pairwise: true,
        }
    }
}

impl ReportSpec {
    pub fn from_file(path: &Path) -> Result<ReportSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn variable_value(r: &PhenotypeRecord, name: &str) -> Result<f64> {
    Ok(match name {
        "age" => r.age,
        "cci" => r.features.cci as f64,
        "female" => (r.sex == Sex::Female) as u8 as f64,
        "icu" => r.features.icu as u8 as f64,
        "mechanical_ventilation" => r.features.mechanical_ventilation as u8 as f64,
        "vasopressor_inotrope" => r.features.vasopressor_inotrope as u8 as f64,
        "diabetes" => r.features.diabetes as u8 as f64,
        "hypertension" => r.features.hypertension as u8 as f64,
        "hospital_mortality" => r.outcomes.hospital_mortality as u8 as f64,
        "mortality_30d" => r.outcomes.mortality_30d as u8 as f64,
        "mortality_1y" => r.outcomes.mortality_1y as u8 as f64,
        "mortality_3y" => r.outcomes.mortality_3y as u8 as f64,
        "nephrotoxins_3d" => r.features.nephrotoxins_3d as f64,
        "survival_days" => r.outcomes.survival_days,
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown summary variable `{other}`"
            )))
        }
    })
}

fn group_of(r: &PhenotypeRecord, grouping: Grouping) -> String {
    match grouping {
        Grouping::TrajectoryGroups => group_label(r.aki.trajectory_group).to_string(),
        Grouping::Severity => crate::synth::severity_label(r.aki.severity).to_string(),
        Grouping::Subphenotypes => subphenotype_label(r.aki.subphenotype).to_string(),
    }
}

pub fn subphenotype_label(s: Subphenotype) -> &'static str {
    match s {
        Subphenotype::NoAki => "no-aki",
        Subphenotype::MildRapidlyReversed => "mild-rapidly-reversed",
        Subphenotype::MildPersistentWithRecovery => "mild-persistent-with-recovery",
        Subphenotype::MildPersistentWithoutRecovery => "mild-persistent-without-recovery",
        Subphenotype::SevereRapidlyReversed => "severe-rapidly-reversed",
        Subphenotype::SeverePersistentWithRecovery => "severe-persistent-with-recovery",
        Subphenotype::SeverePersistentWithoutRecovery => "severe-persistent-without-recovery",
    }
}

fn group_order(grouping: Grouping) -> Vec<&'static str> {
    match grouping {
        Grouping::TrajectoryGroups => vec![
            "no-aki",
            "rapidly-reversed",
            "persistent-with-recovery",
            "persistent-without-recovery",
        ],
        Grouping::Severity => vec!["none", "mild", "severe"],
        Grouping::Subphenotypes => Subphenotype::ALL.iter().map(|s| subphenotype_label(*s)).collect(),
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // Linear interpolation between closest ranks.
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Groups (in canonical order) with their member indices; empty groups
/// are kept so emitted columns always partition the cohort.
fn partition(records: &[PhenotypeRecord], grouping: Grouping) -> Vec<(String, Vec<usize>)> {
    let mut map: BTreeMap<String, Vec<usize>> = group_order(grouping)
        .iter()
        .map(|g| (g.to_string(), Vec::new()))
        .collect();
    for (i, r) in records.iter().enumerate() {
        map.entry(group_of(r, grouping)).or_default().push(i);
    }
    group_order(grouping)
        .into_iter()
        .map(|g| (g.to_string(), map.remove(g).unwrap_or_default()))
        .collect()
}

/// Summary table + pairwise test files. Returns (summary csv, tests csv).
pub fn summary_tables(records: &[PhenotypeRecord], spec: &ReportSpec) -> Result<(String, String)> {
    let groups = partition(records, spec.grouping);
    let order: Vec<&str> = groups.iter().map(|(g, _)| g.as_str()).collect();

    let mut summary = String::from("variable");
    for (g, members) in &groups {
        let _ = write!(summary, ",{g} (n={})", members.len());
    }
    summary.push('\n');

    let mut tests = String::from(
        "variable,comparison,test,statistic,p_value,p_bonferroni,significant\n",
    );

    // Pairwise comparisons against the first three groups (the a/b/c
    // footnote scheme); only defined for the trajectory grouping's
    // 4-group layout but applied generally vs the leading groups.
    let n_ref = order.len().saturating_sub(1).min(3);

    for var in &spec.variables {
        let per_group: Vec<Vec<f64>> = groups
            .iter()
            .map(|(_, members)| {
                members
                    .iter()
                    .map(|&i| variable_value(&records[i], &var.name))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        // Pairwise significance markers per group.
        let mut markers: Vec<String> = vec![String::new(); groups.len()];
        if spec.pairwise {
            let mut raw: Vec<(usize, usize, String, f64, f64)> = Vec::new();
            for ref_idx in 0..n_ref {
                for g_idx in (ref_idx + 1)..groups.len() {
                    let a = &per_group[ref_idx];
                    let b = &per_group[g_idx];
                    if a.is_empty() || b.is_empty() {
                        continue;
                    }
                    let (test_name, stat, p) = pairwise_test(var.kind, a, b)?;
                    raw.push((ref_idx, g_idx, test_name, stat, p));
                }
            }
            let pvals: Vec<f64> = raw.iter().map(|r| r.4).collect();
            let adjusted = bonferroni(&pvals, pvals.len().max(1))?;
            for ((ref_idx, g_idx, test_name, stat, p), adj) in raw.into_iter().zip(adjusted) {
                let significant = adj < 0.05;
                if significant {
                    // 'a' vs group 0, 'b' vs group 1, 'c' vs group 2.
                    markers[g_idx].push((b'a' + ref_idx as u8) as char);
                }
                writeln!(
                    tests,
                    "{},{} vs {},{},{:.6},{:.6},{:.6},{}",
                    var.name, order[g_idx], order[ref_idx], test_name, stat, p, adj, significant
                )
                .unwrap();
            }
        }

        let _ = write!(summary, "{}", var.name);
        for (g_idx, values) in per_group.iter().enumerate() {
            if values.is_empty() {
                summary.push(',');
                continue;
            }
            let cell = match var.kind {
                SummaryKind::MeanSd => {
                    let (m, sd) = mean_sd(values);
                    format!("{m:.1} ({sd:.1})")
                }
                SummaryKind::MedianIqr => {
                    let mut sorted = values.clone();
                    sorted.sort_by(f64::total_cmp);
                    format!(
                        "{:.1} ({:.1}-{:.1})",
                        quantile(&sorted, 0.5),
                        quantile(&sorted, 0.25),
                        quantile(&sorted, 0.75)
                    )
                }
                SummaryKind::NPct => {
                    let n: f64 = values.iter().sum();
                    format!("{} ({:.1}%)", n as u64, 100.0 * n / values.len() as f64)
                }
            };
            let _ = write!(summary, ",{cell}{}", markers[g_idx]);
        }
        summary.push('\n');
    }
    Ok((summary, tests))
}

fn pairwise_test(kind: SummaryKind, a: &[f64], b: &[f64]) -> Result<(String, f64, f64)> {
    match kind {
        SummaryKind::MeanSd | SummaryKind::MedianIqr => {
            let r = stats::kruskal_wallis(&[a.to_vec(), b.to_vec()])?;
            Ok((r.test, r.statistic, r.p_value))
        }
        SummaryKind::NPct => {
            let a1: f64 = a.iter().sum();
            let b1: f64 = b.iter().sum();
            let table = vec![
                vec![a1, a.len() as f64 - a1],
                vec![b1, b.len() as f64 - b1],
            ];
            // Exact test when any cell is sparse; chi-square otherwise.
            let sparse = table.iter().flatten().any(|&c| c < 5.0);
            let degenerate = a1 == 0.0 && b1 == 0.0
                || a1 == a.len() as f64 && b1 == b.len() as f64;
            if degenerate {
                return Ok(("chi-square".into(), 0.0, 1.0));
            }
            let r = if sparse {
                stats::fisher_exact_2x2(&table)?
            } else {
                stats::chi_square(&table)?
            };
            Ok((r.test, r.statistic, r.p_value))
        }
    }
}

// ---------------------------------------------------------------------------
// Model suites
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    A,
    B,
    C,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::A, ModelKind::B, ModelKind::C];

    fn label(self) -> &'static str {
        match self {
            ModelKind::A => "model_a",
            ModelKind::B => "model_b",
            ModelKind::C => "model_c",
        }
    }
}

/// Exposure + adjustment design over a record subset. Group indicators
/// and race levels are built from levels present in the subset so the
/// matrix stays full rank; dropped levels fold into the reference.
fn build_design(
    records: &[&PhenotypeRecord],
    kind: ModelKind,
    intercept: bool,
    stay_covariates: bool,
) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut names: Vec<String> = Vec::new();
    if intercept {
        names.push("intercept".into());
    }
    let group_levels: Vec<TrajectoryGroup> = [
        TrajectoryGroup::RapidlyReversed,
        TrajectoryGroup::PersistentWithRecovery,
        TrajectoryGroup::PersistentWithoutRecovery,
    ]
    .into_iter()
    .filter(|g| records.iter().any(|r| r.aki.trajectory_group == *g))
    .collect();
    for g in &group_levels {
        names.push(format!("group_{}", group_label(*g)));
    }
    names.push("age".into());
    names.push("female".into());
    let mut races: Vec<&str> = records.iter().map(|r| r.race.as_str()).collect();
    races.sort_unstable();
    races.dedup();
    let race_ref = if races.contains(&"white") { "white" } else { races.first().copied().unwrap_or("") };
    let race_levels: Vec<String> = races
        .iter()
        .filter(|r| **r != race_ref)
        .map(|r| r.to_string())
        .collect();
    for r in &race_levels {
        names.push(format!("race_{r}"));
    }
    names.push("cci".into());
    if stay_covariates {
        names.push("icu".into());
        names.push("mechanical_ventilation".into());
    }
    match kind {
        ModelKind::A => {}
        ModelKind::B => names.push("severe_aki".into()),
        ModelKind::C => names.push("stage3_aki".into()),
    }

    let rows = records
        .iter()
        .map(|r| {
            let mut row = Vec::with_capacity(names.len());
            if intercept {
                row.push(1.0);
            }
            for g in &group_levels {
                row.push((r.aki.trajectory_group == *g) as u8 as f64);
            }
            row.push(r.age);
            row.push((r.sex == Sex::Female) as u8 as f64);
            for level in &race_levels {
                row.push((r.race == *level) as u8 as f64);
            }
            row.push(r.features.cci as f64);
            if stay_covariates {
                row.push(r.features.icu as u8 as f64);
                row.push(r.features.mechanical_ventilation as u8 as f64);
            }
            match kind {
                ModelKind::A => {}
                ModelKind::B => row.push((r.aki.severity == Severity::Severe) as u8 as f64),
                ModelKind::C => row.push((r.aki.worst_stage == AkiStage::Stage3) as u8 as f64),
            }
            row
        })
        .collect();
    drop_constant_columns(names, rows, intercept)
}

/// Remove covariates that take a single value over the subset (e.g. the
/// ICU flag inside the ICU stratum); they carry no information and would
/// make the matrix rank deficient. The intercept is kept when present.
fn drop_constant_columns(
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
    intercept: bool,
) -> (Vec<String>, Vec<Vec<f64>>) {
    let keep: Vec<usize> = (0..names.len())
        .filter(|&j| {
            (intercept && j == 0)
                || rows.iter().any(|r| r[j] != rows[0][j])
        })
        .collect();
    let names = keep.iter().map(|&j| names[j].clone()).collect();
    let rows = rows
        .into_iter()
        .map(|r| keep.iter().map(|&j| r[j]).collect())
        .collect();
    (names, rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedCoxFit {
    pub covariates: Vec<String>,
    pub n: usize,
    #[serde(flatten)]
    pub fit: CoxFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedLogisticFit {
    pub covariates: Vec<String>,
    pub n: usize,
    pub odds_ratios: Vec<f64>,
    pub or_ci_lower: Vec<f64>,
    pub or_ci_upper: Vec<f64>,
    #[serde(flatten)]
    pub fit: ModelFit,
}

/// Cox model over post-discharge survival among hospital survivors.
pub fn cox_model(
    records: &[&PhenotypeRecord],
    kind: ModelKind,
    tie: TieMethod,
) -> Result<NamedCoxFit> {
    let survivors: Vec<&&PhenotypeRecord> = records
        .iter()
        .filter(|r| !r.outcomes.hospital_mortality && !r.outcomes.data_error)
        .collect();
    if survivors.is_empty() {
        return Err(Error::InvalidInput("cox_model: empty subgroup".into()));
    }
    let refs: Vec<&PhenotypeRecord> = survivors.iter().map(|r| **r).collect();
    let (names, rows) = build_design(&refs, kind, false, true);
    let survival: Vec<SurvivalRecord> = refs
        .iter()
        .zip(rows)
        .map(|(r, covariates)| SurvivalRecord {
            time: r.outcomes.survival_days,
            event: r.outcomes.survival_event,
            weight: 1.0,
            covariates,
        })
        .collect();
    let fit = fit_cox(&survival, tie).map_err(|e| name_rank_error(e, &names))?;
    if !fit.fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.fit.iterations,
            reason: format!(
                "cox {} (monotone likelihood: {})",
                kind.label(),
                fit.monotone_likelihood
            ),
        });
    }
    Ok(NamedCoxFit {
        covariates: names,
        n: survival.len(),
        fit,
    })
}

/// Hospital-mortality logistic model.
pub fn logistic_model(records: &[&PhenotypeRecord], kind: ModelKind) -> Result<NamedLogisticFit> {
    if records.is_empty() {
        return Err(Error::InvalidInput("logistic_model: empty subgroup".into()));
    }
    let (names, rows) = build_design(records, kind, true, false);
    let y: Vec<bool> = records.iter().map(|r| r.outcomes.hospital_mortality).collect();
    let fit = fit_logistic(&rows, &y, None).map_err(|e| name_rank_error(e, &names))?;
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            reason: format!("logistic {}", kind.label()),
        });
    }
    let se = fit.standard_errors();
    let odds_ratios = fit.coefficients.iter().map(|b| b.exp()).collect();
    let or_ci_lower = fit
        .coefficients
        .iter()
        .zip(&se)
        .map(|(b, s)| (b - 1.96 * s).exp())
        .collect();
    let or_ci_upper = fit
        .coefficients
        .iter()
        .zip(&se)
        .map(|(b, s)| (b + 1.96 * s).exp())
        .collect();
    Ok(NamedLogisticFit {
        covariates: names,
        n: records.len(),
        odds_ratios,
        or_ci_lower,
        or_ci_upper,
        fit,
    })
}

fn name_rank_error(e: Error, names: &[String]) -> Error {
    match e {
        Error::RankDeficient(cols) => {
            let named: Vec<String> = cols
                .iter()
                .map(|&i| names.get(i).cloned().unwrap_or_else(|| format!("col{i}")))
                .collect();
            Error::InvalidInput(format!(
                "design matrix is rank deficient in columns: {}",
                named.join(", ")
            ))
        }
        other => other,
    }
}

// ---------------------------------------------------------------------------
// KM curves and IPW
// ---------------------------------------------------------------------------

fn survival_record(r: &PhenotypeRecord, weight: f64) -> SurvivalRecord {
    SurvivalRecord {
        time: r.outcomes.survival_days,
        event: r.outcomes.survival_event,
        weight,
        covariates: vec![],
    }
}

/// IPW weights from a multinomial propensity model of trajectory group on
/// age, sex, race, and CCI. Returns per-record weights aligned with
/// `records`.
pub fn trajectory_ipw(records: &[&PhenotypeRecord]) -> Result<Vec<f64>> {
    let (_, rows) = build_design_propensity(records);
    let y: Vec<usize> = records.iter().map(|r| r.aki.trajectory_group as usize).collect();
    let n_categories = 4;
    let fit = fit_multinomial(&rows, &y, n_categories)?;
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            reason: "propensity multinomial".into(),
        });
    }
    Ok(ipw_weights(&fit, &rows, &y)?.weights)
}

fn build_design_propensity(records: &[&PhenotypeRecord]) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut names = vec!["intercept".into(), "age".into(), "female".into()];
    let mut races: Vec<&str> = records.iter().map(|r| r.race.as_str()).collect();
    races.sort_unstable();
    races.dedup();
    let race_ref = if races.contains(&"white") { "white" } else { races.first().copied().unwrap_or("") };
    let race_levels: Vec<String> = races
        .iter()
        .filter(|r| **r != race_ref)
        .map(|r| r.to_string())
        .collect();
    for r in &race_levels {
        names.push(format!("race_{r}"));
    }
    names.push("cci".into());
    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![1.0, r.age, (r.sex == Sex::Female) as u8 as f64];
            for level in &race_levels {
                row.push((r.race == *level) as u8 as f64);
            }
            row.push(r.features.cci as f64);
            row
        })
        .collect();
    (names, rows)
}

fn km_curve_csv(curve: &stats::KmCurve) -> String {
    let mut out = String::from("time,survival,at_risk,events\n");
    for i in 0..curve.times.len() {
        writeln!(
            out,
            "{},{},{},{}",
            curve.times[i], curve.survival[i], curve.at_risk[i], curve.events[i]
        )
        .unwrap();
    }
    out
}

// ---------------------------------------------------------------------------
// run_stats
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsReport {
    pub n: usize,
    pub log_rank_trajectory: Option<stats::LogRankResult>,
    /// subgroup -> model -> fit.
    pub cox: BTreeMap<String, BTreeMap<String, NamedCoxFit>>,
    pub logistic: BTreeMap<String, NamedLogisticFit>,
}

/// Full reporting pass: summary + tests CSVs, model JSON, KM curve CSVs
/// (unadjusted and IPW-adjusted, per trajectory group), written under
/// `out_dir`. Re-running on the same results file is byte-identical.
pub fn run_stats(
    records: &[PhenotypeRecord],
    spec: &ReportSpec,
    tie: TieMethod,
    out_dir: &Path,
) -> Result<StatsReport> {
    if records.is_empty() {
        return Err(Error::InvalidInput("run_stats: no phenotype records".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let (summary, tests) = summary_tables(records, spec)?;
    write_file(&out_dir.join("summary.csv"), &summary)?;
    write_file(&out_dir.join("tests.csv"), &tests)?;

    let all: Vec<&PhenotypeRecord> = records.iter().collect();
    let icu: Vec<&PhenotypeRecord> = records.iter().filter(|r| r.features.icu).collect();
    let non_icu: Vec<&PhenotypeRecord> = records.iter().filter(|r| !r.features.icu).collect();

    let mut cox: BTreeMap<String, BTreeMap<String, NamedCoxFit>> = BTreeMap::new();
    for (label, subset) in [("all", &all), ("icu", &icu), ("non_icu", &non_icu)] {
        let mut fits = BTreeMap::new();
        for kind in ModelKind::ALL {
            if subset.is_empty() {
                continue;
            }
            fits.insert(kind.label().to_string(), cox_model(subset, kind, tie)?);
        }
        if !fits.is_empty() {
            cox.insert(label.to_string(), fits);
        }
    }

    let mut logistic = BTreeMap::new();
    for kind in ModelKind::ALL {
        logistic.insert(kind.label().to_string(), logistic_model(&all, kind)?);
    }

    // KM among hospital survivors, by trajectory group.
    let survivors: Vec<&PhenotypeRecord> = records
        .iter()
        .filter(|r| !r.outcomes.hospital_mortality && !r.outcomes.data_error)
        .collect();
    let km_dir = out_dir.join("km");
    fs::create_dir_all(&km_dir).map_err(|e| Error::io(&km_dir, e))?;
    let weights = trajectory_ipw(&survivors)?;
    let mut raw_groups: Vec<Vec<SurvivalRecord>> = Vec::new();
    for group in [
        TrajectoryGroup::NoAki,
        TrajectoryGroup::RapidlyReversed,
        TrajectoryGroup::PersistentWithRecovery,
        TrajectoryGroup::PersistentWithoutRecovery,
    ] {
        let label = group_label(group);
        let raw: Vec<SurvivalRecord> = survivors
            .iter()
            .filter(|r| r.aki.trajectory_group == group)
            .map(|r| survival_record(r, 1.0))
            .collect();
        let weighted: Vec<SurvivalRecord> = survivors
            .iter()
            .zip(&weights)
            .filter(|(r, _)| r.aki.trajectory_group == group)
            .map(|(r, &w)| survival_record(r, w))
            .collect();
        if !raw.is_empty() {
            let unadj = km_estimate(&raw, label)?;
            write_file(&km_dir.join(format!("unadjusted_{label}.csv")), &km_curve_csv(&unadj))?;
            let adj = km_estimate(&weighted, label)?;
            write_file(&km_dir.join(format!("ipw_{label}.csv")), &km_curve_csv(&adj))?;
            raw_groups.push(raw);
        }
    }
    let log_rank_trajectory = if raw_groups.len() >= 2 {
        Some(log_rank(&raw_groups)?)
    } else {
        None
    };

    let report = StatsReport {
        n: records.len(),
        log_rank_trajectory,
        cox,
        logistic,
    };
    write_file(
        &out_dir.join("models.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(content.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, GeneratorConfig};

    fn generate_and_phenotype(seed: u64, n: usize) -> (tempfile::TempDir, Vec<PhenotypeRecord>, RunManifest) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig {
            seed,
            n_encounters: n,
            prevalence: [0.4, 0.3, 0.15, 0.15],
            // Enough in-hospital deaths per cell for the logistic suite
            // at small n.
            hospital_mortality_rate: 0.15,
            ..GeneratorConfig::default()
        };
        synth::generate(&cfg, dir.path()).unwrap();
        let (records, manifest) = run_phenotype(
            &IngestConfig::embedded_default(),
            &CodeMapConfig::embedded_default(),
            dir.path(),
            None,
        )
        .unwrap();
        (dir, records, manifest)
    }

    #[test]
    fn count_conservation() {
        let (_dir, records, manifest) = generate_and_phenotype(5, 200);
        assert_eq!(records.len(), 200);
        assert_eq!(manifest.exclusions.loaded, 200);
        assert_eq!(manifest.exclusions.included, 200);
        let group_total: usize = manifest.group_counts.values().sum();
        assert_eq!(group_total, 200);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig {
            seed: 9,
            n_encounters: 80,
            prevalence: [0.4, 0.3, 0.15, 0.15],
            ..GeneratorConfig::default()
        };
        synth::generate(&cfg, dir.path()).unwrap();
        let out1 = tempfile::tempdir().unwrap();
        let out2 = tempfile::tempdir().unwrap();
        for out in [&out1, &out2] {
            run_phenotype(
                &IngestConfig::embedded_default(),
                &CodeMapConfig::embedded_default(),
                dir.path(),
                Some(out.path()),
            )
            .unwrap();
        }
        for name in ["results.jsonl", "manifest.json"] {
            let a = std::fs::read(out1.path().join(name)).unwrap();
            let b = std::fs::read(out2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn results_roundtrip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig {
            seed: 4,
            n_encounters: 40,
            prevalence: [0.4, 0.3, 0.15, 0.15],
            ..GeneratorConfig::default()
        };
        synth::generate(&cfg, dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        let (records, _) = run_phenotype(
            &IngestConfig::embedded_default(),
            &CodeMapConfig::embedded_default(),
            dir.path(),
            Some(out.path()),
        )
        .unwrap();
        let loaded = load_results(&out.path().join("results.jsonl")).unwrap();
        assert_eq!(records, loaded);
    }

    #[test]
    fn phenotype_matches_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig {
            seed: 21,
            n_encounters: 300,
            prevalence: [0.4, 0.3, 0.15, 0.15],
            ..GeneratorConfig::default()
        };
        let truth = synth::generate(&cfg, dir.path()).unwrap();
        let (records, _) = run_phenotype(
            &IngestConfig::embedded_default(),
            &CodeMapConfig::embedded_default(),
            dir.path(),
            None,
        )
        .unwrap();
        let by_id: BTreeMap<&str, &PhenotypeRecord> =
            records.iter().map(|r| (r.encounter_id.as_str(), r)).collect();
        for t in &truth {
            let r = by_id[t.encounter_id.as_str()];
            assert_eq!(r.aki.trajectory_group, t.group);
            assert_eq!(r.aki.severity, t.severity);
            assert_eq!(r.aki.worst_stage, t.worst_stage);
            assert_eq!(r.outcomes.hospital_mortality, t.hospital_death);
        }
    }

    #[test]
    fn stats_outputs_and_partition() {
        let (_dir, records, _) = generate_and_phenotype(13, 400);
        let out = tempfile::tempdir().unwrap();
        let spec = ReportSpec::default();
        let report = run_stats(&records, &spec, TieMethod::Efron, out.path()).unwrap();
        assert_eq!(report.n, 400);
        assert!(out.path().join("summary.csv").exists());
        assert!(out.path().join("models.json").exists());
        assert!(out.path().join("km").join("unadjusted_no-aki.csv").exists());
        assert!(out.path().join("km").join("ipw_no-aki.csv").exists());
        // Group Ns in the summary header sum to the cohort N.
        let summary = std::fs::read_to_string(out.path().join("summary.csv")).unwrap();
        let header = summary.lines().next().unwrap();
        let total: usize = header
            .split("(n=")
            .skip(1)
            .map(|s| s.split(')').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 400);
        // Cox suites for all three subgroups, three models each.
        assert_eq!(report.cox["all"].len(), 3);
        assert!(report.cox.contains_key("icu"));
        assert_eq!(report.logistic.len(), 3);
    }

    #[test]
    fn stats_rerun_byte_identical() {
        let (_dir, records, _) = generate_and_phenotype(17, 300);
        let out1 = tempfile::tempdir().unwrap();
        let out2 = tempfile::tempdir().unwrap();
        let spec = ReportSpec::default();
        run_stats(&records, &spec, TieMethod::Efron, out1.path()).unwrap();
        run_stats(&records, &spec, TieMethod::Efron, out2.path()).unwrap();
        for name in ["summary.csv", "tests.csv", "models.json"] {
            let a = std::fs::read(out1.path().join(name)).unwrap();
            let b = std::fs::read(out2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn identical_groups_test_p_near_one() {
        // Equal data in two groups -> no significance markers.
        let (_dir, records, _) = generate_and_phenotype(23, 200);
        let spec = ReportSpec {
            variables: vec![VariableSpec {
                name: "age".into(),
                kind: SummaryKind::MeanSd,
            }],
            ..ReportSpec::default()
        };
        // Force all ages equal so every pairwise test is degenerate.
        let mut records = records;
        for r in &mut records {
            r.age = 60.0;
        }
        let (summary, tests) = summary_tables(&records, &spec).unwrap();
        assert!(!summary.contains("60.0 (0.0)a"), "unexpected marker:\n{summary}");
        for line in tests.lines().skip(1) {
            assert!(line.ends_with("false"), "{line}");
        }
    }

    #[test]
    fn unknown_variable_rejected() {
        let (_dir, records, _) = generate_and_phenotype(29, 50);
        let spec = ReportSpec {
            variables: vec![VariableSpec {
                name: "no_such_variable".into(),
                kind: SummaryKind::MeanSd,
            }],
            ..ReportSpec::default()
        };
        assert!(summary_tables(&records, &spec).is_err());
    }

    #[test]
    fn outcomes_csv_row_count() {
        let (_dir, records, _) = generate_and_phenotype(31, 120);
        let out = tempfile::tempdir().unwrap();
        let path = out.path().join("outcomes.csv");
        write_outcomes_csv(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 121);
    }
}
