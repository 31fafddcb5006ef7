//! Command-line interface for the kidney-phenotyping toolkit.
//!
//! Exit codes: 0 success, 1 data-quality failure, 2 configuration error,
//! 3 numerical non-convergence.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use aki_pheno::config::{CodeMapConfig, IngestConfig, MortalityAnchor};
use aki_pheno::error::{Error, Result};
use aki_pheno::pipeline::{self, ReportSpec};
use aki_pheno::stats::TieMethod;
use aki_pheno::synth::{self, GeneratorConfig};

#[derive(Parser)]
#[command(
    name = "akipheno",
    version,
    about = "Computable kidney-health phenotyping: AKI trajectories, outcomes, and statistics"
)]
struct Cli {
    /// Worker thread cap. All outputs are byte-identical regardless of
    /// this value; computation is single-threaded by design.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Ingest configuration JSON (column maps, tolerances, anchor).
    #[arg(long)]
    ingest_config: Option<PathBuf>,
    /// Code-list configuration JSON (diagnosis/procedure/medication maps).
    #[arg(long)]
    code_map: Option<PathBuf>,
    /// Mortality anchor override: admission | discharge.
    #[arg(long)]
    anchor: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(IngestConfig, CodeMapConfig)> {
        let mut ingest = match &self.ingest_config {
            Some(p) => IngestConfig::from_file(p)?,
            None => IngestConfig::embedded_default(),
        };
        if let Some(anchor) = &self.anchor {
            ingest.mortality_anchor = match anchor.as_str() {
                "admission" => MortalityAnchor::Admission,
                "discharge" => MortalityAnchor::Discharge,
                other => {
                    return Err(Error::Config(format!(
                        "unknown anchor `{other}` (expected admission or discharge)"
                    )))
                }
            };
        }
        let code_map = match &self.code_map {
            Some(p) => CodeMapConfig::from_file(p)?,
            None => CodeMapConfig::embedded_default(),
        };
        Ok((ingest, code_map))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Classify every encounter (CKD status, reference creatinine, AKI
    /// stage/trajectory/subphenotype, features) and write results.jsonl
    /// plus a reproducibility manifest.
    Phenotype {
        /// Directory with the seven input CSV tables.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for results.jsonl and manifest.json.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the phenotype pass and emit a flat per-encounter outcomes.csv.
    Outcomes {
        #[arg(long)]
        input: PathBuf,
        /// Output directory for outcomes.csv (plus results.jsonl/manifest).
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Summary tables, pairwise tests, Cox/logistic model suites, and
    /// KM curves from a phenotype results file.
    Stats {
        /// results.jsonl produced by `phenotype`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Report specification JSON (grouping, variables, pairwise flag).
        #[arg(long)]
        report_spec: Option<PathBuf>,
        /// Tie handling for Cox models: efron | breslow.
        #[arg(long, default_value = "efron")]
        tie_method: String,
    },
    /// Generate a deterministic synthetic cohort with ground-truth labels.
    Simulate {
        #[arg(long)]
        output: PathBuf,
        /// Generator configuration JSON; defaults are used if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// RNG seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Encounter count override.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Validate configuration files without running anything.
    ValidateConfig {
        #[arg(long)]
        ingest_config: Option<PathBuf>,
        #[arg(long)]
        code_map: Option<PathBuf>,
        /// Generator configuration to validate as well.
        #[arg(long)]
        generator: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phenotype { input, output, config } => {
            let (ingest, code_map) = config.load()?;
            let (records, manifest) =
                pipeline::run_phenotype(&ingest, &code_map, &input, Some(&output))?;
            eprintln!(
                "phenotyped {} encounters ({} with AKI); parse errors: {}",
                records.len(),
                manifest.aki_encounters,
                manifest.parse_errors
            );
            for (group, n) in &manifest.group_counts {
                eprintln!("  {group}: {n}");
            }
        }
        Command::Outcomes { input, output, config } => {
            let (ingest, code_map) = config.load()?;
            let (records, _) =
                pipeline::run_phenotype(&ingest, &code_map, &input, Some(&output))?;
            pipeline::write_outcomes_csv(&records, &output.join("outcomes.csv"))?;
            eprintln!("wrote outcomes for {} encounters", records.len());
        }
        Command::Stats { results, output, report_spec, tie_method } => {
            let spec = match report_spec {
                Some(p) => ReportSpec::from_file(&p)?,
                None => ReportSpec::default(),
            };
            let tie = TieMethod::from_str(&tie_method)?;
            let records = pipeline::load_results(&results)?;
            let report = pipeline::run_stats(&records, &spec, tie, &output)?;
            eprintln!(
                "stats over {} encounters: {} cox suites, {} logistic models",
                report.n,
                report.cox.len(),
                report.logistic.len()
            );
        }
        Command::Simulate { output, config, seed, n } => {
            let mut cfg = match config {
                Some(p) => GeneratorConfig::from_file(&p)?,
                None => GeneratorConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = n {
                cfg.n_encounters = n;
            }
            let truth = synth::generate(&cfg, &output)?;
            eprintln!(
                "generated {} encounters (seed {}) into {}",
                truth.len(),
                cfg.seed,
                output.display()
            );
        }
        Command::ValidateConfig { ingest_config, code_map, generator } => {
            if let Some(p) = &ingest_config {
                IngestConfig::from_file(p)?;
                eprintln!("{}: ok", p.display());
            }
            if let Some(p) = &code_map {
                CodeMapConfig::from_file(p)?;
                eprintln!("{}: ok", p.display());
            }
            if let Some(p) = &generator {
                let cfg = GeneratorConfig::from_file(p)?;
                cfg.validate()?;
                eprintln!("{}: ok", p.display());
            }
            if ingest_config.is_none() && code_map.is_none() && generator.is_none() {
                IngestConfig::embedded_default().validate()?;
                CodeMapConfig::embedded_default().validate()?;
                eprintln!("embedded defaults: ok");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
