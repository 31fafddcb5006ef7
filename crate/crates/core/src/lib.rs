//! Computable kidney-health phenotyping over common-data-model tables.
//!
//! The pipeline runs in stages: delimited-table ingestion and cohort
//! filtering ([`ingest`]), reference-creatinine determination and CKD
//! staging ([`baseline`], [`egfr`]), KDIGO AKI detection with trajectory
//! and recovery classification ([`aki`]), code-driven feature extraction
//! ([`features`]), outcome derivation ([`outcomes`]), and a statistical
//! layer with Kaplan-Meier, log-rank, logistic/multinomial/Cox models and
//! inverse-probability weighting ([`stats`]). A deterministic synthetic
//! cohort generator ([`synth`]) produces ground-truth-labelled input
//! tables for end-to-end validation.

pub mod aki;
pub mod baseline;
pub mod codes;
pub mod config;
pub mod egfr;
pub mod error;
pub mod features;
pub mod ingest;
pub mod outcomes;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
