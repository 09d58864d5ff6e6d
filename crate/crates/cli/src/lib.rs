//! Command-line pipeline for share-price fundamentals: ingest a firm-year
//! panel, fit and select a panel model, and write divergence reports.

pub mod cli;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod report;

pub use error::CliError;
pub use output::ReportBundle;
pub use pipeline::{build_reports, run_pipeline, simulate_bundle, PipelineConfig, Stage};
