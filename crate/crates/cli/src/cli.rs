//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fundpanel_core::estimators::ModelKind;
use fundpanel_core::fundamentals::DEFAULT_BIN_WIDTH;
use fundpanel_core::inference::CovMethod;
use fundpanel_core::synthetic::SyntheticSpec;

use crate::error::{CliError, EXIT_OK, EXIT_USAGE};
use crate::pipeline::{self, PipelineConfig, Stage, DEFAULT_ALPHA};

#[derive(Debug, Parser)]
#[command(name = "fundpanel", version, about = "Panel estimation of share-price fundamentals and divergence rates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model and write its coefficient table.
    Fit(PipelineArgs),
    /// Run the specification tests and choose a model.
    Select(PipelineArgs),
    /// Recover effects, fundamentals and divergence statistics.
    Fundamentals(PipelineArgs),
    /// Run the full chain and write every report.
    Report(PipelineArgs),
    /// Generate a synthetic panel with known parameters.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Robust {
    Classical,
    WhitePeriod,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Model {
    Pooled,
    FeIndividual,
    FeTime,
    FeTwoway,
    ReIndividual,
    ReTime,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Pooled => ModelKind::Pooled,
            Model::FeIndividual => ModelKind::FeIndividual,
            Model::FeTime => ModelKind::FeTime,
            Model::FeTwoway => ModelKind::FeTwoway,
            Model::ReIndividual => ModelKind::ReIndividual,
            Model::ReTime => ModelKind::ReTime,
        }
    }
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Panel CSV with entity_id, year, price, dps, cfps, bvps columns.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Skip model selection and use this model.
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long, value_enum, default_value = "white-period")]
    robust: Robust,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Histogram bin width in log units.
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    bin_width: f64,
    /// Accepted for symmetry with `simulate`; estimation is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// TOML file with generator settings; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            input: self.input.clone(),
            out_dir: self.out_dir.clone(),
            model: self.model.map(ModelKind::from),
            robust: match self.robust {
                Robust::Classical => CovMethod::Classical,
                Robust::WhitePeriod => CovMethod::WhitePeriod,
            },
            alpha: self.alpha,
            bin_width: self.bin_width,
        }
    }
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut spec = match &args.config {
        Some(path) => pipeline::read_spec(path)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    pipeline::simulate_bundle(&spec)?.write_to(&args.out_dir)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let (stage, args) = match command {
        Command::Fit(a) => (Stage::Fit, a),
        Command::Select(a) => (Stage::Select, a),
        Command::Fundamentals(a) => (Stage::Fundamentals, a),
        Command::Report(a) => (Stage::Report, a),
        Command::Simulate(a) => return simulate(&a),
    };
    pipeline::run_pipeline(stage, &args.config()).map(|_| ())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("fundpanel: {e}");
            e.exit_code()
        }
    }
}
