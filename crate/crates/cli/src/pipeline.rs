use std::fs::File;
use std::path::{Path, PathBuf};

use fundpanel_core::estimators::{fit_fixed_effects, fit_pooled_ols, fit_random_effects, EffectMode, FitResult, ModelKind};
use fundpanel_core::fundamentals::{
    distribution_export, divergence_rates, fundamentals_series, mean_divergence, theoretical_value,
    yearly_divergence_stats, DEFAULT_BIN_WIDTH,
};
use fundpanel_core::inference::{covariance, goodness_of_fit, inference_table, CovMethod};
use fundpanel_core::panel::{load_panel, panel_summary, prepare_sample, EstimationSample, PanelDataset, PanelSummary};
use fundpanel_core::selection::select_model;
use fundpanel_core::synthetic::{generate_panel, SyntheticSpec};
use fundpanel_core::Error as CoreError;

use crate::error::CliError;
use crate::output::ReportBundle;
use crate::report::{self, CoefficientReport, KeyValues};

pub const DEFAULT_ALPHA: f64 = 0.05;

pub const SELECTION_FILE: &str = "model_selection.txt";
pub const COEFFICIENTS_FILE: &str = "coefficients.txt";
pub const EFFECTS_ENTITY_FILE: &str = "effects_entity.csv";
pub const EFFECTS_PERIOD_FILE: &str = "effects_period.csv";
pub const DIVERGENCE_FILE: &str = "divergence.csv";
pub const STATS_FILE: &str = "divergence_stats.txt";
pub const HISTOGRAM_DIR: &str = "histograms";
pub const MEAN_DIVERGENCE_FILE: &str = "divergence_mean.csv";
pub const VALUES_FILE: &str = "values.csv";
pub const DROPPED_FILE: &str = "dropped.csv";
pub const RESULTS_FILE: &str = "results.kv";

/// Which part of the chain a subcommand runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Coefficient table for one model (default `fe_twoway`).
    Fit,
    /// Specification tests and model choice.
    Select,
    /// Effects, divergence rates and their yearly distribution.
    Fundamentals,
    /// Everything above.
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Fit => "fit",
            Stage::Select => "select",
            Stage::Fundamentals => "fundamentals",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub model: Option<ModelKind>,
    pub robust: CovMethod,
    pub alpha: f64,
    pub bin_width: f64,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            out_dir: out_dir.into(),
            model: None,
            robust: CovMethod::WhitePeriod,
            alpha: DEFAULT_ALPHA,
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(CliError::Usage(format!("--bin-width must be positive, got {}", self.bin_width)));
        }
        Ok(())
    }
}

pub fn read_dataset(path: &Path) -> Result<PanelDataset, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    load_panel(file).map_err(|source| CliError::Parse { path: path.to_path_buf(), source })
}

fn fit_model(sample: &EstimationSample, model: ModelKind) -> Result<FitResult, CoreError> {
    match model {
        ModelKind::Pooled => fit_pooled_ols(sample),
        ModelKind::FeIndividual => fit_fixed_effects(sample, EffectMode::Individual),
        ModelKind::FeTime => fit_fixed_effects(sample, EffectMode::Time),
        ModelKind::FeTwoway => fit_fixed_effects(sample, EffectMode::Twoway),
        ModelKind::ReIndividual => fit_random_effects(sample, EffectMode::Individual),
        ModelKind::ReTime => fit_random_effects(sample, EffectMode::Time),
    }
}

struct Context<'a> {
    sample: &'a EstimationSample,
    summary: PanelSummary,
    kv: KeyValues,
    bundle: ReportBundle,
}

fn coefficient_reports(ctx: &mut Context<'_>, fit: &FitResult, robust: CovMethod) -> Result<(), CliError> {
    let cov = covariance(fit, ctx.sample, robust)?;
    let table = inference_table(fit, &cov)?;
    let gof = goodness_of_fit(fit, ctx.sample)?;
    let r = CoefficientReport { fit, cov: &cov, table: &table, gof: &gof };
    ctx.bundle.insert(COEFFICIENTS_FILE, report::coefficients_text(&r, &ctx.summary));
    report::coefficients_kv(&mut ctx.kv, &r);
    Ok(())
}

fn fundamentals_reports(ctx: &mut Context<'_>, fit: &FitResult, bin_width: f64) -> Result<(), CliError> {
    let sample = ctx.sample;
    let effects = fit
        .effects
        .as_ref()
        .ok_or_else(|| CoreError::InvalidArgument("fit carries no effects".into()))?;
    let theoretical = theoretical_value(sample, fit, effects)?;
    let fundamentals = fundamentals_series(sample, fit, effects)?;
    let divergence = divergence_rates(sample, &fundamentals)?;
    let stats = yearly_divergence_stats(&divergence);
    let means = mean_divergence(&divergence);
    let hist = distribution_export(&divergence, &divergence.years(), bin_width)?;

    ctx.bundle.insert(EFFECTS_ENTITY_FILE, report::effects_entity_csv(effects));
    ctx.bundle.insert(EFFECTS_PERIOD_FILE, report::effects_period_csv(effects));
    ctx.bundle.insert(DIVERGENCE_FILE, report::divergence_csv(&divergence));
    ctx.bundle.insert(STATS_FILE, report::stats_text(&stats, fit.model.tag(), &ctx.summary));
    ctx.bundle.insert(MEAN_DIVERGENCE_FILE, report::mean_divergence_csv(&means, &stats));
    ctx.bundle.insert(VALUES_FILE, report::values_csv(sample, &theoretical, &fundamentals));
    for (year, bins) in &hist.series {
        ctx.bundle
            .insert(Path::new(HISTOGRAM_DIR).join(format!("hist_{year}.csv")), report::histogram_csv(bins));
    }

    let kv = &mut ctx.kv;
    kv.text("fundamentals.model", fit.model);
    kv.num("fundamentals.a0", effects.a0);
    kv.text("fundamentals.normalization", effects.normalization);
    kv.text("fundamentals.sweeps", effects.sweeps);
    kv.num("fundamentals.bin_width", bin_width);
    report::stats_kv(kv, &stats);
    Ok(())
}

/// Runs a stage on an in-memory dataset and renders every artifact without
/// touching the file system.
pub fn build_reports(stage: Stage, config: &PipelineConfig, data: &PanelDataset) -> Result<ReportBundle, CliError> {
    config.validate()?;
    let sample = prepare_sample(data).map_err(|source| CliError::Parse { path: config.input.clone(), source })?;
    let mut ctx = Context {
        sample: &sample,
        summary: panel_summary(&sample),
        kv: KeyValues::new(stage.name()),
        bundle: ReportBundle::default(),
    };
    report::sample_kv(&mut ctx.kv, data.len(), &ctx.summary, &sample, &data.currency_code);
    let mut dropped = Vec::new();
    sample
        .write_drop_ledger(&mut dropped)
        .map_err(|e| CliError::io(DROPPED_FILE, e))?;
    ctx.bundle.insert(DROPPED_FILE, dropped);

    let chosen = match (stage, config.model) {
        (Stage::Select | Stage::Report, None) => {
            let selection = select_model(&sample, config.alpha)?;
            ctx.bundle.insert(SELECTION_FILE, report::selection_text(&selection, &ctx.summary));
            report::selection_kv(&mut ctx.kv, &selection);
            selection.selected_model
        }
        (Stage::Select | Stage::Report, Some(m)) => {
            ctx.bundle.insert(SELECTION_FILE, report::override_text(m.tag(), &ctx.summary));
            report::override_kv(&mut ctx.kv, m.tag());
            m
        }
        (Stage::Fundamentals, Some(m)) if m != ModelKind::FeTwoway => {
            return Err(CliError::Usage(format!(
                "fundamentals are defined by the two-way fixed-effects model; --model {m} is not supported here"
            )));
        }
        (Stage::Fit | Stage::Fundamentals, m) => m.unwrap_or(ModelKind::FeTwoway),
    };

    let needs_coefficients = matches!(stage, Stage::Fit | Stage::Report);
    let needs_fundamentals = matches!(stage, Stage::Fundamentals | Stage::Report);
    let chosen_fit = if needs_coefficients { Some(fit_model(&sample, chosen)?) } else { None };
    if let Some(fit) = &chosen_fit {
        coefficient_reports(&mut ctx, fit, config.robust)?;
    }
    if needs_fundamentals {
        let twoway = match chosen_fit {
            Some(fit) if fit.model == ModelKind::FeTwoway => fit,
            _ => fit_model(&sample, ModelKind::FeTwoway)?,
        };
        fundamentals_reports(&mut ctx, &twoway, config.bin_width)?;
    } else if stage == Stage::Fit && chosen == ModelKind::FeTwoway {
        let effects = chosen_fit.as_ref().and_then(|f| f.effects.as_ref()).expect("two-way fit has effects");
        ctx.bundle.insert(EFFECTS_ENTITY_FILE, report::effects_entity_csv(effects));
        ctx.bundle.insert(EFFECTS_PERIOD_FILE, report::effects_period_csv(effects));
        ctx.kv.num("fundamentals.a0", effects.a0);
    }

    let Context { kv, mut bundle, .. } = ctx;
    bundle.insert(RESULTS_FILE, kv.render());
    Ok(bundle)
}

/// Reads the input, builds all reports in memory and writes them atomically.
pub fn run_pipeline(stage: Stage, config: &PipelineConfig) -> Result<ReportBundle, CliError> {
    config.validate()?;
    let data = read_dataset(&config.input)?;
    let bundle = build_reports(stage, config, &data)?;
    bundle.write_to(&config.out_dir)?;
    Ok(bundle)
}

pub const SIMULATED_PANEL_FILE: &str = "panel.csv";
pub const SIMULATED_TRUTH_FILE: &str = "truth.kv";
pub const SIMULATED_SPEC_FILE: &str = "spec.toml";

pub fn read_spec(path: &Path) -> Result<SyntheticSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    SyntheticSpec::from_toml_str(&text).map_err(|source| CliError::Parse { path: path.to_path_buf(), source })
}

/// Generates a synthetic panel and renders it with its ground truth.
pub fn simulate_bundle(spec: &SyntheticSpec) -> Result<ReportBundle, CliError> {
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let panel = generate_panel(spec)?;
    let mut bundle = ReportBundle::default();
    let mut csv = Vec::new();
    panel
        .dataset
        .write_csv(&mut csv)
        .map_err(|e| CliError::io(SIMULATED_PANEL_FILE, e))?;
    bundle.insert(SIMULATED_PANEL_FILE, csv);

    let mut kv = KeyValues::new("simulate");
    kv.text("seed", spec.seed);
    kv.num("a0", panel.truth.a0);
    for (name, b) in fundpanel_core::panel::REGRESSOR_NAMES.iter().zip(panel.truth.b) {
        kv.num(format!("b.{name}"), b);
    }
    kv.text("rows", panel.truth.rows.len());
    kv.text("forced_nonpositive", panel.truth.forced_nonpositive);
    for (y, g) in &panel.truth.gamma {
        kv.num(format!("gamma.{y}"), *g);
    }
    for (e, m) in &panel.truth.mu {
        kv.num(format!("mu.{e}"), *m);
    }
    bundle.insert(SIMULATED_TRUTH_FILE, kv.render());
    bundle.insert(SIMULATED_SPEC_FILE, spec.to_toml_string());
    Ok(bundle)
}
