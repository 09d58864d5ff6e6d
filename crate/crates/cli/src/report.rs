//! Text and delimited renderings of pipeline results.

use std::fmt::{Display, Write as _};

use fundpanel_core::fundamentals::{Divergence, HistogramBin, ValueSeries, YearStats};
use fundpanel_core::inference::{CoefficientTable, CovMatrix, GoodnessOfFit};
use fundpanel_core::panel::{EstimationSample, PanelSummary};
use fundpanel_core::estimators::{EffectsDecomposition, FitResult};
use fundpanel_core::selection::ModelSelectionReport;

pub const RESULTS_HEADER: &str = "# fundpanel-results v1";

/// Decimals used for each kind of number in the text reports.
const COEF_DECIMALS: usize = 6;
const STAT_DECIMALS: usize = 4;
const P_DECIMALS: usize = 4;

pub fn fixed(v: f64, decimals: usize) -> String {
    if v.is_finite() {
        format!("{v:.decimals$}")
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |v| fixed(v, decimals))
}

/// Line-oriented `key=value` results with a versioned header.
#[derive(Debug, Default)]
pub struct KeyValues {
    lines: Vec<String>,
}

impl KeyValues {
    pub fn new(command: &str) -> Self {
        let mut kv = Self::default();
        kv.text("command", command);
        kv
    }

    pub fn text(&mut self, key: impl Display, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        self.lines.push(format!("{key}={value}"));
    }

    /// Full-precision number (shortest representation that round-trips).
    pub fn num(&mut self, key: impl Display, value: f64) {
        self.lines.push(format!("{key}={value:?}"));
    }

    pub fn opt_num(&mut self, key: impl Display, value: Option<f64>) {
        match value {
            Some(v) => self.num(key, v),
            None => self.text(key, "NA"),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::from(RESULTS_HEADER);
        out.push('\n');
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

pub fn sample_kv(kv: &mut KeyValues, input_rows: usize, summary: &PanelSummary, sample: &EstimationSample, currency: &str) {
    kv.text("input.rows", input_rows);
    kv.text("input.currency", currency);
    kv.text("sample.observations", summary.n_obs);
    kv.text("sample.entities", summary.n_entities);
    kv.text("sample.periods", summary.n_periods);
    kv.text("sample.balanced", summary.is_balanced);
    kv.text("sample.dropped", sample.drop_ledger.len());
}

fn sample_line(summary: &PanelSummary) -> String {
    format!(
        "observations: {}  entities: {}  periods: {}  balanced: {}\n",
        summary.n_obs,
        summary.n_entities,
        summary.n_periods,
        if summary.is_balanced { "yes" } else { "no" }
    )
}

pub fn selection_text(report: &ModelSelectionReport, summary: &PanelSummary) -> String {
    let mut s = String::from("Model selection\n");
    let _ = writeln!(s, "alpha: {}", report.alpha);
    s.push_str(&sample_line(summary));
    s.push('\n');
    let _ = writeln!(s, "{:<50} {:>14} {:>16} {:>10}  decision", "test", "statistic", "df", "p-value");
    for t in &report.tests {
        let _ = writeln!(
            s,
            "{:<50} {:>14} {:>16} {:>10}  {}",
            t.name,
            fixed(t.statistic, STAT_DECIMALS),
            t.df.to_string(),
            fixed(t.p_value, P_DECIMALS),
            t.decision
        );
    }
    let flagged: Vec<_> = report.tests.iter().filter_map(|t| t.flag.as_ref().map(|f| (t, f))).collect();
    if !flagged.is_empty() {
        s.push_str("\nflags:\n");
        for (t, f) in flagged {
            let _ = writeln!(s, "  {}: {f}", t.name);
        }
    }
    s.push_str("\nprocedure:\n");
    for (i, step) in report.narrative.iter().enumerate() {
        let _ = writeln!(s, "  {}. {}", i + 1, step.description);
        let _ = writeln!(s, "     tests: {}", step.tests.join("; "));
    }
    if !report.skipped.is_empty() {
        s.push_str("\nskipped:\n");
        for sk in &report.skipped {
            let _ = writeln!(s, "  {sk}");
        }
    }
    let _ = writeln!(s, "\nselected model: {}", report.selected_model);
    s
}

pub fn selection_kv(kv: &mut KeyValues, report: &ModelSelectionReport) {
    kv.num("selection.alpha", report.alpha);
    kv.text("selection.override", "none");
    kv.text("selection.selected", report.selected_model);
    for t in &report.tests {
        let p = format!("test.{}", slug(&t.name));
        kv.text(format!("{p}.name"), &t.name);
        kv.num(format!("{p}.statistic"), t.statistic);
        kv.text(format!("{p}.df"), t.df.to_string().trim_matches(|c| c == '(' || c == ')'));
        kv.num(format!("{p}.p_value"), t.p_value);
        kv.text(format!("{p}.decision"), t.decision);
        if let Some(f) = &t.flag {
            kv.text(format!("{p}.flag"), f);
        }
    }
    for (i, step) in report.narrative.iter().enumerate() {
        kv.text(format!("selection.step.{}.text", i + 1), &step.description);
        kv.text(format!("selection.step.{}.tests", i + 1), step.tests.join("; "));
    }
    for (i, sk) in report.skipped.iter().enumerate() {
        kv.text(format!("selection.skipped.{}", i + 1), sk);
    }
}

pub fn override_text(model: &str, summary: &PanelSummary) -> String {
    let mut s = String::from("Model selection\n");
    s.push_str(&sample_line(summary));
    let _ = writeln!(s, "\nmodel override: {model} (selection tests not run)");
    let _ = writeln!(s, "\nselected model: {model}");
    s
}

pub fn override_kv(kv: &mut KeyValues, model: &str) {
    kv.text("selection.override", model);
    kv.text("selection.selected", model);
}

pub struct CoefficientReport<'a> {
    pub fit: &'a FitResult,
    pub cov: &'a CovMatrix,
    pub table: &'a CoefficientTable,
    pub gof: &'a GoodnessOfFit,
}

pub fn coefficients_text(r: &CoefficientReport<'_>, summary: &PanelSummary) -> String {
    let mut s = String::from("Coefficient estimates\n");
    let _ = writeln!(s, "dependent variable: ln share price");
    let _ = writeln!(s, "model: {}", r.fit.model);
    match r.cov.cluster_count {
        Some(g) => {
            let _ = writeln!(s, "covariance: {} (entity clusters: {g})", r.cov.method);
        }
        None => {
            let _ = writeln!(s, "covariance: {}", r.cov.method);
        }
    }
    s.push_str(&sample_line(summary));
    let _ = writeln!(s, "residual df: {}\n", r.table.df);

    let w = 14;
    let _ = write!(s, "{:<24}", "");
    for row in &r.table.rows {
        let _ = write!(s, "{:>w$}", row.name);
    }
    s.push('\n');
    let line = |s: &mut String, label: &str, f: &dyn Fn(&fundpanel_core::inference::CoefficientRow) -> String| {
        let _ = write!(s, "{label:<24}");
        for row in &r.table.rows {
            let _ = write!(s, "{:>w$}", f(row));
        }
        s.push('\n');
    };
    line(&mut s, "coefficient", &|row| fixed(row.estimate, COEF_DECIMALS));
    line(&mut s, "std. error", &|row| fixed(row.std_error, COEF_DECIMALS));
    line(&mut s, "t-statistic", &|row| fixed(row.t_stat, STAT_DECIMALS));
    line(&mut s, "p-value", &|row| fixed(row.p_value, P_DECIMALS));
    let _ = writeln!(s, "{:<24}{:>w$}", "R-squared", fixed(r.gof.r_squared, STAT_DECIMALS));
    let _ = writeln!(s, "{:<24}{:>w$}", "F-statistic", fixed(r.gof.f_stat, STAT_DECIMALS));
    let _ = writeln!(s, "{:<24}{:>w$}", "p-value (F-statistic)", fixed(r.gof.f_pvalue, P_DECIMALS));
    s
}

pub fn coefficients_kv(kv: &mut KeyValues, r: &CoefficientReport<'_>) {
    kv.text("fit.model", r.fit.model);
    kv.text("fit.covariance", r.cov.method);
    if let Some(g) = r.cov.cluster_count {
        kv.text("fit.clusters", g);
    }
    if let Some(c) = r.cov.small_sample_factor {
        kv.num("fit.small_sample_factor", c);
    }
    kv.text("fit.observations", r.fit.n_obs);
    kv.text("fit.df_resid", r.table.df);
    kv.num("fit.ssr", r.fit.ssr);
    kv.text("fit.demeaning_sweeps", r.fit.demeaning_sweeps);
    for row in &r.table.rows {
        let p = format!("coef.{}", row.name);
        kv.num(format!("{p}.estimate"), row.estimate);
        kv.num(format!("{p}.std_error"), row.std_error);
        kv.num(format!("{p}.t_stat"), row.t_stat);
        kv.num(format!("{p}.p_value"), row.p_value);
    }
    kv.num("fit.r_squared", r.gof.r_squared);
    kv.num("fit.f_stat", r.gof.f_stat);
    kv.text("fit.f_df1", r.gof.f_df.0);
    kv.text("fit.f_df2", r.gof.f_df.1);
    kv.num("fit.f_pvalue", r.gof.f_pvalue);
    if let Some(vc) = &r.fit.variance_components {
        kv.num("fit.sigma2_eps", vc.sigma2_eps);
        kv.num("fit.sigma2_effect", vc.sigma2_effect);
        kv.text("fit.variance_floored", vc.floored);
    }
}

pub fn stats_text(stats: &[YearStats], model: &str, summary: &PanelSummary) -> String {
    let d = STAT_DECIMALS;
    let mut s = String::from("Divergence rate by year (log units)\n");
    let _ = writeln!(s, "fundamentals model: {model}");
    s.push_str(&sample_line(summary));
    s.push_str("std. dev. uses the Bessel-corrected variance; skewness and kurtosis use population central moments\n\n");
    let _ = writeln!(
        s,
        "{:<6} {:>10} {:>10} {:>16} {:>18} {:>10} {:>13}  flag",
        "year", "mean", "std. dev.", "kurtosis (raw)", "kurtosis (excess)", "skewness", "observations"
    );
    for r in stats {
        let _ = writeln!(
            s,
            "{:<6} {:>10} {:>10} {:>16} {:>18} {:>10} {:>13}  {}",
            r.year,
            opt(r.mean, d),
            opt(r.std_dev, d),
            opt(r.raw_kurtosis, d),
            opt(r.excess_kurtosis, d),
            opt(r.skewness, d),
            r.n_obs,
            r.flag.map_or_else(|| "-".to_string(), |f| f.to_string())
        );
    }
    s
}

pub fn stats_kv(kv: &mut KeyValues, stats: &[YearStats]) {
    for r in stats {
        let p = format!("stats.{}", r.year);
        kv.text(format!("{p}.n_obs"), r.n_obs);
        kv.opt_num(format!("{p}.mean"), r.mean);
        kv.opt_num(format!("{p}.std_dev"), r.std_dev);
        kv.opt_num(format!("{p}.raw_kurtosis"), r.raw_kurtosis);
        kv.opt_num(format!("{p}.excess_kurtosis"), r.excess_kurtosis);
        kv.opt_num(format!("{p}.skewness"), r.skewness);
        kv.text(format!("{p}.flag"), r.flag.map_or_else(|| "-".to_string(), |f| f.to_string()));
    }
}

pub fn effects_entity_csv(e: &EffectsDecomposition) -> String {
    let mut s = String::from("entity_id,mu\n");
    for (id, v) in &e.mu {
        let _ = writeln!(s, "{id},{v:?}");
    }
    s
}

pub fn effects_period_csv(e: &EffectsDecomposition) -> String {
    let mut s = String::from("year,gamma\n");
    for (y, v) in &e.gamma {
        let _ = writeln!(s, "{y},{v:?}");
    }
    s
}

pub fn divergence_csv(d: &Divergence) -> String {
    let mut s = String::from("entity_id,year,divergence\n");
    for r in &d.rows {
        let _ = writeln!(s, "{},{},{:?}", r.entity_id, r.period, r.value);
    }
    s
}

pub fn mean_divergence_csv(means: &[(i32, f64)], stats: &[YearStats]) -> String {
    let mut s = String::from("year,mean_divergence,n_obs\n");
    for ((y, m), st) in means.iter().zip(stats) {
        let _ = writeln!(s, "{y},{m:?},{}", st.n_obs);
    }
    s
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_left,bin_right,rel_freq\n");
    for b in bins {
        let _ = writeln!(s, "{:?},{:?},{:?}", b.bin_left, b.bin_right, b.rel_freq);
    }
    s
}

pub fn values_csv(sample: &EstimationSample, theoretical: &ValueSeries, fundamentals: &ValueSeries) -> String {
    let mut s = String::from("entity_id,year,ln_price,ln_theoretical,ln_fundamentals\n");
    for ((r, t), f) in sample.rows.iter().zip(&theoretical.rows).zip(&fundamentals.rows) {
        let _ = writeln!(s, "{},{},{:?},{:?},{:?}", t.entity_id, t.period, r.ln_y, t.value, f.value);
    }
    s
}
