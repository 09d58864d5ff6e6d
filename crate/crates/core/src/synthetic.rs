//! Synthetic unbalanced panels with known effects, slopes and errors.
//!
//! `ln Y_it = a0 + μ_i + γ_t + Σ b_k ln X_k,it + ε_it`, Gaussian throughout.
//! Every entity draws from its own ChaCha stream, so output depends only on
//! the seed and not on the number of worker threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Observation, PanelDataset, N_REGRESSORS, UNSPECIFIED_CURRENCY};

/// Bound on missingness redraws for an entity that lost every row.
pub const MISSINGNESS_RETRIES: usize = 100;

/// A one-year shock added to the log price of a fraction of entities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashSpec {
    pub year: i32,
    pub shock: f64,
    /// Share of entities hit. At 1.0 the shock is part of that year's `γ_t`;
    /// below 1.0 it is a per-row component recorded in the truth.
    #[serde(default = "one")]
    pub shocked_fraction: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_entities: usize,
    pub n_periods: usize,
    pub first_year: i32,
    pub b: [f64; N_REGRESSORS],
    pub a0: f64,
    pub sigma_mu: f64,
    pub sigma_gamma: f64,
    pub sigma_eps: f64,
    /// Correlation between `μ_i` and each regressor's entity-level mean.
    pub effect_regressor_corr: f64,
    pub missing_rate: f64,
    pub crash_year: Option<CrashSpec>,
    pub seed: u64,
    pub regressor_mean: [f64; N_REGRESSORS],
    pub regressor_between_sd: f64,
    pub regressor_within_sd: f64,
    /// AR(1) coefficient of `ε` within an entity.
    pub eps_ar1: f64,
    /// AR(1) coefficient of the regressors' within-entity deviations.
    pub regressor_ar1: f64,
    /// Share of rows whose dividends are set to zero (dropped at ingestion).
    pub nonpositive_rate: f64,
    pub currency: Option<String>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_entities: 2000,
            n_periods: 10,
            first_year: 2004,
            b: [0.137, 0.208, 0.378],
            a0: 1.485,
            sigma_mu: 1.0,
            sigma_gamma: 0.1,
            sigma_eps: 0.3,
            effect_regressor_corr: 0.0,
            missing_rate: 0.1,
            crash_year: None,
            seed: 1,
            regressor_mean: [-1.0, 0.0, 1.0],
            regressor_between_sd: 2.0,
            regressor_within_sd: 0.5,
            eps_ar1: 0.0,
            regressor_ar1: 0.0,
            nonpositive_rate: 0.0,
            currency: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

impl SyntheticSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn years(&self) -> std::ops::Range<i32> {
        self.first_year..self.first_year + self.n_periods as i32
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_entities == 0 || self.n_periods == 0 {
            return Err(invalid("n_entities and n_periods must be positive"));
        }
        i32::try_from(self.n_periods)
            .ok()
            .and_then(|n| self.first_year.checked_add(n))
            .ok_or_else(|| invalid("period range overflows"))?;
        let finite = self.b.iter().chain(&self.regressor_mean).chain([&self.a0]).all(|v| v.is_finite());
        if !finite {
            return Err(invalid("coefficients and means must be finite"));
        }
        for (name, v) in [
            ("sigma_mu", self.sigma_mu),
            ("sigma_gamma", self.sigma_gamma),
            ("sigma_eps", self.sigma_eps),
            ("regressor_between_sd", self.regressor_between_sd),
            ("regressor_within_sd", self.regressor_within_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.effect_regressor_corr) {
            return Err(invalid("effect_regressor_corr must lie in [-1, 1]"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(invalid("missing_rate must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.nonpositive_rate) {
            return Err(invalid("nonpositive_rate must lie in [0, 1]"));
        }
        for (name, v) in [("eps_ar1", self.eps_ar1), ("regressor_ar1", self.regressor_ar1)] {
            if !(v > -1.0 && v < 1.0) {
                return Err(invalid(format!("{name} must lie in (-1, 1)")));
            }
        }
        if let Some(c) = &self.crash_year {
            if !self.years().contains(&c.year) {
                return Err(invalid(format!("crash year {} is outside the simulated years", c.year)));
            }
            if !c.shock.is_finite() || !(c.shocked_fraction > 0.0 && c.shocked_fraction <= 1.0) {
                return Err(invalid("crash shock must be finite and shocked_fraction in (0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub entity_id: String,
    pub period: i32,
    pub ln_x: [f64; N_REGRESSORS],
    pub eps: f64,
    /// Per-row crash component (zero unless a partial crash hits this row).
    pub shock: f64,
    pub ln_y: f64,
}

/// Parameters and draws behind a generated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub b: [f64; N_REGRESSORS],
    pub a0: f64,
    /// Recentered to observation-weighted mean zero.
    pub mu: BTreeMap<String, f64>,
    /// Recentered to observation-weighted mean zero.
    pub gamma: BTreeMap<i32, f64>,
    pub rows: Vec<TruthRow>,
    /// Rows whose dividends were forced to zero.
    pub forced_nonpositive: usize,
}

impl SyntheticTruth {
    /// Recombines the recorded components of a row into `ln Y`.
    pub fn recombine(&self, row: &TruthRow) -> f64 {
        let xb: f64 = row.ln_x.iter().zip(&self.b).map(|(x, b)| x * b).sum();
        self.a0 + self.mu[&row.entity_id] + self.gamma[&row.period] + xb + row.eps + row.shock
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub dataset: PanelDataset,
    pub truth: SyntheticTruth,
}

pub fn entity_name(i: usize) -> String {
    format!("E{i:05}")
}

struct EntityDraw {
    mu: f64,
    /// (period offset, ln_x, eps, shock, nonpositive)
    rows: Vec<(usize, [f64; N_REGRESSORS], f64, f64, bool)>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn draw_entity(spec: &SyntheticSpec, index: usize) -> Result<EntityDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let t = spec.n_periods;

    let z = normal(&mut rng);
    let mu = spec.sigma_mu * z;
    let corr = spec.effect_regressor_corr;
    let idio = (1.0 - corr * corr).max(0.0).sqrt();
    let mut levels = [0.0; N_REGRESSORS];
    for (k, level) in levels.iter_mut().enumerate() {
        *level = spec.regressor_mean[k] + spec.regressor_between_sd * (corr * z + idio * normal(&mut rng));
    }

    let ar_path = |rng: &mut ChaCha8Rng, rho: f64| -> Vec<f64> {
        let innov = (1.0 - rho * rho).sqrt();
        let mut out = Vec::with_capacity(t);
        let mut prev = normal(rng);
        out.push(prev);
        for _ in 1..t {
            prev = rho * prev + innov * normal(rng);
            out.push(prev);
        }
        out
    };
    let x_paths: Vec<Vec<f64>> = (0..N_REGRESSORS).map(|_| ar_path(&mut rng, spec.regressor_ar1)).collect();
    let eps_path = ar_path(&mut rng, spec.eps_ar1);

    let shocked = match &spec.crash_year {
        Some(c) if c.shocked_fraction < 1.0 => rng.random::<f64>() < c.shocked_fraction,
        _ => false,
    };
    let nonpositive: Vec<bool> = (0..t).map(|_| rng.random::<f64>() < spec.nonpositive_rate).collect();

    let mut keep = vec![true; t];
    if spec.missing_rate > 0.0 {
        let mut attempt = 0;
        loop {
            for k in keep.iter_mut() {
                *k = rng.random::<f64>() >= spec.missing_rate;
            }
            if keep.iter().any(|&k| k) {
                break;
            }
            attempt += 1;
            if attempt > MISSINGNESS_RETRIES {
                return Err(Error::EmptyEntity { entity: index, retries: MISSINGNESS_RETRIES });
            }
        }
    }

    let rows = (0..t)
        .filter(|&p| keep[p])
        .map(|p| {
            let mut x = [0.0; N_REGRESSORS];
            for k in 0..N_REGRESSORS {
                x[k] = levels[k] + spec.regressor_within_sd * x_paths[k][p];
            }
            let shock = match &spec.crash_year {
                Some(c) if shocked && spec.first_year + p as i32 == c.year => c.shock,
                _ => 0.0,
            };
            (p, x, spec.sigma_eps * eps_path[p], shock, nonpositive[p])
        })
        .collect();
    Ok(EntityDraw { mu, rows })
}

/// Draws a panel and its ground truth. Deterministic in `spec.seed`.
pub fn generate_panel(spec: &SyntheticSpec) -> Result<SyntheticPanel> {
    spec.validate()?;
    let entities: Vec<EntityDraw> = (0..spec.n_entities)
        .into_par_iter()
        .map(|i| draw_entity(spec, i))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let mut gamma: Vec<f64> = (0..spec.n_periods).map(|_| spec.sigma_gamma * normal(&mut rng)).collect();
    if let Some(c) = &spec.crash_year {
        if c.shocked_fraction >= 1.0 {
            gamma[(c.year - spec.first_year) as usize] += c.shock;
        }
    }

    // Observation-weighted recentering of both effect sets.
    let n_obs: usize = entities.iter().map(|e| e.rows.len()).sum();
    let mut period_counts = vec![0usize; spec.n_periods];
    for e in &entities {
        for r in &e.rows {
            period_counts[r.0] += 1;
        }
    }
    let gamma_mean = gamma.iter().zip(&period_counts).map(|(g, &c)| g * c as f64).sum::<f64>() / n_obs as f64;
    for g in &mut gamma {
        *g -= gamma_mean;
    }
    let mu_mean = entities.iter().map(|e| e.mu * e.rows.len() as f64).sum::<f64>() / n_obs as f64;

    let mut truth = SyntheticTruth {
        b: spec.b,
        a0: spec.a0,
        mu: BTreeMap::new(),
        gamma: spec.years().zip(gamma.iter().copied()).collect(),
        rows: Vec::with_capacity(n_obs),
        forced_nonpositive: 0,
    };
    let mut observations = Vec::with_capacity(n_obs);
    for (i, e) in entities.iter().enumerate() {
        let id = entity_name(i);
        truth.mu.insert(id.clone(), e.mu - mu_mean);
        for &(p, x, eps, shock, nonpositive) in &e.rows {
            let period = spec.first_year + p as i32;
            let mut row = TruthRow {
                entity_id: id.clone(),
                period,
                ln_x: x,
                eps,
                shock,
                ln_y: 0.0,
            };
            row.ln_y = truth.recombine(&row);
            observations.push(Observation {
                entity_id: id.clone(),
                period,
                price: row.ln_y.exp(),
                dividends_per_share: if nonpositive { 0.0 } else { x[0].exp() },
                cashflow_per_share: x[1].exp(),
                bookvalue_per_share: x[2].exp(),
            });
            truth.forced_nonpositive += nonpositive as usize;
            truth.rows.push(row);
        }
    }
    let currency = spec.currency.clone().unwrap_or_else(|| UNSPECIFIED_CURRENCY.to_string());
    let dataset = PanelDataset::new(observations, currency)?;
    Ok(SyntheticPanel { dataset, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_entities: 50,
            n_periods: 6,
            seed: 7,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_panel(&small()).unwrap();
        let b = generate_panel(&small()).unwrap();
        let (mut wa, mut wb) = (Vec::new(), Vec::new());
        a.dataset.write_csv(&mut wa).unwrap();
        b.dataset.write_csv(&mut wb).unwrap();
        assert_eq!(wa, wb);
        let c = generate_panel(&SyntheticSpec { seed: 8, ..small() }).unwrap();
        let mut wc = Vec::new();
        c.dataset.write_csv(&mut wc).unwrap();
        assert_ne!(wa, wc);
    }

    #[test]
    fn truth_recombines_exactly_and_is_centered() {
        let spec = SyntheticSpec {
            crash_year: Some(CrashSpec { year: 2007, shock: -0.4, shocked_fraction: 0.5 }),
            ..small()
        };
        let p = generate_panel(&spec).unwrap();
        for r in &p.truth.rows {
            assert_eq!(p.truth.recombine(r), r.ln_y);
        }
        let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
        for r in &p.truth.rows {
            *counts.entry(r.period).or_default() += 1;
        }
        let wsum: f64 = counts.iter().map(|(y, &c)| p.truth.gamma[y] * c as f64).sum();
        assert!(wsum.abs() < 1e-12);
        assert!(p.truth.rows.iter().any(|r| r.shock != 0.0));
        assert!(p.truth.rows.iter().all(|r| r.shock == 0.0 || r.period == 2007));
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let spec = SyntheticSpec {
            crash_year: Some(CrashSpec { year: 2008, shock: -0.4, shocked_fraction: 1.0 }),
            ..small()
        };
        let text = spec.to_toml_string();
        assert_eq!(SyntheticSpec::from_toml_str(&text).unwrap(), spec);
        let partial = SyntheticSpec::from_toml_str("n_entities = 10\nseed = 3\n").unwrap();
        assert_eq!(partial.n_periods, 10);
        assert!(SyntheticSpec::from_toml_str("bogus = 1").is_err());
        assert!(SyntheticSpec::from_toml_str("missing_rate = 1.0").is_err());
        assert!(SyntheticSpec::from_toml_str("sigma_eps = -0.1").is_err());
        let bad_year = "[crash_year]\nyear = 1990\nshock = -0.4\n";
        assert!(SyntheticSpec::from_toml_str(bad_year).is_err());
    }

    #[test]
    fn impossible_missingness_is_an_error() {
        let spec = SyntheticSpec { n_periods: 1, missing_rate: 0.999, n_entities: 20, ..small() };
        assert!(matches!(generate_panel(&spec), Err(Error::EmptyEntity { .. })));
    }

    #[test]
    fn forced_nonpositive_rows_are_counted() {
        let spec = SyntheticSpec { nonpositive_rate: 0.2, ..small() };
        let p = generate_panel(&spec).unwrap();
        let zeros = p.dataset.observations.iter().filter(|o| o.dividends_per_share == 0.0).count();
        assert_eq!(zeros, p.truth.forced_nonpositive);
        assert!(zeros > 0);
    }
}
