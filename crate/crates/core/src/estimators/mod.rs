//! Panel least-squares estimators: pooled OLS, within (fixed effects), the
//! dummy-variable (LSDV) equivalent, one-way random effects, and recovery of
//! the individual and period effects.

mod lsdv;
mod random;
mod within;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{from_columns, solve_least_squares};
use crate::panel::{EstimationSample, N_REGRESSORS, REGRESSOR_NAMES};

pub use lsdv::{fit_lsdv, LSDV_EFFECT_LIMIT};
pub use random::{fit_random_effects, VarianceComponents};
pub use within::{
    decompose_effects, demean, fit_fixed_effects, recover_effects, Demeaned, GroupIndex, DEMEAN_MAX_SWEEPS,
    DEMEAN_TOLERANCE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Pooled,
    FeIndividual,
    FeTime,
    FeTwoway,
    ReIndividual,
    ReTime,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Pooled,
        ModelKind::FeIndividual,
        ModelKind::FeTime,
        ModelKind::FeTwoway,
        ModelKind::ReIndividual,
        ModelKind::ReTime,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Pooled => "pooled",
            ModelKind::FeIndividual => "fe_individual",
            ModelKind::FeTime => "fe_time",
            ModelKind::FeTwoway => "fe_twoway",
            ModelKind::ReIndividual => "re_individual",
            ModelKind::ReTime => "re_time",
        }
    }

    pub fn is_fixed_effects(self) -> bool {
        matches!(
            self,
            ModelKind::FeIndividual | ModelKind::FeTime | ModelKind::FeTwoway
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model `{s}`")))
    }
}

/// Which effect dimensions a fixed- or random-effects estimator absorbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectMode {
    Individual,
    Time,
    Twoway,
}

/// Independently estimated effect parameters, not counting the global intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AbsorbedCounts {
    pub n_entity_effects: usize,
    pub n_period_effects: usize,
}

/// The regression actually solved: transformed design, target and residuals.
///
/// Pooled: `[1, X]` on `ln_y`. Fixed effects: `[1, X̃ + x̄]` on `ỹ + ȳ` where `~`
/// denotes the within transformation. Random effects: `[1 − θ, X − θ x̄_g]` on
/// `y − θ ȳ_g`. Slopes are always the trailing `N_REGRESSORS` columns.
#[derive(Debug, Clone)]
pub struct EstimationDesign {
    pub names: Vec<String>,
    pub design: DMatrix<f64>,
    pub target: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub xtx_inv: DMatrix<f64>,
}

impl EstimationDesign {
    fn solve(names: Vec<String>, design: DMatrix<f64>, target: Vec<f64>) -> Result<Self> {
        let ls = solve_least_squares(&design, &target)?;
        Ok(Self {
            names,
            design,
            target,
            coefficients: ls.coefficients,
            residuals: ls.residuals,
            xtx_inv: ls.xtx_inv,
        })
    }

    pub fn n_params(&self) -> usize {
        self.coefficients.len()
    }

    pub fn work_ssr(&self) -> f64 {
        self.residuals.iter().map(|e| e * e).sum()
    }

    /// Index of the first slope column.
    pub fn slope_offset(&self) -> usize {
        self.coefficients.len() - N_REGRESSORS
    }
}

/// How the effect levels are pinned down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// `Σ_i n_i μ_i = 0` and `Σ_t n_t γ_t = 0`; `a0` is the grand mean of `ln_y − ln_x·b`.
    ObservationWeightedSumToZero,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("observation-weighted sum-to-zero")
    }
}

/// `a0`, individual effects `μ_i` and period effects `γ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectsDecomposition {
    pub a0: f64,
    pub mu: BTreeMap<String, f64>,
    pub gamma: BTreeMap<i32, f64>,
    pub normalization: Normalization,
    pub sweeps: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelKind,
    pub intercept: Option<f64>,
    pub slopes: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub ssr: f64,
    pub df_resid: usize,
    pub n_obs: usize,
    pub absorbed: AbsorbedCounts,
    pub estimation: EstimationDesign,
    pub effects: Option<EffectsDecomposition>,
    pub demeaning_sweeps: usize,
    pub variance_components: Option<VarianceComponents>,
}

impl FitResult {
    /// Estimated parameters in the order of `estimation.names`.
    pub fn coefficients(&self) -> &[f64] {
        &self.estimation.coefficients
    }

    pub fn coefficient_names(&self) -> &[String] {
        &self.estimation.names
    }
}

pub(crate) fn regressor_columns(sample: &EstimationSample) -> Vec<Vec<f64>> {
    (0..N_REGRESSORS).map(|j| sample.ln_x_column(j)).collect()
}

pub(crate) fn standard_names() -> Vec<String> {
    std::iter::once("a0")
        .chain(REGRESSOR_NAMES)
        .map(String::from)
        .collect()
}

pub(crate) fn linear_index(sample: &EstimationSample, slopes: &[f64]) -> Vec<f64> {
    sample
        .rows
        .iter()
        .map(|r| r.ln_x.iter().zip(slopes).map(|(x, b)| x * b).sum())
        .collect()
}

/// Pooled OLS with a common intercept.
pub fn fit_pooled_ols(sample: &EstimationSample) -> Result<FitResult> {
    let n = sample.n_obs();
    if n < N_REGRESSORS + 1 {
        return Err(Error::InsufficientData(format!(
            "pooled OLS needs at least {} observations, got {n}",
            N_REGRESSORS + 1
        )));
    }
    let mut columns = vec![vec![1.0; n]];
    columns.extend(regressor_columns(sample));
    let est = EstimationDesign::solve(standard_names(), from_columns(&columns), sample.ln_y())?;

    let slopes = est.coefficients[1..].to_vec();
    let intercept = est.coefficients[0];
    let ln_y = sample.ln_y();
    let fitted: Vec<f64> = linear_index(sample, &slopes)
        .into_iter()
        .map(|v| intercept + v)
        .collect();
    let residuals: Vec<f64> = ln_y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let ssr = residuals.iter().map(|e| e * e).sum();

    Ok(FitResult {
        model: ModelKind::Pooled,
        intercept: Some(intercept),
        slopes,
        residuals,
        fitted,
        ssr,
        df_resid: n - N_REGRESSORS - 1,
        n_obs: n,
        absorbed: AbsorbedCounts::default(),
        estimation: est,
        effects: None,
        demeaning_sweeps: 0,
        variance_components: None,
    })
}
