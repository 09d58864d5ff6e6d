use super::{
    linear_index, regressor_columns, AbsorbedCounts, EffectMode, EstimationDesign, FitResult,
    ModelKind,
};
use crate::error::{Error, Result};
use crate::linalg::from_columns;
use crate::panel::{EstimationSample, N_REGRESSORS, REGRESSOR_NAMES};

/// Upper bound on `n_entities + n_periods` for the dense dummy design.
pub const LSDV_EFFECT_LIMIT: usize = 5_000;

/// Least squares with explicit dummies: a global intercept plus one dummy per
/// entity and/or period, dropping the first level of each dimension.
///
/// Exact but memory-hungry; kept as the reference for [`super::fit_fixed_effects`].
pub fn fit_lsdv(sample: &EstimationSample, mode: EffectMode) -> Result<FitResult> {
    let required = sample.n_entities() + sample.n_periods();
    if required > LSDV_EFFECT_LIMIT {
        return Err(Error::Size {
            required,
            limit: LSDV_EFFECT_LIMIT,
        });
    }
    let n = sample.n_obs();
    let mut names = vec!["const".to_string()];
    let mut columns = vec![vec![1.0; n]];
    let mut absorbed = AbsorbedCounts::default();

    if matches!(mode, EffectMode::Individual | EffectMode::Twoway) {
        for (e, id) in sample.entity_ids.iter().enumerate().skip(1) {
            names.push(format!("entity[{id}]"));
            columns.push(sample.rows.iter().map(|r| f64::from(u8::from(r.entity_index == e))).collect());
        }
        absorbed.n_entity_effects = sample.n_entities() - 1;
    }
    if matches!(mode, EffectMode::Time | EffectMode::Twoway) {
        for (t, year) in sample.period_ids.iter().enumerate().skip(1) {
            names.push(format!("period[{year}]"));
            columns.push(sample.rows.iter().map(|r| f64::from(u8::from(r.period_index == t))).collect());
        }
        absorbed.n_period_effects = sample.n_periods() - 1;
    }
    names.extend(REGRESSOR_NAMES.iter().map(|s| s.to_string()));
    columns.extend(regressor_columns(sample));

    let p = columns.len();
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {p} dummy-design columns"
        )));
    }
    let est = EstimationDesign::solve(names, from_columns(&columns), sample.ln_y())?;
    let slopes = est.coefficients[p - N_REGRESSORS..].to_vec();
    let fitted: Vec<f64> = est
        .target
        .iter()
        .zip(&est.residuals)
        .map(|(y, e)| y - e)
        .collect();
    let residuals = est.residuals.clone();
    let ssr = est.work_ssr();
    debug_assert_eq!(linear_index(sample, &slopes).len(), n);

    let model = match mode {
        EffectMode::Individual => ModelKind::FeIndividual,
        EffectMode::Time => ModelKind::FeTime,
        EffectMode::Twoway => ModelKind::FeTwoway,
    };
    Ok(FitResult {
        model,
        intercept: None,
        slopes,
        residuals,
        fitted,
        ssr,
        df_resid: n - p,
        n_obs: n,
        absorbed,
        estimation: est,
        effects: None,
        demeaning_sweeps: 0,
        variance_components: None,
    })
}
