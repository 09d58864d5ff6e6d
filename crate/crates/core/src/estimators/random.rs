//! One-way random effects by feasible GLS with Swamy-Arora variance components.
//!
//! * `σ̂²_ε` comes from the one-way within regression: `SSR_w / (n − G − k)`.
//! * `σ̂²_u` comes from the between regression of group means on `[1, x̄_g]`:
//!   `SSR_b / (G − k − 1) − σ̂²_ε / T̄`, with `T̄` the harmonic mean of group
//!   sizes, floored at zero.
//! * Each group is quasi-demeaned with `θ_g = 1 − sqrt(σ̂²_ε / (σ̂²_ε + T_g σ̂²_u))`.

use super::{
    fit_fixed_effects, linear_index, regressor_columns, standard_names, AbsorbedCounts,
    EffectMode, EstimationDesign, FitResult, ModelKind,
};
use crate::error::{Error, Result};
use crate::linalg::{from_columns, solve_least_squares};
use crate::panel::{EstimationSample, N_REGRESSORS};

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceComponents {
    pub sigma2_eps: f64,
    pub sigma2_effect: f64,
    /// Set when the between-based estimate of `σ²_u` was negative and clamped to zero.
    pub floored: bool,
    /// Quasi-demeaning factor per group, indexed like the sample's entity or period ids.
    pub theta: Vec<f64>,
}

pub fn fit_random_effects(sample: &EstimationSample, mode: EffectMode) -> Result<FitResult> {
    let (group_of, n_groups, model) = match mode {
        EffectMode::Individual => (sample.entity_index(), sample.n_entities(), ModelKind::ReIndividual),
        EffectMode::Time => (sample.period_index(), sample.n_periods(), ModelKind::ReTime),
        EffectMode::Twoway => {
            return Err(Error::InvalidArgument(
                "two-way random effects is not available for unbalanced panels".into(),
            ))
        }
    };
    let n = sample.n_obs();
    let mut sizes = vec![0usize; n_groups];
    for &g in &group_of {
        sizes[g] += 1;
    }
    if sizes.iter().all(|&s| s < 2) {
        return Err(Error::InsufficientData(
            "random effects needs a group with at least 2 observations".into(),
        ));
    }
    if n_groups <= N_REGRESSORS + 1 {
        return Err(Error::InsufficientData(format!(
            "between regression needs more than {} groups, got {n_groups}",
            N_REGRESSORS + 1
        )));
    }

    let within = fit_fixed_effects(sample, mode)?;
    let sigma2_eps = within.estimation.work_ssr() / within.df_resid as f64;

    let ln_y = sample.ln_y();
    let raw_x = regressor_columns(sample);
    let group_mean = |col: &[f64]| -> Vec<f64> {
        let mut sums = vec![0.0; n_groups];
        for (v, &g) in col.iter().zip(&group_of) {
            sums[g] += v;
        }
        sums.iter().zip(&sizes).map(|(s, &c)| s / c as f64).collect()
    };
    let y_bar = group_mean(&ln_y);
    let x_bar: Vec<Vec<f64>> = raw_x.iter().map(|c| group_mean(c)).collect();

    let mut between_cols = vec![vec![1.0; n_groups]];
    between_cols.extend(x_bar.iter().cloned());
    let between = solve_least_squares(&from_columns(&between_cols), &y_bar)?;
    let sigma2_between = between.ssr / (n_groups - N_REGRESSORS - 1) as f64;
    let harmonic = n_groups as f64 / sizes.iter().map(|&s| 1.0 / s as f64).sum::<f64>();
    let raw_effect = sigma2_between - sigma2_eps / harmonic;
    let floored = raw_effect < 0.0;
    let sigma2_effect = raw_effect.max(0.0);

    let theta: Vec<f64> = sizes
        .iter()
        .map(|&t| {
            let denom = sigma2_eps + t as f64 * sigma2_effect;
            if denom <= 0.0 {
                0.0
            } else {
                1.0 - (sigma2_eps / denom).sqrt()
            }
        })
        .collect();

    let mut design_cols = vec![group_of.iter().map(|&g| 1.0 - theta[g]).collect::<Vec<_>>()];
    for (col, means) in raw_x.iter().zip(&x_bar) {
        design_cols.push(
            col.iter()
                .zip(&group_of)
                .map(|(v, &g)| v - theta[g] * means[g])
                .collect(),
        );
    }
    let target: Vec<f64> = ln_y
        .iter()
        .zip(&group_of)
        .map(|(v, &g)| v - theta[g] * y_bar[g])
        .collect();
    let est = EstimationDesign::solve(standard_names(), from_columns(&design_cols), target)?;

    let intercept = est.coefficients[0];
    let slopes = est.coefficients[1..].to_vec();
    let fitted: Vec<f64> = linear_index(sample, &slopes)
        .into_iter()
        .map(|v| intercept + v)
        .collect();
    let residuals: Vec<f64> = ln_y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let ssr = residuals.iter().map(|e| e * e).sum();

    Ok(FitResult {
        model,
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
        demeaning_sweeps: within.demeaning_sweeps,
        variance_components: Some(VarianceComponents {
            sigma2_eps,
            sigma2_effect,
            floored,
            theta,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twoway_mode_is_refused() {
        let recs: Vec<_> = (0..30)
            .map(|i| (format!("e{}", i % 6), 2000 + i / 6, i as f64, [1.0, (i as f64).sin(), 2.0]))
            .collect();
        let s = EstimationSample::from_records(recs).unwrap();
        assert!(matches!(
            fit_random_effects(&s, EffectMode::Twoway),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn all_singleton_groups_are_insufficient() {
        let recs: Vec<_> = (0..10)
            .map(|i| (format!("e{i}"), 2000, i as f64, [1.0, (i as f64).sin(), 2.0]))
            .collect();
        let s = EstimationSample::from_records(recs).unwrap();
        assert!(matches!(
            fit_random_effects(&s, EffectMode::Individual),
            Err(Error::InsufficientData(_))
        ));
    }
}
