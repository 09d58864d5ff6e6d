use nalgebra::DMatrix;

use super::covariance::{CovMatrix, CovMethod};
use super::distributions::{t_two_sided_p, Distribution};
use crate::error::{Error, Result};
use crate::estimators::FitResult;
use crate::linalg::solve_least_squares;
use crate::panel::{EstimationSample, N_REGRESSORS};

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

/// Estimates with standard errors, t statistics and two-sided p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub rows: Vec<CoefficientRow>,
    pub df: usize,
    pub method: CovMethod,
}

impl CoefficientTable {
    pub fn row(&self, name: &str) -> Option<&CoefficientRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// t tests use `df_resid` of the fit (after absorbing any effects).
pub fn inference_table(fit: &FitResult, cov: &CovMatrix) -> Result<CoefficientTable> {
    let coef = fit.coefficients();
    if cov.dim() != coef.len() {
        return Err(Error::Alignment(format!(
            "covariance is {}x{}, fit has {} coefficients",
            cov.dim(),
            cov.dim(),
            coef.len()
        )));
    }
    let df = fit.df_resid as f64;
    let mut rows = Vec::with_capacity(coef.len());
    for (i, (name, &estimate)) in fit.coefficient_names().iter().zip(coef).enumerate() {
        let var = cov.matrix[(i, i)];
        if !(var > 0.0) {
            return Err(Error::Covariance { index: i });
        }
        let std_error = var.sqrt();
        let t_stat = estimate / std_error;
        rows.push(CoefficientRow {
            name: name.clone(),
            estimate,
            std_error,
            t_stat,
            p_value: t_two_sided_p(t_stat, df)?,
        });
    }
    Ok(CoefficientTable {
        rows,
        df: fit.df_resid,
        method: cov.method,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoodnessOfFit {
    pub r_squared: f64,
    pub f_stat: f64,
    pub f_df: (usize, usize),
    pub f_pvalue: f64,
}

/// R² against the original `ln_y` (effects count as explained variation) and
/// the F test that all slopes are zero while the model's intercept and
/// effects are kept.
pub fn goodness_of_fit(fit: &FitResult, sample: &EstimationSample) -> Result<GoodnessOfFit> {
    if fit.n_obs != sample.n_obs() {
        return Err(Error::Alignment("fit and sample differ in length".into()));
    }
    let y = sample.ln_y();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedFit);
    }
    let r_squared = 1.0 - fit.ssr / sst;

    let est = &fit.estimation;
    let offset = est.slope_offset();
    let restricted_design: DMatrix<f64> = est.design.columns(0, offset).into_owned();
    let restricted_ssr = solve_least_squares(&restricted_design, &est.target)?
        .residuals
        .iter()
        .map(|e| e * e)
        .sum::<f64>();
    let unrestricted_ssr = est.work_ssr();
    let df_resid = fit.df_resid;
    let (f_stat, f_pvalue) = if unrestricted_ssr == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = ((restricted_ssr - unrestricted_ssr).max(0.0) / N_REGRESSORS as f64)
            / (unrestricted_ssr / df_resid as f64);
        let p = Distribution::F {
            df1: N_REGRESSORS as f64,
            df2: df_resid as f64,
        }
        .sf(f)?;
        (f, p)
    };
    Ok(GoodnessOfFit {
        r_squared,
        f_stat,
        f_df: (N_REGRESSORS, df_resid),
        f_pvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::fit_pooled_ols;
    use crate::inference::covariance;

    fn sample(noise_scale: f64) -> EstimationSample {
        let recs = (0..60).map(|i| {
            let t = i as f64;
            let x = [t.sin(), (0.3 * t).cos() + 0.05 * t, (1.7 * t).sin()];
            let e = noise_scale * ((i * 7919 % 13) as f64 - 6.0) / 6.0;
            (format!("e{}", i % 12), 2000 + i / 12, 1.0 + 0.5 * x[0] - 0.2 * x[1] + 0.1 * x[2] + e, x)
        });
        EstimationSample::from_records(recs).unwrap()
    }

    #[test]
    fn t_and_p_follow_invariants() {
        let s = sample(0.3);
        let fit = fit_pooled_ols(&s).unwrap();
        let cov = covariance(&fit, &s, CovMethod::Classical).unwrap();
        let table = inference_table(&fit, &cov).unwrap();
        assert_eq!(table.rows.len(), 4);
        for r in &table.rows {
            assert!(((r.estimate / r.std_error) - r.t_stat).abs() <= 1e-9 * r.t_stat.abs());
            let cdf = Distribution::StudentT { df: table.df as f64 }.cdf(r.t_stat.abs()).unwrap();
            assert!((r.p_value - 2.0 * (1.0 - cdf)).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&r.p_value));
        }
    }

    #[test]
    fn zero_estimate_has_unit_p_value() {
        let s = sample(0.3);
        let mut fit = fit_pooled_ols(&s).unwrap();
        fit.estimation.coefficients[2] = 0.0;
        let cov = covariance(&fit, &s, CovMethod::Classical).unwrap();
        let row = &inference_table(&fit, &cov).unwrap().rows[2];
        assert_eq!(row.t_stat, 0.0);
        assert_eq!(row.p_value, 1.0);
    }

    #[test]
    fn large_t_statistic_has_negligible_p_value() {
        // 0.137 / 0.007 with effectively infinite df.
        let s = sample(0.3);
        let mut fit = fit_pooled_ols(&s).unwrap();
        fit.estimation.coefficients[1] = 0.137;
        fit.df_resid = 1_000_000;
        let mut cov = covariance(&fit, &s, CovMethod::Classical).unwrap();
        cov.matrix[(1, 1)] = 0.007f64.powi(2);
        let row = &inference_table(&fit, &cov).unwrap().rows[1];
        assert!((row.t_stat - 19.571).abs() < 1e-3);
        assert!(row.p_value < 1e-12);
    }

    #[test]
    fn nonpositive_variance_is_rejected() {
        let s = sample(0.3);
        let fit = fit_pooled_ols(&s).unwrap();
        let mut cov = covariance(&fit, &s, CovMethod::Classical).unwrap();
        cov.matrix[(3, 3)] = 0.0;
        assert_eq!(inference_table(&fit, &cov).unwrap_err(), Error::Covariance { index: 3 });
    }

    #[test]
    fn perfect_fit_and_r_squared_identity() {
        let s = sample(0.0);
        let fit = fit_pooled_ols(&s).unwrap();
        let g = goodness_of_fit(&fit, &s).unwrap();
        assert!((g.r_squared - 1.0).abs() < 1e-12);

        let s = sample(0.4);
        let fit = fit_pooled_ols(&s).unwrap();
        let g = goodness_of_fit(&fit, &s).unwrap();
        let y = s.ln_y();
        let n = y.len() as f64;
        let (my, mf) = (y.iter().sum::<f64>() / n, fit.fitted.iter().sum::<f64>() / n);
        let sxy: f64 = y.iter().zip(&fit.fitted).map(|(a, b)| (a - my) * (b - mf)).sum();
        let sxx: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
        let syy: f64 = fit.fitted.iter().map(|b| (b - mf).powi(2)).sum();
        assert!((g.r_squared - sxy * sxy / (sxx * syy)).abs() < 1e-9);
        // pooled F equals the R² form
        let f = (g.r_squared / 3.0) / ((1.0 - g.r_squared) / fit.df_resid as f64);
        assert!((g.f_stat - f).abs() < 1e-8 * f);
    }

    #[test]
    fn constant_target_is_undefined() {
        let s = sample(0.0);
        let recs: Vec<_> = s
            .rows
            .iter()
            .map(|r| (s.entity_ids[r.entity_index].clone(), s.period_ids[r.period_index], 2.0, r.ln_x))
            .collect();
        let s = EstimationSample::from_records(recs).unwrap();
        let fit = fit_pooled_ols(&s).unwrap();
        assert_eq!(goodness_of_fit(&fit, &s).unwrap_err(), Error::UndefinedFit);
    }
}
