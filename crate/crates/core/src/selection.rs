//! Specification tests (F, likelihood ratio, Hausman, serial correlation of
//! pooled residuals) and the decision procedure that picks a panel model.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::estimators::{
    fit_fixed_effects, fit_pooled_ols, fit_random_effects, EffectMode, FitResult, ModelKind,
};
use crate::inference::{covariance, t_two_sided_p, CovMatrix, CovMethod, Distribution};
use crate::panel::{EstimationSample, N_REGRESSORS};

/// Relative eigenvalue cutoff for the Hausman pseudo-inverse.
pub const HAUSMAN_EIGEN_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    RejectNull,
    FailToReject,
}

impl Decision {
    fn from_p(p: f64, alpha: f64) -> Self {
        if p < alpha {
            Decision::RejectNull
        } else {
            Decision::FailToReject
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::RejectNull => "reject_null",
            Decision::FailToReject => "fail_to_reject",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestDf {
    One(usize),
    Two(usize, usize),
}

impl fmt::Display for TestDf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestDf::One(d) => write!(f, "{d}"),
            TestDf::Two(a, b) => write!(f, "({a},{b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub df: TestDf,
    pub p_value: f64,
    pub decision: Decision,
    pub alpha: f64,
    /// Diagnostic note, e.g. a non-positive-semidefinite Hausman variance difference.
    pub flag: Option<String>,
}

impl TestResult {
    fn new(name: String, statistic: f64, df: TestDf, p_value: f64, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            name,
            statistic,
            df,
            p_value,
            decision: Decision::from_p(p_value, alpha),
            alpha,
            flag: None,
        }
    }

    pub fn rejects(&self) -> bool {
        self.decision == Decision::RejectNull
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Restriction count and SSRs of a nested pair, with tolerance for rounding.
fn nested_pair(restricted: &FitResult, unrestricted: &FitResult) -> Result<(usize, f64, f64)> {
    if restricted.n_obs != unrestricted.n_obs {
        return Err(Error::Nesting("models were fitted on different samples".into()));
    }
    if restricted.df_resid <= unrestricted.df_resid {
        return Err(Error::Nesting(format!(
            "{} does not have fewer parameters than {}",
            restricted.model, unrestricted.model
        )));
    }
    let (ssr_r, ssr_u) = (restricted.ssr, unrestricted.ssr);
    if ssr_r < ssr_u - 1e-10 * ssr_u.max(1.0) {
        return Err(Error::Nesting(format!(
            "restricted SSR {ssr_r} is below unrestricted SSR {ssr_u}"
        )));
    }
    Ok((restricted.df_resid - unrestricted.df_resid, ssr_r, ssr_u))
}

/// F test of the restrictions separating two nested least-squares fits.
pub fn f_test_effects(restricted: &FitResult, unrestricted: &FitResult, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let (q, ssr_r, ssr_u) = nested_pair(restricted, unrestricted)?;
    let df_u = unrestricted.df_resid;
    let gain = (ssr_r - ssr_u).max(0.0);
    let (stat, p) = if gain == 0.0 {
        (0.0, 1.0)
    } else if ssr_u == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (gain / q as f64) / (ssr_u / df_u as f64);
        (f, Distribution::F { df1: q as f64, df2: df_u as f64 }.sf(f)?)
    };
    Ok(TestResult::new(
        format!("F {} vs {}", restricted.model, unrestricted.model),
        stat,
        TestDf::Two(q, df_u),
        p,
        alpha,
    ))
}

/// Gaussian log-likelihood at the least-squares optimum.
pub fn gaussian_log_likelihood(n: usize, ssr: f64) -> f64 {
    let n = n as f64;
    -0.5 * n * (1.0 + (2.0 * std::f64::consts::PI).ln() + (ssr / n).ln())
}

/// Likelihood-ratio test `2(logL_u − logL_r) = n·ln(SSR_r/SSR_u) ~ χ²(q)`.
pub fn lr_test_effects(restricted: &FitResult, unrestricted: &FitResult, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let (q, ssr_r, ssr_u) = nested_pair(restricted, unrestricted)?;
    let n = unrestricted.n_obs as f64;
    let stat = if ssr_r <= ssr_u {
        0.0
    } else if ssr_u == 0.0 {
        f64::INFINITY
    } else {
        n * (ssr_r / ssr_u).ln()
    };
    let p = if stat == 0.0 {
        1.0
    } else {
        Distribution::ChiSquare { df: q as f64 }.sf(stat)?
    };
    Ok(TestResult::new(
        format!("LR {} vs {}", restricted.model, unrestricted.model),
        stat,
        TestDf::One(q),
        p,
        alpha,
    ))
}

fn slope_block(fit: &FitResult, cov: &CovMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let off = fit.estimation.slope_offset();
    if cov.dim() != fit.coefficients().len() {
        return Err(Error::Alignment("covariance does not match the fit".into()));
    }
    let b = DVector::from_column_slice(&fit.coefficients()[off..]);
    let v = cov.matrix.view((off, off), (N_REGRESSORS, N_REGRESSORS)).into_owned();
    Ok((b, v))
}

/// Hausman test of random against fixed effects on the common slopes.
///
/// `H = q'(V_FE − V_RE)⁺q` with the pseudo-inverse keeping eigenvalues above
/// `HAUSMAN_EIGEN_CUTOFF · λ_max`. Negative eigenvalues below `−cutoff` set
/// the result's flag.
pub fn hausman_test(
    fe: &FitResult,
    re: &FitResult,
    cov_fe: &CovMatrix,
    cov_re: &CovMatrix,
    alpha: f64,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    if cov_fe.method != CovMethod::Classical || cov_re.method != CovMethod::Classical {
        return Err(Error::InvalidArgument("Hausman test uses classical covariances".into()));
    }
    let (b_fe, v_fe) = slope_block(fe, cov_fe)?;
    let (b_re, v_re) = slope_block(re, cov_re)?;
    let q = b_fe - b_re;
    let diff = v_fe - v_re;
    let eig = SymmetricEigen::new((&diff + diff.transpose()) * 0.5);
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    let cutoff = HAUSMAN_EIGEN_CUTOFF * lambda_max;
    let mut stat = 0.0;
    let mut rank = 0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff && lambda > 0.0 {
            let proj = eig.eigenvectors.column(i).dot(&q);
            stat += proj * proj / lambda;
            rank += 1;
        }
    }
    if rank == 0 {
        return Err(Error::DegenerateTest(
            "variance difference has no positive eigenvalue".into(),
        ));
    }
    let p = if stat == 0.0 {
        1.0
    } else {
        Distribution::ChiSquare { df: rank as f64 }.sf(stat)?
    };
    let mut result = TestResult::new(
        format!("Hausman {} vs {}", fe.model, re.model),
        stat,
        TestDf::One(rank),
        p,
        alpha,
    );
    if eig.eigenvalues.iter().any(|&l| l < -cutoff) {
        result.flag = Some("variance difference not positive semidefinite; pseudo-inverse used".into());
    }
    Ok(result)
}

/// Serial correlation in pooled residuals: regress `û_it` on `û_{i,t−1}` over
/// consecutive-year pairs (no intercept) and t-test the slope with an
/// entity-clustered standard error, `df = G − 1`.
pub fn wooldridge_serial_test(pooled: &FitResult, sample: &EstimationSample, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    if pooled.model != ModelKind::Pooled {
        return Err(Error::InvalidArgument("serial-correlation test needs pooled OLS residuals".into()));
    }
    if pooled.n_obs != sample.n_obs() {
        return Err(Error::Alignment("fit and sample differ in length".into()));
    }
    // (entity, lagged residual, residual); rows are sorted by entity then period.
    let mut pairs: Vec<(usize, f64, f64)> = Vec::new();
    for (i, w) in sample.rows.windows(2).enumerate() {
        let (prev, cur) = (&w[0], &w[1]);
        if prev.entity_index == cur.entity_index
            && sample.period_ids[cur.period_index] - sample.period_ids[prev.period_index] == 1
        {
            pairs.push((cur.entity_index, pooled.residuals[i], pooled.residuals[i + 1]));
        }
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no consecutive-year residual pairs".into()));
    }
    let sxx: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
    let sxy: f64 = pairs.iter().map(|p| p.1 * p.2).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("lagged residuals are all zero".into()));
    }
    let rho = sxy / sxx;
    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    for &(g, lag, cur) in &pairs {
        *scores.entry(g).or_default() += lag * (cur - rho * lag);
    }
    let g = scores.len();
    if g < 2 {
        return Err(Error::InsufficientData(
            "serial-correlation test needs lag pairs from at least 2 entities".into(),
        ));
    }
    let meat: f64 = scores.values().map(|s| s * s).sum();
    let var = (g as f64 / (g as f64 - 1.0)) * meat / (sxx * sxx);
    let t = rho / var.sqrt();
    let df = g - 1;
    let p = t_two_sided_p(t, df as f64)?;
    Ok(TestResult::new(
        "Wooldridge serial correlation (pooled residuals)".into(),
        t,
        TestDf::One(df),
        p,
        alpha,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarrativeStep {
    pub description: String,
    /// Names of the tests this step relies on.
    pub tests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSelectionReport {
    pub tests: Vec<TestResult>,
    pub selected_model: ModelKind,
    pub narrative: Vec<NarrativeStep>,
    /// Candidate fits or tests that could not be computed, with the reason.
    pub skipped: Vec<String>,
    pub alpha: f64,
}

impl ModelSelectionReport {
    pub fn test(&self, name: &str) -> Option<&TestResult> {
        self.tests.iter().find(|t| t.name == name)
    }
}

struct Battery<'a> {
    sample: &'a EstimationSample,
    alpha: f64,
    fits: BTreeMap<ModelKind, FitResult>,
    tests: Vec<TestResult>,
    skipped: Vec<String>,
}

impl Battery<'_> {
    fn record(&mut self, label: &str, result: Result<TestResult>) -> Option<TestResult> {
        match result {
            Ok(t) => {
                self.tests.push(t.clone());
                Some(t)
            }
            Err(e) => {
                self.skipped.push(format!("{label}: {e}"));
                None
            }
        }
    }

    /// F and LR for a nested pair; returns the F result.
    fn nested(&mut self, restricted: ModelKind, unrestricted: ModelKind) -> Option<TestResult> {
        let (r, u) = (self.fits.get(&restricted)?, self.fits.get(&unrestricted)?);
        let f = f_test_effects(r, u, self.alpha);
        let lr = lr_test_effects(r, u, self.alpha);
        let label = format!("{restricted} vs {unrestricted}");
        let f = self.record(&format!("F {label}"), f);
        self.record(&format!("LR {label}"), lr);
        f
    }

    fn hausman(&mut self, fe: ModelKind, re: ModelKind) -> Option<TestResult> {
        let (f, r) = (self.fits.get(&fe)?, self.fits.get(&re)?);
        let result = covariance(f, self.sample, CovMethod::Classical).and_then(|cf| {
            covariance(r, self.sample, CovMethod::Classical)
                .and_then(|cr| hausman_test(f, r, &cf, &cr, self.alpha))
        });
        self.record(&format!("Hausman {fe} vs {re}"), result)
    }
}

fn step(description: String, tests: &[&TestResult]) -> NarrativeStep {
    NarrativeStep {
        description,
        tests: tests.iter().map(|t| t.name.clone()).collect(),
    }
}

fn verdict(t: &TestResult) -> &'static str {
    if t.rejects() {
        "rejects"
    } else {
        "does not reject"
    }
}

/// Chooses among pooled, one-way/two-way fixed effects and one-way random
/// effects.
///
/// 1. F and LR tests of pooled OLS against each fixed-effects model, and of
///    each one-way model against the two-way model. Pooled OLS is kept when
///    the joint F test (pooled vs two-way) does not reject; otherwise a
///    dimension counts as significant when its F test conditional on the
///    other dimension rejects.
/// 2. The serial-correlation test on pooled residuals is reported as
///    corroboration of the pooled-vs-effects verdict.
/// 3. Hausman tests per dimension decide between fixed and random effects
///    when exactly one dimension is significant. With both significant the
///    two-way fixed-effects model is chosen; two-way random effects is not
///    estimated.
pub fn select_model(sample: &EstimationSample, alpha: f64) -> Result<ModelSelectionReport> {
    check_alpha(alpha)?;
    let candidates: Vec<(ModelKind, Result<FitResult>)> = {
        let ((pooled, fe_i), (fe_t, (fe_2, (re_i, re_t)))) = rayon::join(
            || (fit_pooled_ols(sample), fit_fixed_effects(sample, EffectMode::Individual)),
            || {
                rayon::join(
                    || fit_fixed_effects(sample, EffectMode::Time),
                    || {
                        rayon::join(
                            || fit_fixed_effects(sample, EffectMode::Twoway),
                            || {
                                rayon::join(
                                    || fit_random_effects(sample, EffectMode::Individual),
                                    || fit_random_effects(sample, EffectMode::Time),
                                )
                            },
                        )
                    },
                )
            },
        );
        vec![
            (ModelKind::Pooled, pooled),
            (ModelKind::FeIndividual, fe_i),
            (ModelKind::FeTime, fe_t),
            (ModelKind::FeTwoway, fe_2),
            (ModelKind::ReIndividual, re_i),
            (ModelKind::ReTime, re_t),
        ]
    };

    let mut b = Battery {
        sample,
        alpha,
        fits: BTreeMap::new(),
        tests: Vec::new(),
        skipped: Vec::new(),
    };
    for (kind, fit) in candidates {
        match fit {
            Ok(f) => {
                b.fits.insert(kind, f);
            }
            Err(e) => b.skipped.push(format!("fit {kind}: {e}")),
        }
    }
    if !b.fits.contains_key(&ModelKind::Pooled) {
        let reason = b.skipped.join("; ");
        return Err(Error::InsufficientData(format!("pooled OLS could not be fitted: {reason}")));
    }

    use ModelKind::*;
    let f_ind = b.nested(Pooled, FeIndividual);
    let f_time = b.nested(Pooled, FeTime);
    let f_joint = b.nested(Pooled, FeTwoway);
    let f_time_given_ind = b.nested(FeIndividual, FeTwoway);
    let f_ind_given_time = b.nested(FeTime, FeTwoway);
    let wooldridge = {
        let pooled = &b.fits[&Pooled];
        let r = wooldridge_serial_test(pooled, sample, alpha);
        b.record("Wooldridge serial correlation", r)
    };
    let h_ind = b.hausman(FeIndividual, ReIndividual);
    let h_time = b.hausman(FeTime, ReTime);

    let mut narrative = Vec::new();

    // Step 1: do effects exist at all, and in which dimensions?
    let (ind_sig, time_sig) = if let Some(joint) = &f_joint {
        narrative.push(step(
            format!(
                "joint F test {} the null of no effects (p = {:.4})",
                verdict(joint),
                joint.p_value
            ),
            &[joint],
        ));
        if !joint.rejects() {
            (false, false)
        } else {
            let ind = f_ind_given_time.as_ref().or(f_ind.as_ref());
            let time = f_time_given_ind.as_ref().or(f_time.as_ref());
            let mut ind_sig = ind.is_some_and(|t| t.rejects());
            let mut time_sig = time.is_some_and(|t| t.rejects());
            for (label, t) in [("individual", ind), ("time", time)] {
                if let Some(t) = t {
                    narrative.push(step(
                        format!("{label} effects: {} {} the null (p = {:.4})", t.name, verdict(t), t.p_value),
                        &[t],
                    ));
                }
            }
            if !ind_sig && !time_sig {
                // Jointly but not separately significant: keep the stronger dimension.
                let p_ind = ind.map_or(1.0, |t| t.p_value);
                let p_time = time.map_or(1.0, |t| t.p_value);
                if p_ind <= p_time {
                    ind_sig = true;
                } else {
                    time_sig = true;
                }
                let cited: Vec<&TestResult> = [ind, time, Some(joint)].into_iter().flatten().collect();
                narrative.push(step(
                    format!(
                        "neither dimension is separately significant; keeping {} effects (smaller p-value)",
                        if ind_sig { "individual" } else { "time" }
                    ),
                    &cited,
                ));
            }
            (ind_sig, time_sig)
        }
    } else {
        let ind_sig = f_ind.as_ref().is_some_and(|t| t.rejects());
        let time_sig = f_time.as_ref().is_some_and(|t| t.rejects());
        for t in [&f_ind, &f_time].into_iter().flatten() {
            narrative.push(step(
                format!("{} {} the null (p = {:.4}); two-way model unavailable", t.name, verdict(t), t.p_value),
                &[t],
            ));
        }
        (ind_sig, time_sig)
    };

    // Step 2: pooled residual serial correlation as corroboration.
    if let Some(w) = &wooldridge {
        let consistent = w.rejects() == (ind_sig || time_sig);
        narrative.push(step(
            format!(
                "serial correlation in pooled residuals: test {} (p = {:.4}); {} the effects verdict",
                verdict(w),
                w.p_value,
                if consistent { "consistent with" } else { "at odds with" }
            ),
            &[w],
        ));
    }

    // Step 3: fixed versus random effects.
    let fe_or_re = |h: &Option<TestResult>, fe: ModelKind, re: ModelKind, narrative: &mut Vec<NarrativeStep>| -> ModelKind {
        match h {
            Some(t) => {
                let chosen = if t.rejects() { fe } else { re };
                narrative.push(step(
                    format!("{} {} random-effects consistency (p = {:.4}); choose {chosen}", t.name, verdict(t), t.p_value),
                    &[t],
                ));
                chosen
            }
            None => fe,
        }
    };
    let selected = match (ind_sig, time_sig) {
        (false, false) => Pooled,
        (true, false) => fe_or_re(&h_ind, FeIndividual, ReIndividual, &mut narrative),
        (false, true) => fe_or_re(&h_time, FeTime, ReTime, &mut narrative),
        (true, true) => {
            let cited: Vec<&TestResult> = [&h_ind, &h_time].into_iter().flatten().collect();
            let any_reject = cited.iter().any(|t| t.rejects());
            let desc = if any_reject {
                "both effect dimensions significant and Hausman rejects random effects; choose fe_twoway"
            } else {
                "both effect dimensions significant; two-way random effects is not estimated; choose fe_twoway"
            };
            if cited.is_empty() {
                let fallback: Vec<&TestResult> = [&f_time_given_ind, &f_ind_given_time].into_iter().flatten().collect();
                narrative.push(step(desc.to_string(), &fallback));
            } else {
                narrative.push(step(desc.to_string(), &cited));
            }
            FeTwoway
        }
    };
    let selected = if b.fits.contains_key(&selected) {
        selected
    } else {
        b.skipped.push(format!("selected model {selected} could not be fitted; falling back to pooled"));
        Pooled
    };

    Ok(ModelSelectionReport {
        tests: b.tests,
        selected_model: selected,
        narrative,
        skipped: b.skipped,
        alpha,
    })
}
