use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{
    linear_index, regressor_columns, standard_names, AbsorbedCounts, EffectMode,
    EffectsDecomposition, EstimationDesign, FitResult, ModelKind, Normalization,
};
use crate::error::{Error, Result};
use crate::linalg::from_columns;
use crate::panel::{EstimationSample, N_REGRESSORS};

/// Max-abs change in a sweep below which alternating projections stop.
pub const DEMEAN_TOLERANCE: f64 = 1e-10;
pub const DEMEAN_MAX_SWEEPS: usize = 1000;

/// A regressor whose within-transformed norm falls below this fraction of its
/// raw norm is treated as having no within variation.
const WITHIN_VARIATION_FLOOR: f64 = 1e-9;

/// Row-to-group maps for both panel dimensions.
#[derive(Debug, Clone)]
pub struct GroupIndex {
    pub entity: Vec<usize>,
    pub period: Vec<usize>,
    pub entity_counts: Vec<usize>,
    pub period_counts: Vec<usize>,
}

impl GroupIndex {
    pub fn from_sample(sample: &EstimationSample) -> Self {
        let entity = sample.entity_index();
        let period = sample.period_index();
        let mut entity_counts = vec![0; sample.n_entities()];
        let mut period_counts = vec![0; sample.n_periods()];
        for (&e, &p) in entity.iter().zip(&period) {
            entity_counts[e] += 1;
            period_counts[p] += 1;
        }
        Self {
            entity,
            period,
            entity_counts,
            period_counts,
        }
    }

    pub fn n_entities(&self) -> usize {
        self.entity_counts.len()
    }

    pub fn n_periods(&self) -> usize {
        self.period_counts.len()
    }

    /// Connected components of the bipartite entity-period graph. Each
    /// component beyond the first removes one identifiable period effect.
    pub fn connected_components(&self) -> usize {
        let n_e = self.n_entities();
        let mut parent: Vec<usize> = (0..n_e + self.n_periods()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (&e, &p) in self.entity.iter().zip(&self.period) {
            let a = find(&mut parent, e);
            let b = find(&mut parent, n_e + p);
            if a != b {
                parent[a] = b;
            }
        }
        (0..parent.len()).filter(|&x| find(&mut parent, x) == x).count()
    }

    fn absorbed(&self, mode: EffectMode) -> AbsorbedCounts {
        match mode {
            EffectMode::Individual => AbsorbedCounts {
                n_entity_effects: self.n_entities() - 1,
                n_period_effects: 0,
            },
            EffectMode::Time => AbsorbedCounts {
                n_entity_effects: 0,
                n_period_effects: self.n_periods() - 1,
            },
            EffectMode::Twoway => AbsorbedCounts {
                n_entity_effects: self.n_entities() - 1,
                n_period_effects: self.n_periods() - self.connected_components(),
            },
        }
    }
}

/// Subtracts group means in place, adds them to `acc`, returns the largest
/// absolute mean removed.
fn sweep_groups(col: &mut [f64], index: &[usize], counts: &[usize], acc: &mut [f64], buf: &mut [f64]) -> f64 {
    buf.iter_mut().for_each(|s| *s = 0.0);
    for (v, &g) in col.iter().zip(index) {
        buf[g] += v;
    }
    let mut largest: f64 = 0.0;
    for (s, &c) in buf.iter_mut().zip(counts) {
        *s /= c as f64;
        largest = largest.max(s.abs());
    }
    for (v, &g) in col.iter_mut().zip(index) {
        *v -= buf[g];
    }
    for (a, s) in acc.iter_mut().zip(buf.iter()) {
        *a += s;
    }
    largest
}

struct Absorbed {
    entity_effects: Vec<f64>,
    period_effects: Vec<f64>,
    sweeps: usize,
}

/// Projects out the requested effects from `col` in place. Two-way mode
/// alternates entity and period demeaning until the largest mean removed in a
/// sweep is below [`DEMEAN_TOLERANCE`].
fn absorb(col: &mut [f64], groups: &GroupIndex, mode: EffectMode) -> Result<Absorbed> {
    let mut entity_effects = vec![0.0; groups.n_entities()];
    let mut period_effects = vec![0.0; groups.n_periods()];
    let mut ebuf = vec![0.0; groups.n_entities()];
    let mut pbuf = vec![0.0; groups.n_periods()];
    let sweeps = match mode {
        EffectMode::Individual => {
            sweep_groups(col, &groups.entity, &groups.entity_counts, &mut entity_effects, &mut ebuf);
            1
        }
        EffectMode::Time => {
            sweep_groups(col, &groups.period, &groups.period_counts, &mut period_effects, &mut pbuf);
            1
        }
        EffectMode::Twoway => {
            let mut sweep = 0;
            loop {
                sweep += 1;
                let de = sweep_groups(col, &groups.entity, &groups.entity_counts, &mut entity_effects, &mut ebuf);
                let dp = sweep_groups(col, &groups.period, &groups.period_counts, &mut period_effects, &mut pbuf);
                if de.max(dp) < DEMEAN_TOLERANCE {
                    break sweep;
                }
                if sweep >= DEMEAN_MAX_SWEEPS {
                    return Err(Error::Convergence { iterations: sweep });
                }
            }
        }
    };
    Ok(Absorbed {
        entity_effects,
        period_effects,
        sweeps,
    })
}

#[derive(Debug, Clone)]
pub struct Demeaned {
    pub columns: Vec<Vec<f64>>,
    /// Largest sweep count over all columns.
    pub sweeps: usize,
}

/// Within transformation of each column. Columns are processed in parallel;
/// each column's arithmetic is sequential, so results do not depend on the
/// thread count.
pub fn demean(columns: &[Vec<f64>], groups: &GroupIndex, mode: EffectMode) -> Result<Demeaned> {
    let results: Vec<Result<(Vec<f64>, usize)>> = columns
        .par_iter()
        .map(|c| {
            if c.len() != groups.entity.len() {
                return Err(Error::Alignment("column length differs from group index".into()));
            }
            let mut c = c.clone();
            let a = absorb(&mut c, groups, mode)?;
            Ok((c, a.sweeps))
        })
        .collect();
    let mut out = Vec::with_capacity(columns.len());
    let mut sweeps = 0;
    for r in results {
        let (c, s) = r?;
        sweeps = sweeps.max(s);
        out.push(c);
    }
    Ok(Demeaned { columns: out, sweeps })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Decomposition {
    a0: f64,
    mu: Vec<f64>,
    gamma: Vec<f64>,
    sweeps: usize,
}

/// Splits `r` into `a0 + μ_i + γ_t + e` under observation-weighted
/// sum-to-zero constraints.
fn decompose(r: &[f64], groups: &GroupIndex, mode: EffectMode) -> Result<Decomposition> {
    let a0 = mean(r);
    let mut e: Vec<f64> = r.iter().map(|v| v - a0).collect();
    let absorbed = absorb(&mut e, groups, mode)?;
    let mut mu = absorbed.entity_effects;
    let mut gamma = absorbed.period_effects;
    // Constraints hold analytically at every sweep; this removes rounding drift.
    for (effects, counts) in [(&mut mu, &groups.entity_counts), (&mut gamma, &groups.period_counts)] {
        let total: usize = counts.iter().sum();
        let wmean = effects
            .iter()
            .zip(counts.iter())
            .map(|(m, &c)| m * c as f64)
            .sum::<f64>()
            / total as f64;
        effects.iter_mut().for_each(|m| *m -= wmean);
    }
    Ok(Decomposition {
        a0,
        mu,
        gamma,
        sweeps: absorbed.sweeps,
    })
}

fn to_effects(sample: &EstimationSample, d: &Decomposition, mode: EffectMode) -> EffectsDecomposition {
    let mu: BTreeMap<String, f64> = match mode {
        EffectMode::Time => BTreeMap::new(),
        _ => sample.entity_ids.iter().cloned().zip(d.mu.iter().copied()).collect(),
    };
    let gamma: BTreeMap<i32, f64> = match mode {
        EffectMode::Individual => BTreeMap::new(),
        _ => sample.period_ids.iter().copied().zip(d.gamma.iter().copied()).collect(),
    };
    EffectsDecomposition {
        a0: d.a0,
        mu,
        gamma,
        normalization: Normalization::ObservationWeightedSumToZero,
        sweeps: d.sweeps,
    }
}

/// Two-way decomposition of `ln_y − ln_x·slopes` for arbitrary slopes.
pub fn decompose_effects(sample: &EstimationSample, slopes: &[f64]) -> Result<EffectsDecomposition> {
    if slopes.len() != N_REGRESSORS {
        return Err(Error::InvalidArgument(format!(
            "expected {N_REGRESSORS} slopes, got {}",
            slopes.len()
        )));
    }
    let groups = GroupIndex::from_sample(sample);
    let r: Vec<f64> = sample
        .ln_y()
        .iter()
        .zip(linear_index(sample, slopes))
        .map(|(y, xb)| y - xb)
        .collect();
    let d = decompose(&r, &groups, EffectMode::Twoway)?;
    Ok(to_effects(sample, &d, EffectMode::Twoway))
}

/// Recovers `a0`, `μ_i` and `γ_t` for a two-way fixed-effects fit.
pub fn recover_effects(sample: &EstimationSample, fit: &FitResult) -> Result<EffectsDecomposition> {
    if fit.model != ModelKind::FeTwoway {
        return Err(Error::InvalidArgument(format!(
            "effects recovery needs a fe_twoway fit, got {}",
            fit.model
        )));
    }
    if fit.n_obs != sample.n_obs() {
        return Err(Error::Alignment(format!(
            "fit has {} rows, sample has {}",
            fit.n_obs,
            sample.n_obs()
        )));
    }
    decompose_effects(sample, &fit.slopes)
}

/// Within (fixed-effects) estimator.
pub fn fit_fixed_effects(sample: &EstimationSample, mode: EffectMode) -> Result<FitResult> {
    let n = sample.n_obs();
    let groups = GroupIndex::from_sample(sample);
    let absorbed = groups.absorbed(mode);
    let n_params = 1 + absorbed.n_entity_effects + absorbed.n_period_effects + N_REGRESSORS;
    if n <= n_params {
        return Err(Error::InsufficientData(format!(
            "{n} observations leave no residual degrees of freedom for {n_params} parameters"
        )));
    }

    let ln_y = sample.ln_y();
    let raw_x = regressor_columns(sample);
    let mut columns = Vec::with_capacity(N_REGRESSORS + 1);
    columns.push(ln_y.clone());
    columns.extend(raw_x.iter().cloned());
    let demeaned = demean(&columns, &groups, mode)?;

    for (j, (raw, within)) in raw_x.iter().zip(&demeaned.columns[1..]).enumerate() {
        if norm(within) <= WITHIN_VARIATION_FLOOR * norm(raw) {
            return Err(Error::Rank { column: j + 1 });
        }
    }

    // Adding grand means back makes the intercept equal ȳ − x̄·b without
    // changing the slopes.
    let mut design_cols = vec![vec![1.0; n]];
    for (raw, within) in raw_x.iter().zip(&demeaned.columns[1..]) {
        let m = mean(raw);
        design_cols.push(within.iter().map(|v| v + m).collect());
    }
    let y_mean = mean(&ln_y);
    let target: Vec<f64> = demeaned.columns[0].iter().map(|v| v + y_mean).collect();
    let est = EstimationDesign::solve(standard_names(), from_columns(&design_cols), target)?;
    let slopes = est.coefficients[1..].to_vec();

    let xb = linear_index(sample, &slopes);
    let r: Vec<f64> = ln_y.iter().zip(&xb).map(|(y, v)| y - v).collect();
    let d = decompose(&r, &groups, mode)?;

    let fitted: Vec<f64> = xb
        .iter()
        .zip(groups.entity.iter().zip(&groups.period))
        .map(|(v, (&e, &p))| d.a0 + d.mu[e] + d.gamma[p] + v)
        .collect();
    let residuals: Vec<f64> = ln_y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let ssr = residuals.iter().map(|e| e * e).sum();

    let model = match mode {
        EffectMode::Individual => ModelKind::FeIndividual,
        EffectMode::Time => ModelKind::FeTime,
        EffectMode::Twoway => ModelKind::FeTwoway,
    };
    Ok(FitResult {
        model,
        intercept: Some(d.a0),
        slopes,
        residuals,
        fitted,
        ssr,
        df_resid: n - n_params,
        n_obs: n,
        absorbed,
        estimation: est,
        effects: Some(to_effects(sample, &d, mode)),
        demeaning_sweeps: demeaned.sweeps.max(d.sweeps),
        variance_components: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::fit_pooled_ols;

    fn hand_panel() -> EstimationSample {
        // 3 entities x 2 periods
        let rows = [
            ("a", 1, 1.0, [0.2, 1.0, 3.0]),
            ("a", 2, 1.7, [0.9, 1.3, 2.0]),
            ("b", 1, 2.5, [1.4, 0.1, 2.2]),
            ("b", 2, 2.1, [0.7, 0.8, 2.9]),
            ("c", 1, 0.3, [-0.5, 0.6, 1.1]),
            ("c", 2, 1.2, [0.3, -0.2, 1.5]),
        ];
        EstimationSample::from_records(rows.iter().map(|(e, p, y, x)| (e.to_string(), *p, *y, *x))).unwrap()
    }

    #[test]
    fn singleton_entity_is_fully_absorbed() {
        let mut recs: Vec<_> = (0..12)
            .map(|i| {
                let t = i as f64;
                (format!("e{}", i / 4), 2000 + (i % 4), t.sin() + 0.3 * t, [t.cos(), (2.0 * t).sin(), 0.1 * t * t])
            })
            .collect();
        recs.push(("lonely".into(), 2001, 9.0, [5.0, -3.0, 7.0]));
        let s = EstimationSample::from_records(recs.clone()).unwrap();
        let groups = GroupIndex::from_sample(&s);
        let cols = vec![s.ln_y(), s.ln_x_column(0)];
        let dm = demean(&cols, &groups, EffectMode::Individual).unwrap();
        let lonely = s.entity_ids.iter().position(|e| e == "lonely").unwrap();
        for (i, r) in s.rows.iter().enumerate() {
            if r.entity_index == lonely {
                assert!(dm.columns.iter().all(|c| c[i].abs() < 1e-15));
            }
        }
        let with = fit_fixed_effects(&s, EffectMode::Individual).unwrap();
        recs.pop();
        let without = fit_fixed_effects(&EstimationSample::from_records(recs).unwrap(), EffectMode::Individual).unwrap();
        for (a, b) in with.slopes.iter().zip(&without.slopes) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn time_invariant_regressor_is_rank_error() {
        let recs: Vec<_> = (0..20)
            .map(|i| {
                let e = i / 5;
                let t = i as f64;
                (format!("e{e}"), 2000 + (i % 5), t.sin(), [t.cos(), e as f64 * 0.7 + 1.0, (0.3 * t).sin()])
            })
            .collect();
        let s = EstimationSample::from_records(recs).unwrap();
        assert_eq!(
            fit_fixed_effects(&s, EffectMode::Individual).unwrap_err(),
            Error::Rank { column: 2 }
        );
        assert_eq!(
            fit_fixed_effects(&s, EffectMode::Twoway).unwrap_err(),
            Error::Rank { column: 2 }
        );
    }

    #[test]
    fn twoway_effects_satisfy_constraints_and_identity() {
        let s = hand_panel();
        // 3 entities x 2 periods leaves 6 - 3 - 1 - 2 - 1 < 1 dof; add rows.
        let mut recs: Vec<_> = s
            .rows
            .iter()
            .map(|r| (s.entity_ids[r.entity_index].clone(), s.period_ids[r.period_index], r.ln_y, r.ln_x))
            .collect();
        for i in 0..8 {
            let t = i as f64;
            recs.push((format!("z{}", i % 3), 3 + i / 3, (t * 1.3).sin(), [t.cos(), (t * 0.4).sin(), t * 0.2]));
        }
        let s = EstimationSample::from_records(recs).unwrap();
        let fit = fit_fixed_effects(&s, EffectMode::Twoway).unwrap();
        let eff = recover_effects(&s, &fit).unwrap();
        assert_eq!(Some(&eff), fit.effects.as_ref());
        let groups = GroupIndex::from_sample(&s);
        let wmu: f64 = s.entity_ids.iter().zip(&groups.entity_counts).map(|(e, &c)| eff.mu[e] * c as f64).sum();
        let wg: f64 = s.period_ids.iter().zip(&groups.period_counts).map(|(p, &c)| eff.gamma[p] * c as f64).sum();
        assert!(wmu.abs() < 1e-8 * s.n_obs() as f64);
        assert!(wg.abs() < 1e-8 * s.n_obs() as f64);
        for (i, r) in s.rows.iter().enumerate() {
            let xb: f64 = r.ln_x.iter().zip(&fit.slopes).map(|(x, b)| x * b).sum();
            let rebuilt = eff.a0
                + eff.mu[&s.entity_ids[r.entity_index]]
                + eff.gamma[&s.period_ids[r.period_index]]
                + xb
                + fit.residuals[i];
            assert!((rebuilt - r.ln_y).abs() < 1e-9);
        }
    }

    #[test]
    fn single_period_gamma_is_zero() {
        let recs: Vec<_> = (0..6)
            .map(|i| (format!("e{i}"), 2008, 1.0 + i as f64 * 0.5, [i as f64, 1.0, 2.0]))
            .collect();
        let s = EstimationSample::from_records(recs).unwrap();
        let eff = decompose_effects(&s, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(eff.gamma.len(), 1);
        assert!(eff.gamma[&2008].abs() < 1e-15);
        let r_mean = s.rows.iter().map(|r| r.ln_y - 0.1 * r.ln_x[0] - 0.2 - 0.6).sum::<f64>() / 6.0;
        assert!((eff.a0 - r_mean).abs() < 1e-12);
    }

    #[test]
    fn recover_effects_requires_twoway_fit() {
        let s = hand_panel();
        let pooled = fit_pooled_ols(&s).unwrap();
        assert!(matches!(recover_effects(&s, &pooled), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn components_detect_disconnected_panels() {
        let recs = vec![
            ("a".to_string(), 1, 0.0, [0.0; 3]),
            ("a".to_string(), 2, 0.0, [0.0; 3]),
            ("b".to_string(), 3, 0.0, [0.0; 3]),
            ("b".to_string(), 4, 0.0, [0.0; 3]),
        ];
        let s = EstimationSample::from_records(recs).unwrap();
        assert_eq!(GroupIndex::from_sample(&s).connected_components(), 2);
        assert_eq!(GroupIndex::from_sample(&hand_panel()).connected_components(), 1);
    }
}
