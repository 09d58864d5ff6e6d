use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::FitResult;
use crate::panel::EstimationSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovMethod {
    /// `s²(X̃'X̃)⁻¹` with `s² = SSR / df_resid`.
    Classical,
    /// Entity-clustered sandwich, robust to heteroscedasticity and arbitrary
    /// serial correlation within an entity.
    WhitePeriod,
}

impl CovMethod {
    pub fn tag(self) -> &'static str {
        match self {
            CovMethod::Classical => "classical",
            CovMethod::WhitePeriod => "white_period",
        }
    }
}

impl fmt::Display for CovMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for CovMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(CovMethod::Classical),
            "white-period" | "white_period" => Ok(CovMethod::WhitePeriod),
            _ => Err(Error::InvalidArgument(format!("unknown covariance method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub matrix: DMatrix<f64>,
    pub method: CovMethod,
    pub cluster_count: Option<usize>,
    /// `G/(G−1)·(n−1)/(n−p)` for the clustered estimator.
    pub small_sample_factor: Option<f64>,
}

impl CovMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Coefficient covariance of a fit, computed on the design actually solved
/// (within-transformed for fixed effects, quasi-demeaned for random effects).
pub fn covariance(fit: &FitResult, sample: &EstimationSample, method: CovMethod) -> Result<CovMatrix> {
    if fit.n_obs != sample.n_obs() {
        return Err(Error::Alignment(format!(
            "fit has {} rows, sample has {}",
            fit.n_obs,
            sample.n_obs()
        )));
    }
    let est = &fit.estimation;
    match method {
        CovMethod::Classical => {
            let s2 = est.work_ssr() / fit.df_resid as f64;
            Ok(CovMatrix {
                matrix: symmetrize(&est.xtx_inv * s2),
                method,
                cluster_count: None,
                small_sample_factor: None,
            })
        }
        CovMethod::WhitePeriod => {
            sandwich_covariance(&est.design, &est.residuals, &est.xtx_inv, &sample.entity_index())
        }
    }
}

/// Cluster-robust sandwich `c·B (Σ_g X_g'e_g e_g'X_g) B` with bread
/// `B = (X'X)⁻¹` and `c = G/(G−1)·(n−1)/(n−p)`.
pub fn sandwich_covariance(
    design: &DMatrix<f64>,
    residuals: &[f64],
    bread: &DMatrix<f64>,
    clusters: &[usize],
) -> Result<CovMatrix> {
    let (n, p) = design.shape();
    if residuals.len() != n || clusters.len() != n {
        return Err(Error::Alignment("design, residuals and clusters differ in length".into()));
    }
    let mut scores: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for (i, (&g, &e)) in clusters.iter().zip(residuals).enumerate() {
        let s = scores.entry(g).or_insert_with(|| DVector::zeros(p));
        for j in 0..p {
            s[j] += design[(i, j)] * e;
        }
    }
    let g = scores.len();
    if g < 2 {
        return Err(Error::ClusterCount { clusters: g });
    }
    let mut meat = DMatrix::zeros(p, p);
    for s in scores.values() {
        meat.ger(1.0, s, s, 1.0);
    }
    let factor = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - p as f64));
    let matrix = symmetrize(bread * meat * bread * factor);
    Ok(CovMatrix {
        matrix,
        method: CovMethod::WhitePeriod,
        cluster_count: Some(g),
        small_sample_factor: Some(factor),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_columns, solve_least_squares};

    fn small_design() -> (DMatrix<f64>, Vec<f64>) {
        let n = 12;
        let x = from_columns(&[
            vec![1.0; n],
            (0..n).map(|i| (i as f64 * 0.7).sin()).collect(),
            (0..n).map(|i| (i as f64).sqrt()).collect(),
        ]);
        let y: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 + ((i * 7 % 5) as f64)).collect();
        (x, y)
    }

    #[test]
    fn singleton_clusters_reduce_to_hc0() {
        let (x, y) = small_design();
        let ls = solve_least_squares(&x, &y).unwrap();
        let clusters: Vec<usize> = (0..x.nrows()).collect();
        let cov = sandwich_covariance(&x, &ls.residuals, &ls.xtx_inv, &clusters).unwrap();

        let (n, p) = x.shape();
        let mut meat = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = x.row(i).transpose();
            meat += &row * row.transpose() * ls.residuals[i].powi(2);
        }
        let factor = (n as f64 / (n as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - p as f64));
        let hc0 = &ls.xtx_inv * meat * &ls.xtx_inv * factor;
        assert!((cov.matrix - hc0).abs().max() < 1e-12);
    }

    #[test]
    fn constant_magnitude_residuals_reproduce_classical() {
        // With single-row clusters and |e_i| = s, the meat equals s² X'X.
        let (x, _) = small_design();
        let s = 0.37;
        let e: Vec<f64> = (0..x.nrows()).map(|i| if i % 3 == 0 { -s } else { s }).collect();
        let bread = (x.transpose() * &x).try_inverse().unwrap();
        let clusters: Vec<usize> = (0..x.nrows()).collect();
        let cov = sandwich_covariance(&x, &e, &bread, &clusters).unwrap();
        let classical = &bread * (s * s);
        let unscaled = &cov.matrix / cov.small_sample_factor.unwrap();
        assert!((unscaled - classical).abs().max() < 1e-10);
    }

    #[test]
    fn one_cluster_is_rejected() {
        let (x, y) = small_design();
        let ls = solve_least_squares(&x, &y).unwrap();
        let clusters = vec![4usize; x.nrows()];
        assert_eq!(
            sandwich_covariance(&x, &ls.residuals, &ls.xtx_inv, &clusters).unwrap_err(),
            Error::ClusterCount { clusters: 1 }
        );
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("white-period".parse::<CovMethod>().unwrap(), CovMethod::WhitePeriod);
        assert_eq!("classical".parse::<CovMethod>().unwrap(), CovMethod::Classical);
        assert!("hc3".parse::<CovMethod>().is_err());
    }
}
