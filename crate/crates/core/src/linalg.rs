//! Dense least squares via Householder QR on a column-equilibrated design.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest tolerated ratio between the biggest and smallest diagonal of R
/// (after scaling every column to unit norm).
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub ssr: f64,
    /// `(X'X)^{-1}` in the original column scaling.
    pub xtx_inv: DMatrix<f64>,
}

/// Minimizes `‖target − design·c‖²`.
///
/// Columns are scaled to unit norm before factorizing, so the rank test is
/// insensitive to the units of individual regressors. The first column whose
/// scaled `|R_jj|` falls below `max|R_ii| / CONDITION_LIMIT` is reported.
pub fn solve_least_squares(design: &DMatrix<f64>, target: &[f64]) -> Result<LeastSquares> {
    let (n, p) = design.shape();
    if target.len() != n {
        return Err(Error::InvalidArgument(format!(
            "design has {n} rows but target has {}",
            target.len()
        )));
    }
    if p == 0 || n < p {
        return Err(Error::InvalidArgument(format!(
            "need at least as many rows as columns (n = {n}, p = {p})"
        )));
    }
    if design.iter().any(|v| !v.is_finite()) || target.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in least-squares input".into()));
    }

    let norms: Vec<f64> = (0..p).map(|j| design.column(j).norm()).collect();
    if let Some(j) = norms.iter().position(|&s| s == 0.0) {
        return Err(Error::Rank { column: j });
    }
    let mut scaled = design.clone();
    for (j, &s) in norms.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(s);
    }

    let qr = scaled.qr();
    let r = qr.r();
    let diag_max = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if let Some(j) = (0..p).find(|&j| r[(j, j)].abs() * CONDITION_LIMIT < diag_max) {
        return Err(Error::Rank { column: j });
    }

    let mut qty = DVector::from_column_slice(target);
    qr.q_tr_mul(&mut qty);
    let head = qty.rows(0, p).into_owned();
    let scaled_coef = r
        .solve_upper_triangular(&head)
        .ok_or(Error::Rank { column: p - 1 })?;
    let coefficients: Vec<f64> = scaled_coef
        .iter()
        .zip(&norms)
        .map(|(c, s)| c / s)
        .collect();

    let fitted = design * DVector::from_column_slice(&coefficients);
    let residuals: Vec<f64> = target.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    let ssr = residuals.iter().map(|e| e * e).sum();

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::Rank { column: p - 1 })?;
    let mut xtx_inv = &r_inv * r_inv.transpose();
    for i in 0..p {
        for j in 0..p {
            xtx_inv[(i, j)] /= norms[i] * norms[j];
        }
    }

    Ok(LeastSquares {
        coefficients,
        residuals,
        ssr,
        xtx_inv,
    })
}

/// Builds an `n × p` matrix from column vectors.
pub fn from_columns(columns: &[Vec<f64>]) -> DMatrix<f64> {
    let n = columns.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i])
}
