//! Covariance estimators, coefficient tables, goodness of fit and the
//! distribution functions behind every p-value.

mod covariance;
pub mod distributions;
mod table;

pub use covariance::{covariance, sandwich_covariance, CovMatrix, CovMethod};
pub use distributions::{dist_cdf, t_two_sided_p, Distribution};
pub use table::{goodness_of_fit, inference_table, CoefficientRow, CoefficientTable, GoodnessOfFit};
