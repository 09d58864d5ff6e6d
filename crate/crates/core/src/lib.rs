//! Panel estimation of share-price fundamentals.
//!
//! The pipeline fits a two-way fixed-effects regression of log share price on
//! log dividends, cash flow and book value per share, removes the period
//! effects to obtain each company's fundamentals, and summarizes the
//! divergence of prices from those fundamentals year by year.

pub mod error;
pub mod estimators;
pub mod fundamentals;
pub mod inference;
pub mod linalg;
pub mod panel;
pub mod selection;
pub mod synthetic;

pub use error::{Error, Result};
