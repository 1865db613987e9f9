//! Low-rank non-negative vector autoregression.
//!
//! Fits Y ≈ XΘA by multiplicative updates, where Y collects the current
//! observations of a multivariate time series, A is a known covariate matrix
//! built from lagged observations (or a Gaussian kernel over time, or the
//! identity), X is a column-stochastic non-negative basis and Θ a non-negative
//! parameter matrix. The factorization doubles as a VAR model whose
//! coefficients are X·Θ_d, which gives stability diagnostics via the companion
//! matrix, soft clustering of time points and variables, and recursive
//! forecasting.

pub mod cluster;
pub mod design;
pub mod error;
pub mod frame;
pub mod kernels;
pub mod model_io;
pub mod preprocess;
pub mod select;
pub mod solver;
pub mod var;

pub use error::{Error, Result};
pub use frame::TimeSeriesFrame;
