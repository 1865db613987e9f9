//! Target/covariate matrix construction for the three covariate regimes:
//! lagged observations, Gaussian kernel over time, and identity.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::TimeSeriesFrame;

/// How the covariate matrix was built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateMode {
    Lags { lag_order: usize },
    Kernel { beta: f64 },
    Identity,
}

impl CovariateMode {
    pub fn lag_order(&self) -> usize {
        match self {
            CovariateMode::Lags { lag_order } => *lag_order,
            _ => 0,
        }
    }

    pub fn is_lags(&self) -> bool {
        matches!(self, CovariateMode::Lags { .. })
    }
}

/// A fitting problem: non-negative target Y (P×N) and known covariates A (K×N).
#[derive(Debug, Clone)]
pub struct Design {
    pub target: Array2<f64>,
    pub covariates: Array2<f64>,
    pub mode: CovariateMode,
}

impl Design {
    /// Number of target columns N (= T − D in lag mode, T otherwise).
    pub fn n_cols(&self) -> usize {
        self.target.ncols()
    }

    /// Index of the all-ones intercept row, present only in lag mode.
    pub fn intercept_row_index(&self) -> Option<usize> {
        match self.mode {
            CovariateMode::Lags { .. } => Some(self.covariates.nrows() - 1),
            _ => None,
        }
    }
}

fn check_non_negative(frame: &TimeSeriesFrame) -> Result<()> {
    if let Some(((i, j), v)) = frame.values().indexed_iter().find(|(_, &v)| v < 0.0) {
        return Err(Error::InvalidData(format!(
            "design requires non-negative values; variable '{}' at {} is {}",
            frame.variable_names()[i],
            frame.time_labels()[j],
            v
        )));
    }
    Ok(())
}

/// Builds the lag design: target column t holds y_t for t = D+1..T, covariate
/// column t stacks y_{t−1}, …, y_{t−D} and a trailing 1 (intercept row).
pub fn build_lag_design(frame: &TimeSeriesFrame, lag_order: usize) -> Result<Design> {
    let p = frame.n_vars();
    let t = frame.n_obs();
    if lag_order == 0 {
        return Err(Error::InvalidParameter("lag order must be at least 1".into()));
    }
    if lag_order >= t {
        return Err(Error::InvalidParameter(format!(
            "lag order {lag_order} must be smaller than the series length {t}"
        )));
    }
    check_non_negative(frame)?;

    let n = t - lag_order;
    let values = frame.values();
    let mut target = Array2::zeros((p, n));
    let mut covariates = Array2::zeros((p * lag_order + 1, n));
    for j in 0..n {
        let time = lag_order + j; // 0-based index of y_t
        for i in 0..p {
            target[(i, j)] = values[(i, time)];
        }
        for d in 1..=lag_order {
            for i in 0..p {
                covariates[((d - 1) * p + i, j)] = values[(i, time - d)];
            }
        }
        covariates[(p * lag_order, j)] = 1.0;
    }
    Ok(Design {
        target,
        covariates,
        mode: CovariateMode::Lags { lag_order },
    })
}

/// Gaussian kernel matrix K[i,j] = exp(−β·|i−j|²) over the time index
/// positions 0..T (equal spacing makes index distance canonical).
pub fn build_kernel_matrix(n_times: usize, beta: f64) -> Result<Array2<f64>> {
    if beta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "kernel bandwidth beta must be positive, got {beta}"
        )));
    }
    if n_times == 0 {
        return Err(Error::InvalidParameter("kernel needs at least one time point".into()));
    }
    let mut k = Array2::zeros((n_times, n_times));
    for i in 0..n_times {
        for j in 0..=i {
            let d = (i - j) as f64;
            let v = (-beta * d * d).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Full-frame target with Gaussian-kernel covariates (T×T).
pub fn build_kernel_design(frame: &TimeSeriesFrame, beta: f64) -> Result<Design> {
    check_non_negative(frame)?;
    let covariates = build_kernel_matrix(frame.n_obs(), beta)?;
    Ok(Design {
        target: frame.values().clone(),
        covariates,
        mode: CovariateMode::Kernel { beta },
    })
}

/// Full-frame target with identity covariates: fitting this is standard
/// two-factor NMF (Θ plays the coefficient matrix B).
pub fn build_identity_design(frame: &TimeSeriesFrame) -> Result<Design> {
    check_non_negative(frame)?;
    Ok(Design {
        target: frame.values().clone(),
        covariates: Array2::eye(frame.n_obs()),
        mode: CovariateMode::Identity,
    })
}
