//! VAR-form view of a fitted factor model: reconstructed coefficient matrices,
//! companion form with a stationarity verdict, parameter accounting, and
//! recursive forecasting.

use ndarray::{Array1, Array2, s};

use crate::error::{Error, Result};
use crate::kernels;
use crate::solver::FactorModel;

/// VAR coefficients Ξ_d = X·Θ_d and intercept ξ = X·θ.
#[derive(Debug, Clone)]
pub struct VarCoefficients {
    /// One P×P matrix per lag, index 0 is lag 1.
    pub xi: Vec<Array2<f64>>,
    pub intercept: Array1<f64>,
}

/// First-order companion rewriting of the VAR(D), per-block layout
/// [Ξ_1 … Ξ_D; I 0 …; …] with intercept (ξ over zeros).
#[derive(Debug, Clone)]
pub struct CompanionForm {
    pub matrix: Array2<f64>,
    pub intercept: Array1<f64>,
    pub spectral_radius: f64,
    /// Strict ρ < 1; the raw radius is reported so near-boundary cases stay visible.
    pub stationary: bool,
}

/// Parameter counts of the factorized VAR against a standard VAR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterReduction {
    pub nmfvar_params: usize,
    pub var_params: usize,
    pub ratio: f64,
}

/// Reconstructs the VAR coefficients from a lag-mode model.
pub fn var_coefficients(model: &FactorModel) -> Result<VarCoefficients> {
    if !model.mode.is_lags() {
        return Err(Error::InvalidParameter(
            "VAR coefficients require a model fitted with lag covariates".into(),
        ));
    }
    let d = model.lag_order;
    let xi = (1..=d)
        .map(|lag| model.basis.dot(&model.theta_lag_block(lag)))
        .collect();
    let intercept = model.basis.dot(&model.theta_intercept());
    Ok(VarCoefficients { xi, intercept })
}

/// Builds the PD×PD companion matrix and evaluates its spectral radius.
pub fn companion_form(coeffs: &VarCoefficients) -> Result<CompanionForm> {
    let d = coeffs.xi.len();
    if d == 0 {
        return Err(Error::InvalidParameter("companion form needs at least one lag".into()));
    }
    let p = coeffs.intercept.len();
    for (i, xi) in coeffs.xi.iter().enumerate() {
        if xi.dim() != (p, p) {
            return Err(Error::DimensionMismatch {
                context: "companion lag block",
                left: format!("{}x{}", xi.nrows(), xi.ncols()),
                right: format!("{p}x{p} at lag {}", i + 1),
            });
        }
    }
    let n = p * d;
    let mut f = Array2::zeros((n, n));
    for (i, xi) in coeffs.xi.iter().enumerate() {
        f.slice_mut(s![0..p, i * p..(i + 1) * p]).assign(xi);
    }
    for i in 1..d {
        for j in 0..p {
            f[(i * p + j, (i - 1) * p + j)] = 1.0;
        }
    }
    let mut intercept = Array1::zeros(n);
    intercept.slice_mut(s![0..p]).assign(&coeffs.intercept);

    let spectral_radius = kernels::spectral_radius(&f, 1e-10, 20_000)?;
    Ok(CompanionForm {
        matrix: f,
        intercept,
        spectral_radius,
        stationary: spectral_radius < 1.0,
    })
}

/// Parameter accounting: PQ + Q(PD+1) for the factorized model against
/// P(PD+1) for a standard VAR, and their ratio Q(P+PD+1)/(P(PD+1)).
pub fn parameter_reduction(p: usize, q: usize, d: usize) -> ParameterReduction {
    let nmfvar_params = p * q + q * (p * d + 1);
    let var_params = p * (p * d + 1);
    ParameterReduction {
        nmfvar_params,
        var_params,
        ratio: nmfvar_params as f64 / var_params as f64,
    }
}

/// Recursive h-step forecast from the most recent D observations (columns
/// ordered oldest to newest, in the model's preprocessed space). Each step
/// computes ŷ = Σ_d Ξ_d y_{t+1−d} + ξ and appends it to the history.
pub fn forecast(model: &FactorModel, history: &Array2<f64>, horizon: usize) -> Result<Array2<f64>> {
    if !model.mode.is_lags() {
        return Err(Error::InvalidParameter(
            "forecasting requires lag covariates".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let p = model.n_vars();
    let d = model.lag_order;
    if history.dim() != (p, d) {
        return Err(Error::DimensionMismatch {
            context: "forecast history",
            left: format!("{}x{}", history.nrows(), history.ncols()),
            right: format!("{p}x{d}"),
        });
    }
    if history.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidData(
            "forecast history must be non-negative and finite".into(),
        ));
    }

    let mut window: Vec<Array1<f64>> = (0..d).map(|j| history.column(j).to_owned()).collect();
    let mut out = Array2::zeros((p, horizon));
    let mut a_col = Array1::zeros(p * d + 1);
    for h in 0..horizon {
        for lag in 1..=d {
            let col = &window[window.len() - lag];
            for i in 0..p {
                a_col[(lag - 1) * p + i] = col[i];
            }
        }
        a_col[p * d] = 1.0;
        let y = model.predict_column(a_col.view());
        out.column_mut(h).assign(&y);
        window.push(y);
        if window.len() > d {
            window.remove(0);
        }
    }
    Ok(out)
}
