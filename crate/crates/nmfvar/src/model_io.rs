//! Model file serialization: a JSON document carrying the fitted factors, the
//! preprocessing pipeline with its inversion state, and fit diagnostics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::design::CovariateMode;
use crate::error::{Error, Result};
use crate::preprocess::FittedPipeline;
use crate::solver::{FactorModel, FitDiagnostics};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsDoc {
    pub objective_trace: Vec<f64>,
    pub r_squared: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// On-disk model document. `basis` and `theta` are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDoc {
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub variable_names: Vec<String>,
    pub basis: Vec<f64>,
    pub theta: Vec<f64>,
    pub pipeline: FittedPipeline,
    pub diagnostics: DiagnosticsDoc,
    pub seed: u64,
    pub covariate_mode: CovariateMode,
}

impl ModelDoc {
    /// `t` is the preprocessed series length the design was built from.
    pub fn from_model(
        model: &FactorModel,
        pipeline: &FittedPipeline,
        variable_names: &[String],
        t: usize,
        seed: u64,
    ) -> Self {
        Self {
            p: model.n_vars(),
            t,
            q: model.rank,
            d: model.lag_order,
            variable_names: variable_names.to_vec(),
            basis: model.basis.iter().cloned().collect(),
            theta: model.params.iter().cloned().collect(),
            pipeline: pipeline.clone(),
            diagnostics: DiagnosticsDoc {
                objective_trace: model.diagnostics.objective_trace.clone(),
                r_squared: model.diagnostics.r_squared,
                iterations: model.diagnostics.iterations,
                converged: model.diagnostics.converged,
            },
            seed,
            covariate_mode: model.mode,
        }
    }

    /// Reconstructs the in-memory model (the coefficient matrix is not stored
    /// and comes back empty; it is recomputed from a design when needed).
    pub fn to_model(&self) -> Result<FactorModel> {
        let k = match self.covariate_mode {
            CovariateMode::Lags { lag_order } => self.p * lag_order + 1,
            _ => self.t,
        };
        if self.basis.len() != self.p * self.q {
            return Err(Error::Model(format!(
                "basis has {} entries, expected {}x{}",
                self.basis.len(),
                self.p,
                self.q
            )));
        }
        if self.theta.len() != self.q * k {
            return Err(Error::Model(format!(
                "theta has {} entries, expected {}x{}",
                self.theta.len(),
                self.q,
                k
            )));
        }
        let basis = Array2::from_shape_vec((self.p, self.q), self.basis.clone())
            .map_err(|e| Error::Model(e.to_string()))?;
        let params = Array2::from_shape_vec((self.q, k), self.theta.clone())
            .map_err(|e| Error::Model(e.to_string()))?;
        Ok(FactorModel {
            basis,
            params,
            rank: self.q,
            lag_order: self.covariate_mode.lag_order(),
            mode: self.covariate_mode,
            diagnostics: FitDiagnostics {
                objective_trace: self.diagnostics.objective_trace.clone(),
                iterations: self.diagnostics.iterations,
                converged: self.diagnostics.converged,
                r_squared: self.diagnostics.r_squared,
                coefficient_matrix: Array2::zeros((self.q, 0)),
                zero_rows: Vec::new(),
            },
        })
    }
}

pub fn save_model(path: &Path, doc: &ModelDoc) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, doc).map_err(|e| Error::Model(e.to_string()))?;
    out.write_all(b"\n").map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    out.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelDoc> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Model(format!("{}: {e}", path.display())))
}
