//! Soft/hard clustering from factor loadings, pooled R², and lagged
//! cross-correlation diagnostics.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MembershipAxis {
    TimePoints,
    Variables,
}

/// Membership probabilities per time point (columns sum to 1) or per variable
/// (rows sum to 1).
#[derive(Debug, Clone)]
pub struct MembershipSeries {
    pub probabilities: Array2<f64>,
    pub axis: MembershipAxis,
    /// Labels for the clustered axis (time labels or variable names).
    pub labels: Vec<String>,
}

impl MembershipSeries {
    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = labels;
        self
    }
}

/// Normalizes each column of the coefficient matrix B to sum one: the relative
/// contribution of each basis at each time point.
pub fn time_membership(b: &Array2<f64>) -> Result<MembershipSeries> {
    let (q, n) = b.dim();
    if q == 0 || n == 0 {
        return Err(Error::InvalidData("empty coefficient matrix".into()));
    }
    let mut probabilities = b.clone();
    for j in 0..n {
        let sum: f64 = (0..q).map(|i| b[(i, j)]).sum();
        if sum <= 0.0 {
            return Err(Error::InvalidData(format!(
                "time membership undefined: coefficient column {j} sums to zero"
            )));
        }
        for i in 0..q {
            probabilities[(i, j)] /= sum;
        }
    }
    Ok(MembershipSeries {
        probabilities,
        axis: MembershipAxis::TimePoints,
        labels: (0..n).map(|j| j.to_string()).collect(),
    })
}

/// Normalizes each row of the basis X to sum one: the relative contribution of
/// each variable to the bases.
pub fn variable_membership(x: &Array2<f64>) -> Result<MembershipSeries> {
    let (p, q) = x.dim();
    if p == 0 || q == 0 {
        return Err(Error::InvalidData("empty basis matrix".into()));
    }
    let mut probabilities = x.clone();
    for i in 0..p {
        let sum: f64 = (0..q).map(|j| x[(i, j)]).sum();
        if sum <= 0.0 {
            return Err(Error::InvalidData(format!(
                "variable membership undefined: basis row {i} sums to zero"
            )));
        }
        for j in 0..q {
            probabilities[(i, j)] /= sum;
        }
    }
    Ok(MembershipSeries {
        probabilities,
        axis: MembershipAxis::Variables,
        labels: (0..p).map(|i| i.to_string()).collect(),
    })
}

/// One hard-clustering assignment: the winning basis and whether the maximum
/// was tied (ties break to the lowest basis index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HardAssignment {
    pub basis: usize,
    pub tied: bool,
}

/// Argmax per column (time mode) or row (variable mode).
pub fn hard_assign(m: &MembershipSeries) -> Vec<HardAssignment> {
    let pick = |v: ArrayView1<f64>| {
        let mut best = 0usize;
        let mut tied = false;
        for (i, &p) in v.iter().enumerate().skip(1) {
            if p > v[best] {
                best = i;
                tied = false;
            } else if p == v[best] && i != best {
                tied = true;
            }
        }
        HardAssignment { basis: best, tied }
    };
    match m.axis {
        MembershipAxis::TimePoints => m.probabilities.columns().into_iter().map(pick).collect(),
        MembershipAxis::Variables => m.probabilities.rows().into_iter().map(pick).collect(),
    }
}

/// Pooled coefficient of determination: 1 − SSE/SST with SST taken around the
/// grand mean of the observed matrix.
pub fn r_squared(y: &Array2<f64>, yhat: &Array2<f64>) -> Result<f64> {
    if y.dim() != yhat.dim() {
        return Err(Error::DimensionMismatch {
            context: "r_squared",
            left: format!("{}x{}", y.nrows(), y.ncols()),
            right: format!("{}x{}", yhat.nrows(), yhat.ncols()),
        });
    }
    let mean = y.mean().unwrap_or(0.0);
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst == 0.0 {
        return Err(Error::InvalidData(
            "r_squared undefined for a constant observed matrix".into(),
        ));
    }
    let sse: f64 = y
        .iter()
        .zip(yhat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - sse / sst)
}

/// Per-variable R², same pooling per row.
pub fn r_squared_per_variable(y: &Array2<f64>, yhat: &Array2<f64>) -> Result<Vec<f64>> {
    if y.dim() != yhat.dim() {
        return Err(Error::DimensionMismatch {
            context: "r_squared_per_variable",
            left: format!("{}x{}", y.nrows(), y.ncols()),
            right: format!("{}x{}", yhat.nrows(), yhat.ncols()),
        });
    }
    let mut out = Vec::with_capacity(y.nrows());
    for (yr, yh) in y.rows().into_iter().zip(yhat.rows()) {
        let mean = yr.mean().unwrap_or(0.0);
        let sst: f64 = yr.iter().map(|v| (v - mean) * (v - mean)).sum();
        if sst == 0.0 {
            out.push(f64::NAN);
            continue;
        }
        let sse: f64 = yr
            .iter()
            .zip(yh.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        out.push(1.0 - sse / sst);
    }
    Ok(out)
}

/// Pearson correlations of two equal-length series at shifts −max_lag..=max_lag.
#[derive(Debug, Clone)]
pub struct LaggedCorrelation {
    /// (lag, correlation) pairs in lag order. Positive lag means `b` trails `a`.
    pub correlations: Vec<(i64, f64)>,
    pub best_lag: i64,
}

pub fn lagged_correlation(a: &[f64], b: &[f64], max_lag: usize) -> Result<LaggedCorrelation> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "lagged_correlation",
            left: a.len().to_string(),
            right: b.len().to_string(),
        });
    }
    if a.len() <= max_lag + 1 {
        return Err(Error::InvalidParameter(format!(
            "series length {} must exceed max_lag + 1 = {}",
            a.len(),
            max_lag + 1
        )));
    }
    let n = a.len();
    let mut correlations = Vec::with_capacity(2 * max_lag + 1);
    let mut best_lag = 0i64;
    let mut best_r = f64::NEG_INFINITY;
    for lag in -(max_lag as i64)..=(max_lag as i64) {
        // positive lag: b trails a, so b[t + lag] lines up with a[t]
        let (xa, xb) = if lag >= 0 {
            (&a[..n - lag as usize], &b[lag as usize..])
        } else {
            (&a[(-lag) as usize..], &b[..n - (-lag) as usize])
        };
        let r = pearson(xa, xb)?;
        if r > best_r {
            best_r = r;
            best_lag = lag;
        }
        correlations.push((lag, r));
    }
    Ok(LaggedCorrelation {
        correlations,
        best_lag,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let da = x - ma;
        let db = y - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidData(
            "correlation undefined over a constant overlap segment".into(),
        ));
    }
    Ok(sab / (saa * sbb).sqrt())
}
