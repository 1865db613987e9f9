//! k-fold cross-validation over candidate lag orders and ranks.
//!
//! The design is built once per lag order; its target columns are split into k
//! folds. Each fold's model is fitted on the training columns only and scored
//! on the held-out columns as X·Θ·A_heldout — covariate columns are known
//! lagged observations, so held-out prediction needs no refitting. Candidates
//! are compared on held-out SSE per column, which keeps lag orders with
//! different column counts comparable.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::build_lag_design;
use crate::error::{Error, Result};
use crate::frame::TimeSeriesFrame;
use crate::solver::{fit, FitOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    /// Columns shuffled under the seed, then dealt round-robin.
    ShuffledRoundRobin,
    /// Contiguous time blocks, for stricter evaluation.
    ContiguousBlocks,
}

#[derive(Debug, Clone)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub fold_mode: FoldMode,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 20240601,
            fold_mode: FoldMode::ShuffledRoundRobin,
            max_iter: 5_000,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvCandidate {
    pub rank: usize,
    pub lag_order: usize,
    /// Raw held-out SSE per fold.
    pub fold_sse: Vec<f64>,
    /// Mean of `fold_sse` over folds.
    pub mean_sse: f64,
    /// Total held-out SSE divided by the number of held-out columns; the
    /// selection metric.
    pub mean_sse_per_column: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub candidates: Vec<CvCandidate>,
    pub chosen_rank: usize,
    pub chosen_lag_order: usize,
    pub folds: usize,
    pub seed: u64,
    pub fold_mode: FoldMode,
}

fn fold_assignments(n: usize, k: usize, seed: u64, mode: FoldMode) -> Vec<Vec<usize>> {
    match mode {
        FoldMode::ShuffledRoundRobin => {
            let mut perm: Vec<usize> = (0..n).collect();
            // Fisher–Yates under a seeded ChaCha stream
            use rand::Rng;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let mut folds = vec![Vec::new(); k];
            for (i, col) in perm.into_iter().enumerate() {
                folds[i % k].push(col);
            }
            folds
        }
        FoldMode::ContiguousBlocks => {
            // block sizes differ by at most one
            let base = n / k;
            let extra = n % k;
            let mut folds = Vec::with_capacity(k);
            let mut start = 0;
            for f in 0..k {
                let len = base + usize::from(f < extra);
                folds.push((start..start + len).collect());
                start += len;
            }
            folds
        }
    }
}

fn gather_columns(m: &Array2<f64>, cols: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((m.nrows(), cols.len()));
    for (j, &c) in cols.iter().enumerate() {
        out.column_mut(j).assign(&m.column(c));
    }
    out
}

/// Scores every (rank, lag) candidate by k-fold held-out SSE and picks the
/// minimizer (ties break to the smaller lag, then the smaller rank).
/// Candidate × fold fits run in parallel; the report does not depend on
/// execution order and is bit-reproducible for a fixed seed.
pub fn cross_validate(
    frame: &TimeSeriesFrame,
    q_candidates: &[usize],
    d_candidates: &[usize],
    opts: &CvOptions,
) -> Result<CvReport> {
    let p = frame.n_vars();
    let t = frame.n_obs();
    let k = opts.folds;
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "cross-validation needs at least 2 folds, got {k}"
        )));
    }
    if q_candidates.is_empty() || d_candidates.is_empty() {
        return Err(Error::InvalidParameter("empty candidate list".into()));
    }
    for &d in d_candidates {
        if d == 0 || d + k > t {
            return Err(Error::InvalidParameter(format!(
                "infeasible candidate D = {d}: need D >= 1 and D + folds <= T = {t}"
            )));
        }
        let n = t - d;
        for &q in q_candidates {
            if q == 0 || q > p.min(n - n.div_ceil(k)) {
                return Err(Error::InvalidParameter(format!(
                    "infeasible candidate (Q = {q}, D = {d}): Q must be in 1..=min(P, training columns)"
                )));
            }
        }
    }

    // one design per lag order, shared across ranks and folds
    let designs: Vec<(usize, crate::design::Design)> = d_candidates
        .iter()
        .map(|&d| build_lag_design(frame, d).map(|dsg| (d, dsg)))
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for (di, (d, design)) in designs.iter().enumerate() {
        let folds = fold_assignments(design.n_cols(), k, opts.seed, opts.fold_mode);
        for &q in q_candidates {
            for (fi, fold) in folds.iter().enumerate() {
                jobs.push((di, *d, q, fi, fold.clone()));
            }
        }
    }

    let sse_results: Vec<((usize, usize, usize), f64, usize)> = jobs
        .par_iter()
        .map(|(di, d, q, fi, fold)| {
            let design = &designs[*di].1;
            let n = design.n_cols();
            let held: &[usize] = fold;
            let train: Vec<usize> = (0..n).filter(|c| !held.contains(c)).collect();
            let y_train = gather_columns(&design.target, &train);
            let a_train = gather_columns(&design.covariates, &train);
            let sub = crate::design::Design {
                target: y_train,
                covariates: a_train,
                mode: design.mode,
            };
            let mut fit_opts = FitOptions::new(*q);
            fit_opts.max_iter = opts.max_iter;
            fit_opts.tolerance = opts.tolerance;
            fit_opts.seed = opts.seed;
            let model = fit(&sub, &fit_opts)?;

            let a_held = gather_columns(&design.covariates, held);
            let y_held = gather_columns(&design.target, held);
            let pred = model.basis.dot(&model.params.dot(&a_held));
            let sse = (&y_held - &pred).mapv(|v| v * v).sum();
            Ok(((*d, *q, *fi), sse, held.len()))
        })
        .collect::<Result<_>>()?;

    let mut candidates = Vec::new();
    for (d, design) in &designs {
        for &q in q_candidates {
            let mut fold_sse = vec![0.0; k];
            let mut total_cols = 0usize;
            for ((dd, qq, fi), sse, cols) in &sse_results {
                if dd == d && *qq == q {
                    fold_sse[*fi] = *sse;
                    total_cols += cols;
                }
            }
            debug_assert_eq!(total_cols, design.n_cols());
            let total: f64 = fold_sse.iter().sum();
            candidates.push(CvCandidate {
                rank: q,
                lag_order: *d,
                mean_sse: total / k as f64,
                mean_sse_per_column: total / total_cols as f64,
                fold_sse,
            });
        }
    }

    let chosen = candidates
        .iter()
        .min_by(|a, b| {
            a.mean_sse_per_column
                .partial_cmp(&b.mean_sse_per_column)
                .unwrap()
                .then(a.lag_order.cmp(&b.lag_order))
                .then(a.rank.cmp(&b.rank))
        })
        .expect("candidate list is non-empty");

    Ok(CvReport {
        chosen_rank: chosen.rank,
        chosen_lag_order: chosen.lag_order,
        folds: k,
        seed: opts.seed,
        fold_mode: opts.fold_mode,
        candidates,
    })
}
