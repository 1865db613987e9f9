//! Multiplicative-update solver for Y ≈ XΘA with a known covariate matrix A.
//!
//! X is kept column-stochastic (each update is followed by a rescale that
//! compensates Θ so the product XΘ is unchanged), Θ is non-negative, and the
//! squared Euclidean objective is non-increasing across iterations. The basis
//! may be fixed in advance, in which case only Θ is updated.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster;
use crate::design::{CovariateMode, Design};
use crate::error::{Error, Result};
use crate::kernels;

/// Basis initialization for free-basis fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Columns start from K-means centroids of the target columns.
    Kmeans,
    /// Columns start from uniform random draws.
    UniformRandom,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub rank: usize,
    pub max_iter: usize,
    /// Relative objective change below which the fit stops.
    pub tolerance: f64,
    pub seed: u64,
    /// Multiplied by max|Ŷ| to guard every Hadamard division.
    pub epsilon_scale: f64,
    /// Fix the basis (scaled to column sums one) and update only Θ.
    pub fixed_basis: Option<Array2<f64>>,
    pub init: InitMode,
}

impl FitOptions {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            max_iter: 5_000,
            tolerance: 1e-9,
            seed: 20240601,
            epsilon_scale: 1e-16,
            fixed_basis: None,
            init: InitMode::Kmeans,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    /// D_EU after initialization and after each iteration; non-increasing.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Pooled R² of the fit; None when the target is constant.
    pub r_squared: Option<f64>,
    /// Coefficient matrix B = ΘA.
    pub coefficient_matrix: Array2<f64>,
    /// Indices of all-zero target rows (their basis rows converge to zero).
    pub zero_rows: Vec<usize>,
}

/// A fitted factorization Y ≈ XΘA.
#[derive(Debug, Clone)]
pub struct FactorModel {
    /// P×Q column-stochastic basis.
    pub basis: Array2<f64>,
    /// Q×K parameter matrix; K = PD+1 in lag mode.
    pub params: Array2<f64>,
    pub rank: usize,
    pub lag_order: usize,
    pub mode: CovariateMode,
    pub diagnostics: FitDiagnostics,
}

impl FactorModel {
    pub fn n_vars(&self) -> usize {
        self.basis.nrows()
    }

    /// Lag block Θ_d (1-based d), a Q×P view.
    pub fn theta_lag_block(&self, d: usize) -> ndarray::ArrayView2<'_, f64> {
        let p = self.n_vars();
        self.params.slice(ndarray::s![.., (d - 1) * p..d * p])
    }

    /// Intercept column θ (lag mode only).
    pub fn theta_intercept(&self) -> ArrayView1<'_, f64> {
        self.params.column(self.params.ncols() - 1)
    }

    /// X·(Θ·a) for one covariate column, computed with a plain nested loop so
    /// per-column predictions are bitwise-reproducible across call sites.
    pub fn predict_column(&self, a_col: ArrayView1<'_, f64>) -> Array1<f64> {
        let q = self.rank;
        let k = self.params.ncols();
        let p = self.n_vars();
        debug_assert_eq!(a_col.len(), k);
        let mut b = Array1::zeros(q);
        for i in 0..q {
            let mut acc = 0.0;
            for j in 0..k {
                acc += self.params[(i, j)] * a_col[j];
            }
            b[i] = acc;
        }
        let mut y = Array1::zeros(p);
        for i in 0..p {
            let mut acc = 0.0;
            for j in 0..q {
                acc += self.basis[(i, j)] * b[j];
            }
            y[i] = acc;
        }
        y
    }
}

/// Squared Euclidean distance Σ (y − ŷ)².
pub fn objective(y: &Array2<f64>, yhat: &Array2<f64>) -> Result<f64> {
    if y.dim() != yhat.dim() {
        return Err(Error::DimensionMismatch {
            context: "objective",
            left: format!("{}x{}", y.nrows(), y.ncols()),
            right: format!("{}x{}", yhat.nrows(), yhat.ncols()),
        });
    }
    Ok(y.iter()
        .zip(yhat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Basis update X ⊙ (YB′ ⊘ (ŶB′ + ε)).
pub fn update_basis(
    x: &Array2<f64>,
    y: &Array2<f64>,
    yhat: &Array2<f64>,
    b: &Array2<f64>,
    eps: f64,
) -> Result<Array2<f64>> {
    let num = y.dot(&b.t());
    let den = yhat.dot(&b.t());
    let ratio = kernels::hadamard_div(&num, &den, eps)?;
    kernels::hadamard_mul(x, &ratio)
}

/// Parameter update Θ ⊙ ((X′YA′) ⊘ (X′ŶA′ + ε)).
pub fn update_theta(
    theta: &Array2<f64>,
    x: &Array2<f64>,
    y: &Array2<f64>,
    yhat: &Array2<f64>,
    a: &Array2<f64>,
    eps: f64,
) -> Result<Array2<f64>> {
    let num = x.t().dot(y).dot(&a.t());
    let den = x.t().dot(yhat).dot(&a.t());
    let ratio = kernels::hadamard_div(&num, &den, eps)?;
    kernels::hadamard_mul(theta, &ratio)
}

/// Rescales each basis column to sum one and compensates the matching Θ row,
/// leaving the product XΘ unchanged.
pub fn normalize_columns(
    x: &Array2<f64>,
    theta: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let q = x.ncols();
    if theta.nrows() != q {
        return Err(Error::DimensionMismatch {
            context: "normalize_columns",
            left: format!("basis has {q} columns"),
            right: format!("theta has {} rows", theta.nrows()),
        });
    }
    let mut x_out = x.clone();
    let mut theta_out = theta.clone();
    for qi in 0..q {
        let s: f64 = x.column(qi).sum();
        if s <= 0.0 {
            return Err(Error::Numeric(format!("basis column {qi} is all zero")));
        }
        x_out.column_mut(qi).mapv_inplace(|v| v / s);
        theta_out.row_mut(qi).mapv_inplace(|v| v * s);
    }
    Ok((x_out, theta_out))
}

/// Basis from K-means centroids of the target columns, column-normalized.
/// A zero-sum centroid is replaced by the uniform column 1/P.
pub fn init_basis_kmeans(y: &Array2<f64>, q: usize, seed: u64) -> Result<Array2<f64>> {
    let (p, n) = y.dim();
    if q > n {
        return Err(Error::InvalidParameter(format!(
            "rank {q} exceeds the number of target columns {n}"
        )));
    }
    let points = y.t().to_owned(); // one observation column per row
    let centroids = kernels::kmeans(points.view(), q, seed, 200)?;
    let mut x = centroids.t().to_owned(); // P×Q
    for qi in 0..q {
        let s: f64 = x.column(qi).sum();
        if s > 0.0 {
            x.column_mut(qi).mapv_inplace(|v| v / s);
        } else {
            x.column_mut(qi).fill(1.0 / p as f64);
        }
    }
    Ok(x)
}

fn max_abs(m: &Array2<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Fits the factorization by alternating multiplicative updates until the
/// relative objective change drops below the tolerance or `max_iter` is hit.
/// Deterministic for a fixed seed.
pub fn fit(design: &Design, opts: &FitOptions) -> Result<FactorModel> {
    let y = &design.target;
    let a = &design.covariates;
    let (p, n) = y.dim();
    let k = a.nrows();
    let q = opts.rank;

    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "fit target/covariates",
            left: format!("target has {n} columns"),
            right: format!("covariates has {} columns", a.ncols()),
        });
    }
    if q == 0 || q > p.min(n) {
        return Err(Error::InvalidParameter(format!(
            "rank Q = {q} must satisfy 1 <= Q <= min(P, N) = {}",
            p.min(n)
        )));
    }
    if opts.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    if opts.tolerance <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {}",
            opts.tolerance
        )));
    }
    for (name, m) in [("target", y), ("covariates", a)] {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{name} contains non-finite values")));
        }
        if m.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidData(format!("{name} contains negative values")));
        }
    }
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidData("target matrix is all zero".into()));
    }

    let zero_rows: Vec<usize> = y
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(_, row)| row.iter().all(|&v| v == 0.0))
        .map(|(i, _)| i)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let fixed = opts.fixed_basis.is_some();
    let mut x = match &opts.fixed_basis {
        Some(fb) => {
            if fb.dim() != (p, q) {
                return Err(Error::DimensionMismatch {
                    context: "fixed basis",
                    left: format!("{}x{}", fb.nrows(), fb.ncols()),
                    right: format!("{p}x{q}"),
                });
            }
            if fb.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidData("fixed basis must be non-negative".into()));
            }
            let mut fb = fb.clone();
            for qi in 0..q {
                let s: f64 = fb.column(qi).sum();
                if s <= 0.0 {
                    return Err(Error::InvalidData(format!(
                        "fixed basis column {qi} is all zero"
                    )));
                }
                fb.column_mut(qi).mapv_inplace(|v| v / s);
            }
            fb
        }
        None => match opts.init {
            InitMode::Kmeans => init_basis_kmeans(y, q, opts.seed)?,
            InitMode::UniformRandom => {
                let mut x = Array2::from_shape_fn((p, q), |_| rng.random::<f64>());
                for qi in 0..q {
                    let s: f64 = x.column(qi).sum();
                    x.column_mut(qi).mapv_inplace(|v| v / s);
                }
                x
            }
        },
    };

    // random Θ scaled so the initial approximation matches Y in total mass
    let mut theta = Array2::from_shape_fn((q, k), |_| rng.random::<f64>());
    let initial_mass = x.dot(&theta.dot(a)).sum();
    if initial_mass > 0.0 {
        let scale = y.sum() / initial_mass;
        theta.mapv_inplace(|v| v * scale);
    }

    // hot loop with preallocated buffers; the arithmetic is identical to the
    // standalone update_basis/update_theta/normalize_columns operations
    use ndarray::linalg::general_mat_mul;
    let mut b = Array2::zeros((q, n));
    let mut yhat = Array2::zeros((p, n));
    let mut num_x = Array2::zeros((p, q));
    let mut den_x = Array2::zeros((p, q));
    let mut qn = Array2::zeros((q, n));
    let mut num_t = Array2::zeros((q, k));
    let mut den_t = Array2::zeros((q, k));

    let refresh = |b: &mut Array2<f64>, yhat: &mut Array2<f64>, x: &Array2<f64>, theta: &Array2<f64>| {
        general_mat_mul(1.0, theta, a, 0.0, b);
        general_mat_mul(1.0, x, b, 0.0, yhat);
    };
    refresh(&mut b, &mut yhat, &x, &theta);
    let mut trace = Vec::with_capacity(opts.max_iter.min(16_384) + 1);
    trace.push(objective(y, &yhat)?);

    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        if !fixed {
            let eps = opts.epsilon_scale * max_abs(&yhat);
            general_mat_mul(1.0, y, &b.t(), 0.0, &mut num_x);
            general_mat_mul(1.0, &yhat, &b.t(), 0.0, &mut den_x);
            ndarray::Zip::from(&mut x)
                .and(&num_x)
                .and(&den_x)
                .for_each(|xv, &nv, &dv| *xv *= nv / (dv + eps));
            for qi in 0..q {
                let s: f64 = x.column(qi).sum();
                if s <= 0.0 {
                    return Err(Error::Numeric(format!("basis column {qi} is all zero")));
                }
                x.column_mut(qi).mapv_inplace(|v| v / s);
                theta.row_mut(qi).mapv_inplace(|v| v * s);
            }
            refresh(&mut b, &mut yhat, &x, &theta);
        }
        let eps = opts.epsilon_scale * max_abs(&yhat);
        general_mat_mul(1.0, &x.t(), y, 0.0, &mut qn);
        general_mat_mul(1.0, &qn, &a.t(), 0.0, &mut num_t);
        general_mat_mul(1.0, &x.t(), &yhat, 0.0, &mut qn);
        general_mat_mul(1.0, &qn, &a.t(), 0.0, &mut den_t);
        ndarray::Zip::from(&mut theta)
            .and(&num_t)
            .and(&den_t)
            .for_each(|tv, &nv, &dv| *tv *= nv / (dv + eps));
        refresh(&mut b, &mut yhat, &x, &theta);

        let obj = objective(y, &yhat)?;
        if !obj.is_finite() {
            return Err(Error::Numeric(format!(
                "objective became non-finite at iteration {iterations}"
            )));
        }
        let prev = *trace.last().unwrap();
        trace.push(obj);
        iterations += 1;
        if (prev - obj).abs() < opts.tolerance * prev.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    let r_squared = cluster::r_squared(y, &yhat).ok();
    Ok(FactorModel {
        rank: q,
        lag_order: design.mode.lag_order(),
        mode: design.mode,
        diagnostics: FitDiagnostics {
            objective_trace: trace,
            iterations,
            converged,
            r_squared,
            coefficient_matrix: b,
            zero_rows,
        },
        basis: x,
        params: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_identity_design, build_lag_design};
    use crate::frame::TimeSeriesFrame;
    use ndarray::array;

    fn rng_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
    }

    fn frame_from(values: Array2<f64>) -> TimeSeriesFrame {
        let t = values.ncols();
        let names = (0..values.nrows()).map(|i| format!("v{i}")).collect();
        TimeSeriesFrame::from_numeric(names, (0..t).map(|i| i as f64).collect(), values).unwrap()
    }

    /// Lag-design series that is exactly Y = XΘA (no noise), with the factors.
    fn planted_series_with_factors(
        p: usize,
        q: usize,
        d: usize,
        t: usize,
        seed: u64,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::from_shape_fn((p, q), |_| rng.random::<f64>() + 0.05);
        for qi in 0..q {
            let s: f64 = x.column(qi).sum();
            x.column_mut(qi).mapv_inplace(|v| v / s);
        }
        let mut theta = Array2::from_shape_fn((q, p * d + 1), |_| 0.5 * rng.random::<f64>());
        for qi in 0..q {
            theta[(qi, p * d)] = 0.2 + 0.3 * rng.random::<f64>();
        }
        // scale lag blocks toward a stable-but-lively spectral radius
        let coeff_mass: f64 = theta.slice(ndarray::s![.., ..p * d]).sum();
        let scale = 0.9 / coeff_mass.max(1e-9) * (q as f64);
        theta
            .slice_mut(ndarray::s![.., ..p * d])
            .mapv_inplace(|v| v * scale);
        let mut vals = Array2::zeros((p, t));
        for j in 0..d {
            for i in 0..p {
                vals[(i, j)] = rng.random::<f64>() + 0.5;
            }
        }
        for time in d..t {
            let mut a_col = Array1::zeros(p * d + 1);
            for dd in 1..=d {
                for i in 0..p {
                    a_col[(dd - 1) * p + i] = vals[(i, time - dd)];
                }
            }
            a_col[p * d] = 1.0;
            let bt = theta.dot(&a_col);
            let yt = x.dot(&bt);
            for i in 0..p {
                vals[(i, time)] = yt[i];
            }
        }
        (vals, x, theta)
    }

    fn planted_series(p: usize, q: usize, d: usize, t: usize, seed: u64) -> Array2<f64> {
        planted_series_with_factors(p, q, d, t, seed).0
    }

    #[test]
    fn objective_trivial_and_oracle() {
        let y = array![[1.0, 2.0]];
        assert_eq!(objective(&y, &y).unwrap(), 0.0);
        assert_eq!(objective(&y, &array![[0.0, 0.0]]).unwrap(), 5.0);

        let a = rng_matrix(6, 9, 3);
        let b = rng_matrix(6, 9, 4);
        let mut want = 0.0;
        for i in 0..6 {
            for j in 0..9 {
                let d = a[(i, j)] - b[(i, j)];
                want += d * d;
            }
        }
        assert_eq!(objective(&a, &b).unwrap(), want);
    }

    #[test]
    fn update_basis_fixed_point_and_zeros() {
        let x = array![[0.3, 0.0], [0.7, 1.0]];
        let theta = array![[1.0, 2.0], [0.5, 0.1]];
        let a = array![[1.0, 0.4], [0.2, 1.0]];
        let b = theta.dot(&a);
        let y = x.dot(&b);
        let next = update_basis(&x, &y, &y, &b, 1e-16 * 3.0).unwrap();
        for (n, o) in next.iter().zip(x.iter()) {
            assert!((n - o).abs() <= 1e-12, "{n} vs {o}");
        }
        assert_eq!(next[(0, 1)], 0.0);
    }

    #[test]
    fn update_theta_fixed_point_and_zeros() {
        let x = array![[0.3, 0.2], [0.7, 0.8]];
        let theta = array![[1.0, 0.0], [0.5, 0.1]];
        let a = array![[1.0, 0.4, 0.3], [0.2, 1.0, 0.6]];
        let b = theta.dot(&a);
        let y = x.dot(&b);
        let next = update_theta(&theta, &x, &y, &y, &a, 1e-16).unwrap();
        for (n, o) in next.iter().zip(theta.iter()) {
            assert!((n - o).abs() <= 1e-12);
        }
        assert_eq!(next[(0, 1)], 0.0);
    }

    #[test]
    fn one_update_step_never_increases_objective() {
        for seed in 0..100u64 {
            let p = 3 + (seed as usize % 3);
            let n = 6 + (seed as usize % 5);
            let q = 2;
            let k = 4;
            let y = rng_matrix(p, n, seed * 3 + 1);
            let a = rng_matrix(k, n, seed * 3 + 2);
            let x0 = rng_matrix(p, q, seed * 3 + 3);
            let theta0 = rng_matrix(q, k, seed * 3 + 4);
            let b = theta0.dot(&a);
            let yhat = x0.dot(&b);
            let before = objective(&y, &yhat).unwrap();
            let eps = 1e-16 * max_abs(&yhat);

            let x1 = update_basis(&x0, &y, &yhat, &b, eps).unwrap();
            let after_x = objective(&y, &x1.dot(&b)).unwrap();
            assert!(after_x <= before * (1.0 + 1e-10), "basis step raised objective");

            let theta1 = update_theta(&theta0, &x0, &y, &yhat, &a, eps).unwrap();
            let after_t = objective(&y, &x0.dot(&theta1.dot(&a))).unwrap();
            assert!(after_t <= before * (1.0 + 1e-10), "theta step raised objective");
        }
    }

    #[test]
    fn normalize_columns_preserves_product() {
        let x = array![[2.0], [2.0]];
        let theta = array![[1.0, 3.0]];
        let (xn, tn) = normalize_columns(&x, &theta).unwrap();
        assert_eq!(xn, array![[0.5], [0.5]]);
        assert_eq!(tn, array![[4.0, 12.0]]);
        assert_eq!(x.dot(&theta), xn.dot(&tn));

        let x = rng_matrix(5, 3, 10);
        let theta = rng_matrix(3, 7, 11);
        let before = x.dot(&theta);
        let (xn, tn) = normalize_columns(&x, &theta).unwrap();
        let after = xn.dot(&tn);
        let scale = max_abs(&before);
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() <= 1e-13 * scale);
        }
        for qi in 0..3 {
            assert!((xn.column(qi).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_columns_stochastic_input_unchanged() {
        let x = array![[0.25, 0.5], [0.75, 0.5]];
        let theta = array![[1.0, 2.0], [3.0, 4.0]];
        let (xn, tn) = normalize_columns(&x, &theta).unwrap();
        assert_eq!(xn, x);
        assert_eq!(tn, theta);
    }

    #[test]
    fn normalize_columns_zero_column_errors() {
        let x = array![[0.0, 0.5], [0.0, 0.5]];
        let theta = array![[1.0, 2.0], [3.0, 4.0]];
        let err = normalize_columns(&x, &theta).unwrap_err();
        assert!(err.to_string().contains("column 0"), "{err}");
    }

    #[test]
    fn kmeans_init_properties() {
        let y = rng_matrix(4, 20, 77);
        let x = init_basis_kmeans(&y, 3, 5).unwrap();
        for qi in 0..3 {
            assert!((x.column(qi).sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(x, init_basis_kmeans(&y, 3, 5).unwrap());

        let x1 = init_basis_kmeans(&y, 1, 5).unwrap();
        let mean = y.mean_axis(Axis(1)).unwrap();
        let total = mean.sum();
        for i in 0..4 {
            assert!((x1[(i, 0)] - mean[i] / total).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_single_column_identity_design_rank_one() {
        let values = array![[3.0, 3.0], [1.0, 1.0]];
        let f = frame_from(values);
        let design = build_identity_design(&f).unwrap();
        let model = fit(&design, &FitOptions::new(1)).unwrap();
        // each column is (3,1): X = (0.75, 0.25), Θ scales back to column sums
        assert!((model.basis[(0, 0)] - 0.75).abs() < 1e-9);
        assert!((model.basis[(1, 0)] - 0.25).abs() < 1e-9);
        for j in 0..2 {
            assert!((model.params[(0, j)] - 4.0).abs() < 1e-8);
        }
    }

    #[test]
    fn fit_monotone_objective_on_random_instances() {
        for seed in 0..20u64 {
            let p = 3 + (seed as usize % 4);
            let t = 20 + (seed as usize % 10);
            let d = 1 + (seed as usize % 3);
            let q = 1 + (seed as usize % 2);
            let f = frame_from(rng_matrix(p, t, 40 + seed));
            let design = build_lag_design(&f, d).unwrap();
            let mut opts = FitOptions::new(q);
            opts.max_iter = 300;
            opts.seed = seed;
            let model = fit(&design, &opts).unwrap();
            let tr = &model.diagnostics.objective_trace;
            for w in tr.windows(2) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-10) + 1e-300,
                    "seed {seed}: trace increased from {} to {}",
                    w[0],
                    w[1]
                );
            }
            // non-negativity and column stochasticity after fit
            assert!(model.basis.iter().all(|&v| v >= 0.0));
            assert!(model.params.iter().all(|&v| v >= 0.0));
            for qi in 0..q {
                assert!((model.basis.column(qi).sum() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fit_planted_factors_recovers_product() {
        let vals = planted_series(5, 2, 2, 60, 9);
        let f = frame_from(vals);
        let design = build_lag_design(&f, 2).unwrap();
        let mut opts = FitOptions::new(2);
        opts.max_iter = 20_000;
        opts.tolerance = 1e-14;
        let model = fit(&design, &opts).unwrap();
        let rel = model.diagnostics.objective_trace.last().unwrap()
            / design.target.iter().map(|v| v * v).sum::<f64>();
        assert!(rel < 1e-5, "relative objective {rel}");
    }

    #[test]
    fn fit_fixed_point_extra_iteration_is_stable() {
        // start at the exact factorization Y = XΘA: one full iteration must
        // not move any entry by more than 1e-12
        for seed in [3u64, 14, 25] {
            let (vals, x_true, theta_true) = planted_series_with_factors(4, 2, 2, 40, seed);
            let f = frame_from(vals);
            let design = build_lag_design(&f, 2).unwrap();
            let y = &design.target;
            let a = &design.covariates;

            let mut x = x_true.clone();
            let mut theta = theta_true.clone();
            let b = theta.dot(a);
            let yhat = x.dot(&b);
            let eps = 1e-16 * max_abs(&yhat);
            let x1 = update_basis(&x, y, &yhat, &b, eps).unwrap();
            let (xn, tn) = normalize_columns(&x1, &theta).unwrap();
            x = xn;
            theta = tn;
            let yhat2 = x.dot(&theta.dot(a));
            let eps2 = 1e-16 * max_abs(&yhat2);
            theta = update_theta(&theta, &x, y, &yhat2, a, eps2).unwrap();

            let dx = x
                .iter()
                .zip(x_true.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            let dt = theta
                .iter()
                .zip(theta_true.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(dx <= 1e-12, "seed {seed}: basis moved by {dx}");
            assert!(dt <= 1e-12, "seed {seed}: theta moved by {dt}");
        }
    }

    #[test]
    fn fit_kkt_stationarity_at_convergence() {
        let f = frame_from(rng_matrix(5, 40, 21).mapv(|v| v + 0.05));
        let design = build_lag_design(&f, 2).unwrap();
        let mut opts = FitOptions::new(2);
        opts.max_iter = 200_000;
        opts.tolerance = 1e-15;
        opts.init = InitMode::UniformRandom;
        let model = fit(&design, &opts).unwrap();

        let y = &design.target;
        let a = &design.covariates;
        let b = model.params.dot(a);
        let yhat = model.basis.dot(&b);

        // gradient wrt X is 2(ŶB' − YB'); scaled by the update denominator
        // magnitude. Entries still decaying toward the zero boundary (tiny
        // relative to the column scale) take the zero-entry condition.
        let gx = &yhat.dot(&b.t()) - &y.dot(&b.t());
        let sx = max_abs(&yhat.dot(&b.t())).max(1.0);
        let xmax = max_abs(&model.basis);
        for ((i, j), &g) in gx.indexed_iter() {
            let xv = model.basis[(i, j)];
            if xv > 1e-6 * xmax {
                assert!(
                    (g / sx).abs() < 1e-4,
                    "positive basis entry ({i},{j}) has scaled gradient {}",
                    g / sx
                );
            } else {
                assert!(g / sx >= -1e-6, "zero basis entry with descent direction");
            }
        }
        let gt = &model.basis.t().dot(&yhat).dot(&a.t()) - &model.basis.t().dot(y).dot(&a.t());
        let st = max_abs(&model.basis.t().dot(&yhat).dot(&a.t())).max(1.0);
        let tmax = max_abs(&model.params);
        for ((i, j), &g) in gt.indexed_iter() {
            let tv = model.params[(i, j)];
            if tv > 1e-6 * tmax {
                assert!((g / st).abs() < 1e-4);
            } else {
                assert!(g / st >= -1e-6);
            }
        }
    }

    #[test]
    fn fit_fixed_basis_keeps_basis() {
        let f = frame_from(rng_matrix(3, 30, 8).mapv(|v| v + 0.1));
        let design = build_lag_design(&f, 1).unwrap();
        let mut opts = FitOptions::new(2);
        opts.fixed_basis = Some(array![[0.5, 0.1], [0.3, 0.2], [0.2, 0.7]]);
        let model = fit(&design, &opts).unwrap();
        assert_eq!(model.basis, array![[0.5, 0.1], [0.3, 0.2], [0.2, 0.7]]);
    }

    #[test]
    fn fit_identity_design_matches_two_factor_nmf() {
        // direct two-factor multiplicative NMF as the reference path
        let y = rng_matrix(5, 12, 31);
        let f = frame_from(y.clone());
        let design = build_identity_design(&f).unwrap();
        let mut opts = FitOptions::new(2);
        opts.max_iter = 500;
        opts.tolerance = 1e-13;
        opts.init = InitMode::UniformRandom;
        opts.seed = 4242;
        let model = fit(&design, &opts).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let mut x = Array2::from_shape_fn((5, 2), |_| rng.random::<f64>());
        for qi in 0..2 {
            let s: f64 = x.column(qi).sum();
            x.column_mut(qi).mapv_inplace(|v| v / s);
        }
        let mut h = Array2::from_shape_fn((2, 12), |_| rng.random::<f64>());
        let mass = x.dot(&h).sum();
        h.mapv_inplace(|v| v * y.sum() / mass);
        for _ in 0..model.diagnostics.iterations {
            let yhat = x.dot(&h);
            let eps = 1e-16 * max_abs(&yhat);
            x = &x * &(&y.dot(&h.t()) / &(yhat.dot(&h.t()) + eps));
            for qi in 0..2 {
                let s: f64 = x.column(qi).sum();
                h.row_mut(qi).mapv_inplace(|v| v * s);
                x.column_mut(qi).mapv_inplace(|v| v / s);
            }
            let yhat = x.dot(&h);
            let eps = 1e-16 * max_abs(&yhat);
            h = &h * &(&x.t().dot(&y) / &(x.t().dot(&yhat) + eps));
        }
        let reference = objective(&y, &x.dot(&h)).unwrap();
        let got = *model.diagnostics.objective_trace.last().unwrap();
        assert!(
            (got - reference).abs() <= 1e-9 * reference.max(1.0),
            "{got} vs {reference}"
        );
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let f = frame_from(rng_matrix(3, 10, 50));
        let design = build_lag_design(&f, 1).unwrap();
        assert!(fit(&design, &FitOptions::new(0)).is_err());
        assert!(fit(&design, &FitOptions::new(4)).is_err()); // Q > P

        let mut bad = design.clone();
        bad.target[(0, 0)] = -1.0;
        assert!(fit(&bad, &FitOptions::new(1)).is_err());

        let mut nan = design.clone();
        nan.target[(0, 0)] = f64::NAN;
        assert!(matches!(fit(&nan, &FitOptions::new(1)), Err(Error::Numeric(_))));

        let mut zeros = design;
        zeros.target.fill(0.0);
        assert!(fit(&zeros, &FitOptions::new(1)).is_err());
    }

    #[test]
    fn fit_deterministic_for_fixed_seed() {
        let f = frame_from(rng_matrix(4, 25, 60));
        let design = build_lag_design(&f, 2).unwrap();
        let mut opts = FitOptions::new(2);
        opts.max_iter = 100;
        let m1 = fit(&design, &opts).unwrap();
        let m2 = fit(&design, &opts).unwrap();
        assert_eq!(m1.basis, m2.basis);
        assert_eq!(m1.params, m2.params);
        assert_eq!(m1.diagnostics.objective_trace, m2.diagnostics.objective_trace);
    }
}

