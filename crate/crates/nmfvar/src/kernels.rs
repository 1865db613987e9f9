//! Pure numeric substrate: element-wise matrix operations, spectral radius,
//! and K-means. No model semantics.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn check_same_shape(context: &'static str, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context,
            left: format!("{}x{}", a.nrows(), a.ncols()),
            right: format!("{}x{}", b.nrows(), b.ncols()),
        });
    }
    Ok(())
}

/// Element-wise product a ⊙ b.
pub fn hadamard_mul(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    check_same_shape("hadamard_mul", a.view(), b.view())?;
    Ok(a * b)
}

/// Element-wise quotient num ⊘ (den + eps).
///
/// With `eps == 0` a zero denominator entry is an error rather than an Inf/NaN.
pub fn hadamard_div(num: &Array2<f64>, den: &Array2<f64>, eps: f64) -> Result<Array2<f64>> {
    check_same_shape("hadamard_div", num.view(), den.view())?;
    if eps < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "eps must be non-negative, got {eps}"
        )));
    }
    if eps == 0.0 {
        if let Some(((row, col), _)) = den.indexed_iter().find(|(_, &v)| v == 0.0) {
            return Err(Error::DivisionByZero { row, col });
        }
    }
    let mut out = num.clone();
    ndarray::Zip::from(&mut out).and(den).for_each(|n, &d| {
        *n /= d + eps;
    });
    Ok(out)
}

/// Largest absolute eigenvalue of a square matrix.
///
/// Non-negative matrices go through shifted power iteration with a
/// Collatz–Wielandt interval certificate, so the returned value is within
/// `tol` whenever that path converges. Matrices with negative entries, and
/// non-negative ones whose iteration has not certified within `max_iter`
/// steps, fall back to a dense Hessenberg/QR eigensolve.
pub fn spectral_radius(m: &Array2<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tol must be positive, got {tol}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("matrix contains non-finite entries".into()));
    }
    if rows == 1 {
        return Ok(m[(0, 0)].abs());
    }

    if m.iter().all(|&v| v >= 0.0) {
        if let Some(rho) = power_iteration_nonneg(m, tol, max_iter) {
            return Ok(rho);
        }
    }
    qr_spectral_radius(m)
}

/// Shifted power iteration for a non-negative matrix.
///
/// Iterates v ← (M + σI)v with a fixed positive start vector; v stays strictly
/// positive, so the Collatz–Wielandt ratios min_i (Mv)_i/v_i and
/// max_i (Mv)_i/v_i bracket the Perron root. Returns None when the bracket has
/// not tightened to `tol` within `max_iter` (complex or tied dominant pair).
fn power_iteration_nonneg(m: &Array2<f64>, tol: f64, max_iter: usize) -> Option<f64> {
    let n = m.nrows();
    let max_row_sum = m
        .rows()
        .into_iter()
        .map(|r| r.sum())
        .fold(0.0_f64, f64::max);
    if max_row_sum == 0.0 {
        return Some(0.0);
    }
    let sigma = 0.05 * max_row_sum;
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    for _ in 0..max_iter {
        let mut w = m.dot(&v);
        w.scaled_add(sigma, &v);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for (wi, vi) in w.iter().zip(v.iter()) {
            let ratio = wi / vi;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if hi - lo <= tol {
            return Some(0.5 * (hi + lo) - sigma);
        }
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return Some(0.0);
        }
        v = w / norm;
    }
    None
}

/// Dense spectral radius: balance, Hessenberg reduction, Francis double-shift QR.
fn qr_spectral_radius(m: &Array2<f64>) -> Result<f64> {
    let mut a = m.clone();
    balance(&mut a);
    hessenberg(&mut a);
    let moduli = hqr_eigenvalue_moduli(a)?;
    Ok(moduli.into_iter().fold(0.0, f64::max))
}

/// Diagonal similarity scaling by powers of two (exact in floating point).
fn balance(a: &mut Array2<f64>) {
    let n = a.nrows();
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
    }
}

/// Reduction to upper Hessenberg form by stabilized elimination.
fn hessenberg(a: &mut Array2<f64>) {
    let n = a.nrows();
    if n < 3 {
        return;
    }
    for m in 1..n - 1 {
        let mut x = 0.0_f64;
        let mut i = m;
        for j in m..n {
            if a[(j, m - 1)].abs() > x.abs() {
                x = a[(j, m - 1)];
                i = j;
            }
        }
        if i != m {
            for j in m - 1..n {
                let tmp = a[(i, j)];
                a[(i, j)] = a[(m, j)];
                a[(m, j)] = tmp;
            }
            for j in 0..n {
                let tmp = a[(j, i)];
                a[(j, i)] = a[(j, m)];
                a[(j, m)] = tmp;
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[(i, m - 1)];
                if y != 0.0 {
                    y /= x;
                    a[(i, m - 1)] = y;
                    for j in m..n {
                        let delta = y * a[(m, j)];
                        a[(i, j)] -= delta;
                    }
                    for j in 0..n {
                        let delta = y * a[(j, i)];
                        a[(j, m)] += delta;
                    }
                }
            }
        }
    }
    // zero out the part below the subdiagonal (held multipliers)
    for i in 2..n {
        for j in 0..i - 1 {
            a[(i, j)] = 0.0;
        }
    }
}

fn nr_sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalue moduli of an upper Hessenberg matrix via double-shift QR.
fn hqr_eigenvalue_moduli(mut a: Array2<f64>) -> Result<Vec<f64>> {
    let n = a.nrows() as isize;
    let mut wr = vec![0.0_f64; n as usize];
    let mut wi = vec![0.0_f64; n as usize];
    let at = |a: &Array2<f64>, i: isize, j: isize| a[(i as usize, j as usize)];

    let mut anorm = 0.0;
    for i in 0..n {
        for j in (i - 1).max(0)..n {
            anorm += at(&a, i, j).abs();
        }
    }

    let mut nn = n - 1;
    let mut t = 0.0_f64;
    while nn >= 0 {
        let mut its = 0;
        loop {
            // look for a single small subdiagonal element
            let mut l = nn;
            while l >= 1 {
                let mut s = at(&a, l - 1, l - 1).abs() + at(&a, l, l).abs();
                if s == 0.0 {
                    s = anorm;
                }
                if at(&a, l, l - 1).abs() <= f64::EPSILON * s {
                    a[(l as usize, (l - 1) as usize)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = at(&a, nn, nn);
            if l == nn {
                // one root found
                wr[nn as usize] = x + t;
                wi[nn as usize] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = at(&a, nn - 1, nn - 1);
            let mut w = at(&a, nn, nn - 1) * at(&a, nn - 1, nn);
            if l == nn - 1 {
                // two roots found
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    let z = p + nr_sign(z, p);
                    wr[(nn - 1) as usize] = x + z;
                    wr[nn as usize] = if z != 0.0 { x - w / z } else { x + z };
                    wi[(nn - 1) as usize] = 0.0;
                    wi[nn as usize] = 0.0;
                } else {
                    wr[(nn - 1) as usize] = x + p;
                    wr[nn as usize] = x + p;
                    wi[nn as usize] = z;
                    wi[(nn - 1) as usize] = -z;
                }
                nn -= 2;
                break;
            }
            if its == 30 {
                let best = wr
                    .iter()
                    .zip(wi.iter())
                    .map(|(re, im)| re.hypot(*im))
                    .fold(0.0_f64, f64::max);
                return Err(Error::NoConvergence {
                    best,
                    iterations: 30,
                });
            }
            if its == 10 || its == 20 {
                // exceptional shift
                t += x;
                for i in 0..=nn {
                    a[(i as usize, i as usize)] -= x;
                }
                let s = at(&a, nn, nn - 1).abs() + at(&a, nn - 1, nn - 2).abs();
                y = 0.75 * s;
                x = 0.75 * s;
                w = -0.4375 * s * s;
            }
            its += 1;
            // find two consecutive small subdiagonal elements
            let mut m = nn - 2;
            let mut p;
            let mut q;
            let mut r;
            loop {
                let z = at(&a, m, m);
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / at(&a, m + 1, m) + at(&a, m, m + 1);
                q = at(&a, m + 1, m + 1) - z - rr - ss;
                r = at(&a, m + 2, m + 1);
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = at(&a, m, m - 1).abs() * (q.abs() + r.abs());
                let v = p.abs() * (at(&a, m - 1, m - 1).abs() + z.abs() + at(&a, m + 1, m + 1).abs());
                if u <= f64::EPSILON * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nn {
                a[(i as usize, (i - 2) as usize)] = 0.0;
                if i != m + 2 {
                    a[(i as usize, (i - 3) as usize)] = 0.0;
                }
            }
            // double QR step on rows l..=nn, columns m..=nn
            for k in m..=nn - 1 {
                if k != m {
                    p = at(&a, k, k - 1);
                    q = at(&a, k + 1, k - 1);
                    r = if k != nn - 1 { at(&a, k + 2, k - 1) } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = nr_sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[(k as usize, (k - 1) as usize)] = -at(&a, k, k - 1);
                        }
                    } else {
                        a[(k as usize, (k - 1) as usize)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        let mut pp = at(&a, k, j) + q * at(&a, k + 1, j);
                        if k != nn - 1 {
                            pp += r * at(&a, k + 2, j);
                            a[((k + 2) as usize, j as usize)] -= pp * z;
                        }
                        a[((k + 1) as usize, j as usize)] -= pp * y;
                        a[(k as usize, j as usize)] -= pp * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        let mut pp = x * at(&a, i, k) + y * at(&a, i, k + 1);
                        if k != nn - 1 {
                            pp += z * at(&a, i, k + 2);
                            a[(i as usize, (k + 2) as usize)] -= pp * r;
                        }
                        a[(i as usize, (k + 1) as usize)] -= pp * q;
                        a[(i as usize, k as usize)] -= pp;
                    }
                }
            }
        }
    }
    Ok(wr.iter().zip(wi.iter()).map(|(re, im)| re.hypot(*im)).collect())
}

/// K-means with farthest-point seeding from `seed` and Lloyd iterations.
///
/// `points` is one observation per row. Returns `k` centroids; an emptied
/// cluster is re-seeded with the point farthest from its assigned centroid.
/// Bit-reproducible for a fixed seed.
pub fn kmeans(
    points: ArrayView2<f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Array2<f64>> {
    let n = points.nrows();
    let dim = points.ncols();
    if n == 0 {
        return Err(Error::InvalidParameter("kmeans: empty input".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "kmeans: k = {k} must be in 1..={n}"
        )));
    }

    let dist2 = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    };

    // farthest-point seeding
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Array2::zeros((k, dim));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut min_d2: Vec<f64> = (0..n)
        .map(|i| dist2(points.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let far = min_d2
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        centroids.row_mut(c).assign(&points.row(far));
        for i in 0..n {
            min_d2[i] = min_d2[i].min(dist2(points.row(i), centroids.row(c)));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        // assignment step
        let mut changed = false;
        let mut d2_own = vec![0.0_f64; n];
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = dist2(points.row(i), centroids.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            d2_own[i] = best_d;
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // re-seed empty clusters with the globally farthest point
        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = d2_own
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| counts[assign[*i]] > 1)
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                counts[assign[far]] -= 1;
                assign[far] = c;
                counts[c] = 1;
                d2_own[far] = 0.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        // update step
        centroids.fill(0.0);
        for i in 0..n {
            let mut row = centroids.row_mut(assign[i]);
            row += &points.row(i);
        }
        for c in 0..k {
            let mut row = centroids.row_mut(c);
            row /= counts[c] as f64;
        }
    }
    Ok(centroids)
}
