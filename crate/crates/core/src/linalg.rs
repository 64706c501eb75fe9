//! Small dense helpers on top of faer.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatRef};
use num_complex::Complex64;

pub(crate) type CMat = Mat<Complex64>;

pub(crate) fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

pub(crate) fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

pub(crate) fn norm1(a: MatRef<'_, Complex64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub(crate) fn norm_max(a: MatRef<'_, Complex64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub(crate) fn col_vec(v: &[Complex64]) -> CMat {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub(crate) fn to_vec(m: MatRef<'_, Complex64>) -> Vec<Complex64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

pub(crate) fn mat_vec(a: MatRef<'_, Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(a.ncols(), v.len());
    (0..a.nrows())
        .map(|i| (0..a.ncols()).fold(zero(), |acc, j| acc + a[(i, j)] * v[j]))
        .collect()
}

/// `diag(d) * a`
pub(crate) fn scale_rows(d: &[Complex64], a: MatRef<'_, Complex64>) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| d[i] * a[(i, j)])
}

/// `a * diag(d)`
pub(crate) fn scale_cols(a: MatRef<'_, Complex64>, d: &[Complex64]) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * d[j])
}

pub(crate) fn diag(d: &[Complex64]) -> CMat {
    let n = d.len();
    Mat::from_fn(n, n, |i, j| if i == j { d[i] } else { zero() })
}

pub(crate) fn is_diagonal(a: MatRef<'_, Complex64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| i == j || a[(i, j)] == zero()))
}

/// Hager/Higham estimate of the 1-norm condition number `|A|_1 |A^-1|_1`.
///
/// Returns infinity when the factorization produced non-finite values.
pub(crate) fn cond1_estimate(a: MatRef<'_, Complex64>, lu: &PartialPivLu<Complex64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 1.0;
    }
    let anorm = norm1(a);
    let mut x = Mat::from_fn(n, 1, |_, _| Complex64::new(1.0 / n as f64, 0.0));
    let mut estimate = 0.0;
    let mut last_j = usize::MAX;
    for iter in 0..5 {
        let y = lu.solve(&x);
        let ynorm: f64 = (0..n).map(|i| y[(i, 0)].norm()).sum();
        if !ynorm.is_finite() {
            return f64::INFINITY;
        }
        estimate = f64::max(estimate, ynorm);
        let xi = Mat::from_fn(n, 1, |i, _| {
            let v = y[(i, 0)];
            if v.norm() == 0.0 { one() } else { v / v.norm() }
        });
        let z = lu.solve_adjoint(&xi);
        let (mut j, mut zmax) = (0, 0.0);
        for i in 0..n {
            let m = z[(i, 0)].norm();
            if m > zmax {
                zmax = m;
                j = i;
            }
        }
        let ztx: f64 = (0..n).map(|i| (z[(i, 0)].conj() * x[(i, 0)]).re).sum();
        if iter > 0 && (zmax <= ztx || j == last_j) {
            break;
        }
        last_j = j;
        x = Mat::from_fn(n, 1, |i, _| if i == j { one() } else { zero() });
    }
    // Higham's alternating-sign vector guards against the rare underestimate.
    let alt = Mat::from_fn(n, 1, |i, _| {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        Complex64::new(s * (1.0 + i as f64 / (n.max(2) - 1) as f64), 0.0)
    });
    let y = lu.solve(&alt);
    let alt_est = 2.0 * (0..n).map(|i| y[(i, 0)].norm()).sum::<f64>() / (3.0 * n as f64);
    let est = if alt_est.is_finite() { estimate.max(alt_est) } else { f64::INFINITY };
    anorm * est
}

/// LU factorization plus a condition estimate.
pub(crate) fn factor(a: MatRef<'_, Complex64>) -> (PartialPivLu<Complex64>, f64) {
    let lu = a.partial_piv_lu();
    let cond = cond1_estimate(a, &lu);
    (lu, cond)
}
