//! Post-processing: fields, efficiencies, error norms and the Galerkin residual.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{RcwaError, Result};
use crate::fourier::{slice_toeplitz, FactorizationRule, ToeplitzFactor};
use crate::linalg;
pub use crate::problem::Side;
use crate::problem::{GratingProblem, ModeBasis, SliceMesh};
use crate::stitcher::ScatterSolution;

/// Default Gauss-Legendre order per integration interval.
pub const DEFAULT_QUADRATURE_ORDER: usize = 8;
/// Largest `|Im eps_pm|` for which power fluxes are considered reliable.
pub const FLUX_IMAG_TOL: f64 = 1e-6;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order.max(1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton iteration on P_n from the Tricomi initial guess.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Quadrature points on `[lo, hi]`.
fn map_rule(rule: &(Vec<f64>, Vec<f64>), lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    rule.0.iter().zip(&rule.1).map(move |(x, w)| (mid + half * x, half * w))
}

fn merge_breakpoints(mut points: Vec<f64>) -> Vec<f64> {
    points.sort_by(f64::total_cmp);
    let scale = points.iter().fold(1.0f64, |m, p| m.max(p.abs()));
    points.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * scale);
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldKind {
    #[default]
    Total,
    /// Total minus the incident plane wave.
    Scattered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRequest {
    pub x1_samples: usize,
    pub x2: Vec<f64>,
    pub kind: FieldKind,
}

impl FieldRequest {
    pub fn uniform(x1_samples: usize, x2_low: f64, x2_high: f64, x2_samples: usize, kind: FieldKind) -> Self {
        let x2 = if x2_samples <= 1 {
            vec![0.5 * (x2_low + x2_high)]
        } else {
            (0..x2_samples)
                .map(|k| x2_low + (x2_high - x2_low) * k as f64 / (x2_samples - 1) as f64)
                .collect()
        };
        Self { x1_samples, x2, kind }
    }
}

/// Field samples on `x1 in [0, Lx)`, row-major with one row per `x2` value.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl FieldGrid {
    pub fn get(&self, ix2: usize, ix1: usize) -> Complex64 {
        self.values[ix2 * self.x1.len() + ix1]
    }

    pub fn row(&self, ix2: usize) -> &[Complex64] {
        let n = self.x1.len();
        &self.values[ix2 * n..(ix2 + 1) * n]
    }
}

fn incident_coefficient(sol: &ScatterSolution, x2: f64) -> Complex64 {
    let b0 = sol.basis.beta_plus[sol.basis.m];
    (Complex64::new(0.0, -1.0) * b0 * (x2 - sol.domain.half_height)).exp()
}

/// Evaluates `u(x1, x2) = sum_n u_n(x2) exp(i alpha_n x1)` on a grid.
pub fn reconstruct_field(sol: &ScatterSolution, request: &FieldRequest) -> FieldGrid {
    let l = sol.domain.period;
    let nx = request.x1_samples.max(1);
    let x1: Vec<f64> = (0..nx).map(|k| l * k as f64 / nx as f64).collect();
    let phases: Vec<Vec<Complex64>> = x1
        .iter()
        .map(|&x| sol.basis.alpha.iter().map(|a| Complex64::new(0.0, a * x).exp()).collect())
        .collect();
    let mut values = Vec::with_capacity(nx * request.x2.len());
    for &y in &request.x2 {
        let mut coeffs = sol.coefficients_at(y);
        if request.kind == FieldKind::Scattered {
            coeffs[sol.basis.m] -= incident_coefficient(sol, y);
        }
        for ph in &phases {
            values.push(coeffs.iter().zip(ph).map(|(c, p)| c * p).sum());
        }
    }
    FieldGrid { x1, x2: request.x2.clone(), values }
}

/// Power efficiencies of the propagating orders.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyTable {
    pub orders: Vec<i64>,
    pub reflected: Vec<f64>,
    pub transmitted: Vec<f64>,
    pub total_reflected: f64,
    pub total_transmitted: f64,
    /// `1 - total_reflected - total_transmitted`
    pub absorption: f64,
    /// False when a half-space is too lossy for plane-wave fluxes to be meaningful.
    pub reliable: bool,
}

fn flux_weight(beta: Complex64, eps: Complex64) -> f64 {
    if eps.im.abs() <= FLUX_IMAG_TOL {
        beta.re / eps.re
    } else {
        (beta / eps).re
    }
}

pub fn efficiencies(sol: &ScatterSolution) -> EfficiencyTable {
    let b = &sol.basis;
    let reliable = b.eps_plus.im.abs() <= FLUX_IMAG_TOL && b.eps_minus.im.abs() <= FLUX_IMAG_TOL;
    let incident = flux_weight(b.beta_plus[b.m], b.eps_plus);
    let mut reflected = vec![0.0; b.len()];
    let mut transmitted = vec![0.0; b.len()];
    for i in 0..b.len() {
        if b.is_propagating(Side::Top, i) {
            reflected[i] = sol.r[i].norm_sqr() * flux_weight(b.beta_plus[i], b.eps_plus) / incident;
        }
        if b.is_propagating(Side::Bottom, i) {
            transmitted[i] = sol.t[i].norm_sqr() * flux_weight(b.beta_minus[i], b.eps_minus) / incident;
        }
    }
    let total_reflected: f64 = reflected.iter().sum();
    let total_transmitted: f64 = transmitted.iter().sum();
    EfficiencyTable {
        orders: b.orders().collect(),
        reflected,
        transmitted,
        total_reflected,
        total_transmitted,
        absorption: 1.0 - total_reflected - total_transmitted,
        reliable,
    }
}

/// Dirichlet-to-Neumann map `coeffs_n -> (i beta_n / eps) coeffs_n` of one half-space.
///
/// Panics if `coeffs` does not have one entry per mode.
pub fn dtn_apply(coeffs: &[Complex64], side: Side, basis: &ModeBasis) -> Vec<Complex64> {
    assert_eq!(coeffs.len(), basis.len(), "one coefficient per Bloch mode");
    let eps = basis.eps(side);
    coeffs
        .iter()
        .zip(basis.beta(side))
        .map(|(c, b)| Complex64::new(0.0, 1.0) * b / eps * c)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorNorm {
    #[default]
    L2,
    /// `|grad(u)|` in L2.
    H1Seminorm,
}

fn check_compatible(a: &ScatterSolution, b: &ScatterSolution) -> Result<()> {
    if a.domain != b.domain {
        return Err(RcwaError::GeometryMismatch(format!("domains differ: {:?} vs {:?}", a.domain, b.domain)));
    }
    if a.incident != b.incident {
        return Err(RcwaError::GeometryMismatch(format!(
            "incident waves differ: {:?} vs {:?}",
            a.incident, b.incident
        )));
    }
    Ok(())
}

/// Integration intervals over `[-H, H]` fine enough for the modal exponentials of both solutions.
fn error_intervals(a: &ScatterSolution, b: &ScatterSolution) -> Vec<(f64, f64)> {
    let mut points = a.mesh.breakpoints().to_vec();
    points.extend_from_slice(b.mesh.breakpoints());
    points.extend(a.layer_breakpoints());
    points.extend(b.layer_breakpoints());
    let points = merge_breakpoints(points);
    let growth = |sol: &ScatterSolution, y: f64| {
        sol.locate_layer(y).map_or(0.0, |(l, _)| l.op.modes.gamma.iter().map(|g| g.re).fold(0.0, f64::max))
    };
    let mut out = Vec::new();
    for w in points.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = 0.5 * (lo + hi);
        let g = growth(a, mid).max(growth(b, mid));
        let pieces = ((hi - lo) * g / 3.0).ceil().clamp(1.0, 1e6) as usize;
        for k in 0..pieces {
            let s = lo + (hi - lo) * k as f64 / pieces as f64;
            let e = if k + 1 == pieces { hi } else { lo + (hi - lo) * (k + 1) as f64 / pieces as f64 };
            out.push((s, e));
        }
    }
    out
}

/// `|u_a - u_b| / |u_b|` over the computational cell.
///
/// Coefficients are matched by diffraction order, so the two solutions may use
/// different truncations; missing orders count as zero.
pub fn rel_error(a: &ScatterSolution, b: &ScatterSolution, norm: ErrorNorm, quadrature_order: usize) -> Result<f64> {
    check_compatible(a, b)?;
    let rule = gauss_legendre(quadrature_order);
    let m = a.m().max(b.m()) as i64;
    let alpha0 = a.basis.alpha0;
    let grating = 2.0 * PI / a.domain.period;
    let (mut num, mut den) = (0.0, 0.0);
    let pick = |sol: &ScatterSolution, v: &[Complex64], n: i64| {
        if n.unsigned_abs() as usize <= sol.m() {
            v[sol.basis.index(n)]
        } else {
            linalg::zero()
        }
    };
    for (lo, hi) in error_intervals(a, b) {
        for (y, w) in map_rule(&rule, lo, hi) {
            let ua = a.coefficients_at(y);
            let ub = b.coefficients_at(y);
            let (da, db) = match norm {
                ErrorNorm::L2 => (Vec::new(), Vec::new()),
                ErrorNorm::H1Seminorm => (a.derivative_at(y), b.derivative_at(y)),
            };
            for n in -m..=m {
                let (va, vb) = (pick(a, &ua, n), pick(b, &ub, n));
                match norm {
                    ErrorNorm::L2 => {
                        num += w * (va - vb).norm_sqr();
                        den += w * vb.norm_sqr();
                    }
                    ErrorNorm::H1Seminorm => {
                        let alpha = alpha0 + grating * n as f64;
                        let (pa, pb) = (pick(a, &da, n), pick(b, &db, n));
                        num += w * (alpha * alpha * (va - vb).norm_sqr() + (pa - pb).norm_sqr());
                        den += w * (alpha * alpha * vb.norm_sqr() + pb.norm_sqr());
                    }
                }
            }
        }
    }
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

/// Relative L2 error of `a` against the reference `b`.
pub fn rel_l2_error(a: &ScatterSolution, b: &ScatterSolution) -> Result<f64> {
    rel_error(a, b, ErrorNorm::L2, DEFAULT_QUADRATURE_ORDER)
}

/// `sum R + sum T`
pub fn energy_balance(sol: &ScatterSolution) -> f64 {
    let e = efficiencies(sol);
    e.total_reflected + e.total_transmitted
}

/// Normalized residual of the discrete variational problem.
///
/// Tests the solution against `xi_k(x2) exp(i alpha_n x1)` with piecewise-linear
/// hats `xi_k` on `n_test` equispaced nodes over `[-H, H]`. The permittivity is
/// rebuilt from `problem` on `mesh` (Laurent rule, midline staircase), so the
/// check is independent of the solver's internal matrices. Returns
/// `max |B(u, v) - f(v)| / (|u|_H1 |v|_H1)` over all test functions.
pub fn galerkin_residual(sol: &ScatterSolution, problem: &GratingProblem, mesh: &SliceMesh, n_test: usize) -> Result<f64> {
    if n_test < 2 {
        return Err(RcwaError::invalid("n_test", "need at least 2 nodes"));
    }
    if problem.domain != sol.domain || problem.incident != sol.incident {
        return Err(RcwaError::GeometryMismatch("solution was computed for another problem".into()));
    }
    let basis = &sol.basis;
    let n = basis.len();
    let h = problem.domain.half_height;
    let l = problem.domain.period;
    let k2 = basis.kappa * basis.kappa;

    let mut cache: HashMap<_, ToeplitzFactor> = HashMap::new();
    let mut factors: Vec<ToeplitzFactor> = Vec::new();
    for j in 0..mesh.num_slices() {
        let cross = problem.cross_section(mesh.midpoint(j));
        let key = cross.key();
        if !cache.contains_key(&key) {
            cache.insert(key.clone(), slice_toeplitz(&cross, basis.m, FactorizationRule::Laurent)?);
        }
        factors.push(cache[&key].clone());
    }

    let delta = 2.0 * h / (n_test - 1) as f64;
    let nodes: Vec<f64> = (0..n_test).map(|k| if k + 1 == n_test { h } else { -h + delta * k as f64 }).collect();
    let rule = gauss_legendre(DEFAULT_QUADRATURE_ORDER);
    let mut res = vec![vec![linalg::zero(); n]; n_test];
    let mut unorm = 0.0;
    let alpha_c: Vec<Complex64> = basis.alpha.iter().map(|&a| Complex64::new(a, 0.0)).collect();

    for k in 0..n_test - 1 {
        let (lo, hi) = (nodes[k], nodes[k + 1]);
        let mut cuts = vec![lo, hi];
        cuts.extend(mesh.breakpoints().iter().copied().filter(|&b| b > lo && b < hi));
        cuts.extend(sol.layer_breakpoints().into_iter().filter(|&b| b > lo && b < hi));
        let cuts = merge_breakpoints(cuts);
        for w in cuts.windows(2) {
            let slice = mesh.locate(0.5 * (w[0] + w[1])).unwrap_or(0);
            let t = factors[slice].matrix();
            for (y, wt) in map_rule(&rule, w[0], w[1]) {
                let u = sol.coefficients_at(y);
                let du = sol.derivative_at(y);
                let tdu = linalg::mat_vec(t.as_ref(), &du);
                let ku: Vec<Complex64> = u.iter().zip(&alpha_c).map(|(u, a)| u * a).collect();
                let tku = linalg::mat_vec(t.as_ref(), &ku);
                let xi_lo = (hi - y) / (hi - lo);
                let xi_hi = (y - lo) / (hi - lo);
                let dxi = 1.0 / (hi - lo);
                for i in 0..n {
                    let common = alpha_c[i] * tku[i] - k2 * u[i];
                    res[k][i] += wt * (-dxi * tdu[i] + xi_lo * common);
                    res[k + 1][i] += wt * (dxi * tdu[i] + xi_hi * common);
                    unorm += wt * ((1.0 + basis.alpha[i] * basis.alpha[i]) * u[i].norm_sqr() + du[i].norm_sqr());
                }
            }
        }
    }
    // Boundary terms: the DtN closures at +-H and the incident source.
    let mut upper = sol.r.clone();
    upper[basis.m] += linalg::one();
    let top_dtn = dtn_apply(&upper, Side::Top, basis);
    let bottom_dtn = dtn_apply(&sol.t, Side::Bottom, basis);
    let i_unit = Complex64::new(0.0, 1.0);
    for i in 0..n {
        res[n_test - 1][i] -= top_dtn[i];
        res[0][i] -= bottom_dtn[i];
    }
    res[n_test - 1][basis.m] += 2.0 * i_unit * basis.beta_plus[basis.m] / basis.eps_plus;

    let unorm = (l * unorm).sqrt();
    if unorm == 0.0 {
        return Ok(0.0);
    }
    let mut worst = 0.0f64;
    for (k, row) in res.iter().enumerate() {
        let edge = k == 0 || k + 1 == n_test;
        let (mass, stiff) = if edge { (delta / 3.0, 1.0 / delta) } else { (2.0 * delta / 3.0, 2.0 / delta) };
        for (i, r) in row.iter().enumerate() {
            let vnorm = (l * ((1.0 + basis.alpha[i] * basis.alpha[i]) * mass + stiff)).sqrt();
            worst = worst.max(l * r.norm() / (unorm * vnorm));
        }
    }
    Ok(worst)
}
