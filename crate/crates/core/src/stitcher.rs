//! Global solution by scattering-matrix recursion, plus a dense oracle.
//!
//! Every interface between slices is padded with a zero-thickness film of the
//! reference medium `eps_+` (with `W = I`, `gamma = -i beta^+`). Modal amplitudes
//! in those films are split into up-going (`+`) and down-going (`-`) parts and
//! each layer is described by the map
//!
//! ```text
//! [ up at top   ]   [ S11 S12 ] [ down at top ]
//! [ down at bot ] = [ S21 S22 ] [ up at bot   ]
//! ```

use std::collections::HashMap;
use std::sync::Arc;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use num_complex::Complex64;

use crate::error::{RcwaError, Result};
use crate::fourier::{FactorizationRule, ToeplitzFactor};
use crate::linalg::{self, CMat};
use crate::problem::{
    check_wood_anomaly, make_mode_basis, CrossSection, CrossSectionKey, GratingDomain, GratingProblem, IncidentWave, ModeBasis,
    SliceMesh, WOOD_DEFAULT_TOL,
};
use crate::slicesolver::{ModalAmplitudes, SliceModes, SliceOperator};

/// Round-trip blocks with a larger condition estimate are rejected.
pub const RESONANCE_CONDITION: f64 = 1e12;
/// Largest dense oracle system, in unknowns.
pub const DENSE_MAX_UNKNOWNS: usize = 4000;
/// Condition estimate above which the dense oracle refuses to answer.
pub const DENSE_MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, PartialEq)]
pub struct SMatrix {
    pub s11: CMat,
    pub s12: CMat,
    pub s21: CMat,
    pub s22: CMat,
}

impl SMatrix {
    /// Transparent layer.
    pub fn identity(n: usize) -> Self {
        Self {
            s11: CMat::zeros(n, n),
            s12: CMat::identity(n, n),
            s21: CMat::identity(n, n),
            s22: CMat::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.s11.nrows()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        [
            (&self.s11, &other.s11),
            (&self.s12, &other.s12),
            (&self.s21, &other.s21),
            (&self.s22, &other.s22),
        ]
        .iter()
        .map(|(a, b)| linalg::norm_max((*a - *b).as_ref()))
        .fold(0.0, f64::max)
    }
}

fn round_trip(x: &CMat) -> Result<PartialPivLu<Complex64>> {
    let n = x.nrows();
    let m = Mat::from_fn(n, n, |i, j| if i == j { linalg::one() - x[(i, j)] } else { -x[(i, j)] });
    let (lu, cond) = linalg::factor(m.as_ref());
    if !(cond <= RESONANCE_CONDITION) {
        return Err(RcwaError::Resonance { condition: cond });
    }
    Ok(lu)
}

/// Redheffer star product of layer `a` stacked on top of layer `b`.
pub fn star(a: &SMatrix, b: &SMatrix) -> Result<SMatrix> {
    let n = a.dim();
    if b.dim() != n {
        return Err(RcwaError::Dimension { expected: n, actual: b.dim() });
    }
    // (I - B11 A22)^-1 and (I - A22 B11)^-1
    let lu_b = round_trip(&(&b.s11 * &a.s22))?;
    let lu_a = round_trip(&(&a.s22 * &b.s11))?;
    let s11 = &a.s11 + &a.s12 * lu_b.solve(&b.s11 * &a.s21);
    let s12 = &a.s12 * lu_b.solve(&b.s12);
    let s21 = &b.s21 * lu_a.solve(&a.s21);
    let s22 = &b.s22 + &b.s21 * lu_a.solve(&a.s22 * &b.s12);
    Ok(SMatrix { s11, s12, s21, s22 })
}

/// S-matrix of one slice between two reference films.
pub fn layer_smatrix(op: &SliceOperator) -> Result<SMatrix> {
    let modes = &op.modes;
    let n = modes.len();
    let x = op.decay();
    let xg = linalg::scale_rows(&x, modes.g.as_ref());
    let xf = linalg::scale_rows(&x, modes.f.as_ref());
    let solve = |lhs: CMat, rhs: CMat| -> Result<CMat> {
        let (lu, cond) = linalg::factor(lhs.as_ref());
        if !(cond < 1e14) {
            return Err(RcwaError::SingularInterface {
                slice: None,
                reason: format!("face matching block has condition estimate {cond:e}"),
            });
        }
        Ok(lu.solve(rhs))
    };
    let sum = solve(&modes.f - &xg, &xf - &modes.g)?;
    let diff = solve(&modes.f + &xg, &xf + &modes.g)?;
    let half = Complex64::new(0.5, 0.0);
    let s11 = Mat::from_fn(n, n, |i, j| half * (sum[(i, j)] - diff[(i, j)]));
    let s12 = Mat::from_fn(n, n, |i, j| half * (sum[(i, j)] + diff[(i, j)]));
    Ok(SMatrix { s11: s11.clone(), s12: s12.clone(), s21: s12, s22: s11 })
}

/// Interface from the reference medium (above) into the lower half-space.
fn bottom_interface(basis: &ModeBasis) -> Result<SMatrix> {
    let n = basis.len();
    let minus_i = Complex64::new(0.0, -1.0);
    let mut s11 = CMat::zeros(n, n);
    let mut s12 = CMat::zeros(n, n);
    let mut s21 = CMat::zeros(n, n);
    let mut s22 = CMat::zeros(n, n);
    for i in 0..n {
        let v0 = minus_i * basis.beta_plus[i] / basis.eps_plus;
        let vm = minus_i * basis.beta_minus[i] / basis.eps_minus;
        let den = v0 + vm;
        if den == linalg::zero() || !den.is_finite() {
            return Err(RcwaError::SingularInterface {
                slice: None,
                reason: format!("lower half-space admittance cancels for order {}", basis.order(i)),
            });
        }
        s21[(i, i)] = 2.0 * v0 / den;
        s22[(i, i)] = (vm - v0) / den;
        s11[(i, i)] = s21[(i, i)] - linalg::one();
        s12[(i, i)] = linalg::one() + s22[(i, i)];
    }
    Ok(SMatrix { s11, s12, s21, s22 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub rule: FactorizationRule,
    /// Merge consecutive slices with identical cross-sections into one layer.
    pub merge_identical: bool,
    pub check_wood: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { rule: FactorizationRule::Laurent, merge_identical: true, check_wood: true }
    }
}

/// A layer of the solved stack: one or more merged mesh slices.
#[derive(Debug, Clone)]
pub struct SolvedLayer {
    pub bottom: f64,
    pub top: f64,
    /// Mesh slices `first..=last` covered by this layer.
    pub first: usize,
    pub last: usize,
    pub op: SliceOperator,
    pub amps: ModalAmplitudes,
}

#[derive(Debug, Clone)]
pub struct ScatterSolution {
    /// Reflected amplitudes, referenced at `x2 = H`.
    pub r: Vec<Complex64>,
    /// Transmitted amplitudes, referenced at `x2 = -H`.
    pub t: Vec<Complex64>,
    pub layers: Vec<SolvedLayer>,
    pub basis: ModeBasis,
    pub mesh: SliceMesh,
    pub domain: GratingDomain,
    pub incident: IncidentWave,
}

impl ScatterSolution {
    pub fn m(&self) -> usize {
        self.basis.m
    }

    fn layer_at(&self, x2: f64) -> &SolvedLayer {
        let idx = self.layers.partition_point(|l| l.top <= x2);
        &self.layers[idx.min(self.layers.len() - 1)]
    }

    /// Breakpoints between solved layers, bottom to top.
    pub fn layer_breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.layers.iter().map(|l| l.bottom).collect();
        v.push(self.layers.last().map_or(self.domain.half_height, |l| l.top));
        v
    }

    fn incident_vec(&self) -> Vec<Complex64> {
        let mut d = vec![linalg::zero(); self.basis.len()];
        d[self.basis.m] = linalg::one();
        d
    }

    /// Fourier coefficients of the total field at height `x2` (any height).
    pub fn coefficients_at(&self, x2: f64) -> Vec<Complex64> {
        let h = self.domain.half_height;
        let i = Complex64::new(0.0, 1.0);
        if x2 > h {
            let d = self.incident_vec();
            (0..self.basis.len())
                .map(|n| {
                    let b = self.basis.beta_plus[n];
                    d[n] * (-i * b * (x2 - h)).exp() + self.r[n] * (i * b * (x2 - h)).exp()
                })
                .collect()
        } else if x2 < -h {
            (0..self.basis.len())
                .map(|n| self.t[n] * (-i * self.basis.beta_minus[n] * (x2 + h)).exp())
                .collect()
        } else {
            let l = self.layer_at(x2);
            l.op.field(&l.amps, (x2 - l.bottom).clamp(0.0, l.op.thickness))
        }
    }

    /// Fourier coefficients of `du/dx2` at height `x2`.
    pub fn derivative_at(&self, x2: f64) -> Vec<Complex64> {
        let h = self.domain.half_height;
        let i = Complex64::new(0.0, 1.0);
        if x2 > h {
            let d = self.incident_vec();
            (0..self.basis.len())
                .map(|n| {
                    let b = self.basis.beta_plus[n];
                    i * b * (self.r[n] * (i * b * (x2 - h)).exp() - d[n] * (-i * b * (x2 - h)).exp())
                })
                .collect()
        } else if x2 < -h {
            (0..self.basis.len())
                .map(|n| {
                    let b = self.basis.beta_minus[n];
                    -i * b * self.t[n] * (-i * b * (x2 + h)).exp()
                })
                .collect()
        } else {
            let l = self.layer_at(x2);
            l.op.derivative(&l.amps, (x2 - l.bottom).clamp(0.0, l.op.thickness))
        }
    }

    /// Layer containing `x2` in `[-H, H]`, with the local height.
    pub fn locate_layer(&self, x2: f64) -> Option<(&SolvedLayer, f64)> {
        let h = self.domain.half_height;
        if !(x2 >= -h && x2 <= h) || self.layers.is_empty() {
            return None;
        }
        let l = self.layer_at(x2);
        Some((l, (x2 - l.bottom).clamp(0.0, l.op.thickness)))
    }

    /// Operator and amplitudes of mesh slice `j`, re-referenced to its own faces.
    pub fn slice_amplitudes(&self, j: usize) -> Option<(SliceOperator, ModalAmplitudes)> {
        let l = self.layers.iter().find(|l| l.first <= j && j <= l.last)?;
        let (lo, hi) = self.mesh.slice(j);
        let z0 = (lo - l.bottom).max(0.0);
        let z1 = (hi - l.bottom).min(l.op.thickness);
        let g = &l.op.modes.gamma;
        let a = g.iter().zip(&l.amps.a).map(|(g, a)| (-g * z0).exp() * a).collect();
        let b = g.iter().zip(&l.amps.b).map(|(g, b)| (-g * (l.op.thickness - z1)).exp() * b).collect();
        Some((SliceOperator::new(l.op.modes.clone(), z1 - z0), ModalAmplitudes { a, b }))
    }

    /// The same field expressed in `2m + 1` modes, with zero coefficients in the added orders.
    pub fn zero_padded(&self, m: usize) -> Result<ScatterSolution> {
        let old = self.m();
        if m < old {
            return Err(RcwaError::invalid("m", format!("{m} is below the current truncation {old}")));
        }
        let basis = make_mode_basis(&self.incident, &self.domain, m)?;
        let n = basis.len();
        let shift = m - old;
        let pad = |v: &[Complex64]| {
            let mut out = vec![linalg::zero(); n];
            out[shift..shift + v.len()].copy_from_slice(v);
            out
        };
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mo = &l.op.modes;
                let mut w = Mat::<Complex64>::identity(n, n);
                for i in 0..mo.len() {
                    for j in 0..mo.len() {
                        w[(i + shift, j + shift)] = mo.w[(i, j)];
                    }
                }
                let mut gamma = vec![Complex64::new(1.0, 0.0); n];
                gamma[shift..shift + mo.len()].copy_from_slice(&mo.gamma);
                let modes = SliceModes { w, gamma, diagonal: false, ..(**mo).clone() };
                SolvedLayer {
                    op: SliceOperator::new(Arc::new(modes), l.op.thickness),
                    amps: ModalAmplitudes { a: pad(&l.amps.a), b: pad(&l.amps.b) },
                    ..l.clone()
                }
            })
            .collect();
        Ok(ScatterSolution {
            r: pad(&self.r),
            t: pad(&self.t),
            layers,
            basis,
            mesh: self.mesh.clone(),
            domain: self.domain,
            incident: self.incident,
        })
    }
}

fn check_mesh(domain: &GratingDomain, mesh: &SliceMesh) -> Result<()> {
    let h = domain.half_height;
    let tol = 1e-9 * h;
    if (mesh.bottom() + h).abs() > tol || (mesh.top() - h).abs() > tol {
        return Err(RcwaError::MeshDomainMismatch {
            low: mesh.bottom(),
            high: mesh.top(),
            expected_low: -h,
            expected_high: h,
        });
    }
    Ok(())
}

struct Plan {
    basis: ModeBasis,
    /// Distinct mode sets in order of first appearance.
    modes: Vec<Arc<SliceModes>>,
    /// Per layer: `(first slice, last slice, mode index)`.
    layers: Vec<(usize, usize, usize)>,
}

fn compute_modes(
    problem: &GratingProblem,
    basis: &ModeBasis,
    mesh: &SliceMesh,
    rule: FactorizationRule,
    merge: bool,
) -> Result<Plan> {
    let mut keyed: HashMap<CrossSectionKey, usize> = HashMap::new();
    let mut sections = Vec::new();
    let mut first_slice = Vec::new();
    let mut layers: Vec<(usize, usize, usize)> = Vec::new();
    for j in 0..mesh.num_slices() {
        let cross = problem.cross_section(mesh.midpoint(j));
        let key = cross.key();
        let idx = *keyed.entry(key).or_insert_with(|| {
            sections.push(cross);
            first_slice.push(j);
            sections.len() - 1
        });
        match layers.last_mut() {
            Some(last) if merge && last.2 == idx => last.1 = j,
            _ => layers.push((j, j, idx)),
        }
    }
    let build = |(k, cross): (usize, &CrossSection)| {
        SliceModes::new(cross, basis, rule).map(Arc::new).map_err(|e| e.at_slice(first_slice[k]))
    };
    #[cfg(feature = "parallel")]
    let modes: Result<Vec<_>> = {
        use rayon::prelude::*;
        sections.par_iter().enumerate().map(build).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let modes: Result<Vec<_>> = sections.iter().enumerate().map(build).collect();
    Ok(Plan { basis: basis.clone(), modes: modes?, layers })
}

/// Solves the grating problem with `2M + 1` modes on `mesh`.
pub fn solve_grating(problem: &GratingProblem, m: usize, mesh: &SliceMesh) -> Result<ScatterSolution> {
    solve_grating_with(problem, m, mesh, &SolveOptions::default())
}

pub fn solve_grating_with(
    problem: &GratingProblem,
    m: usize,
    mesh: &SliceMesh,
    options: &SolveOptions,
) -> Result<ScatterSolution> {
    check_mesh(&problem.domain, mesh)?;
    let basis = problem.mode_basis(m)?;
    if options.check_wood {
        let report = check_wood_anomaly(&basis, WOOD_DEFAULT_TOL);
        for hit in &report.hits {
            log::warn!(
                "order {} grazes the {:?} half-space (relative gap {:e})",
                hit.order,
                hit.side,
                hit.relative_gap
            );
        }
    }
    let plan = compute_modes(problem, &basis, mesh, options.rule, options.merge_identical)?;
    let n = basis.len();
    let ops: Vec<SliceOperator> = plan
        .layers
        .iter()
        .map(|&(first, last, k)| {
            let thickness = mesh.slice(last).1 - mesh.slice(first).0;
            SliceOperator::new(plan.modes[k].clone(), thickness)
        })
        .collect();

    // Fold bottom to top, keeping the downward-looking reflection below each layer.
    let mut acc = bottom_interface(&plan.basis)?;
    let mut below: Vec<CMat> = Vec::with_capacity(ops.len());
    for (k, op) in ops.iter().enumerate() {
        below.push(acc.s11.clone());
        let s = layer_smatrix(op).map_err(|e| e.at_slice(plan.layers[k].0))?;
        acc = star(&s, &acc)?;
    }
    let mut delta = vec![linalg::zero(); n];
    delta[m] = linalg::one();
    let r = linalg::mat_vec(acc.s11.as_ref(), &delta);
    let t = linalg::mat_vec(acc.s21.as_ref(), &delta);

    // Back-substitution, top to bottom.
    let mut down_top = delta;
    let mut up_top = r.clone();
    let mut amps = vec![ModalAmplitudes::zeros(n); ops.len()];
    for k in (0..ops.len()).rev() {
        let s = layer_smatrix(&ops[k])?;
        let rb = &below[k];
        let lhs = CMat::identity(n, n) - &s.s22 * rb;
        let rhs = linalg::mat_vec(s.s21.as_ref(), &down_top);
        let down_bot = linalg::to_vec(lhs.partial_piv_lu().solve(linalg::col_vec(&rhs)).as_ref());
        let up_bot = linalg::mat_vec(rb.as_ref(), &down_bot);
        let modes = &ops[k].modes;
        let fa = linalg::mat_vec(modes.f.as_ref(), &up_bot);
        let ga = linalg::mat_vec(modes.g.as_ref(), &down_bot);
        let fb = linalg::mat_vec(modes.f.as_ref(), &down_top);
        let gb = linalg::mat_vec(modes.g.as_ref(), &up_top);
        amps[k] = ModalAmplitudes {
            a: fa.iter().zip(&ga).map(|(x, y)| x + y).collect(),
            b: fb.iter().zip(&gb).map(|(x, y)| x + y).collect(),
        };
        down_top = down_bot;
        up_top = up_bot;
    }

    let layers = plan
        .layers
        .iter()
        .zip(ops.into_iter().zip(amps))
        .map(|(&(first, last, _), (op, amps))| SolvedLayer {
            bottom: mesh.slice(first).0,
            top: mesh.slice(last).1,
            first,
            last,
            op,
            amps,
        })
        .collect();
    Ok(ScatterSolution {
        r,
        t,
        layers,
        basis: plan.basis,
        mesh: mesh.clone(),
        domain: problem.domain,
        incident: problem.incident,
    })
}

/// Solves the same problem as [`solve_grating`] by one global linear system
/// over the per-slice amplitudes of every mesh slice (no merging) plus `r`, `t`.
pub fn dense_solve(problem: &GratingProblem, m: usize, mesh: &SliceMesh) -> Result<ScatterSolution> {
    dense_solve_with(problem, m, mesh, FactorizationRule::Laurent)
}

pub fn dense_solve_with(
    problem: &GratingProblem,
    m: usize,
    mesh: &SliceMesh,
    rule: FactorizationRule,
) -> Result<ScatterSolution> {
    check_mesh(&problem.domain, mesh)?;
    let basis = problem.mode_basis(m)?;
    let n = basis.len();
    let s = mesh.num_slices();
    let unknowns = n * (2 * s + 2);
    if unknowns > DENSE_MAX_UNKNOWNS {
        return Err(RcwaError::OracleRefused(format!(
            "{unknowns} unknowns exceed the limit of {DENSE_MAX_UNKNOWNS}"
        )));
    }
    let plan = compute_modes(problem, &basis, mesh, rule, false)?;
    let ops: Vec<SliceOperator> = plan
        .layers
        .iter()
        .map(|&(j, _, k)| SliceOperator::new(plan.modes[k].clone(), mesh.thickness(j)))
        .collect();
    // V = T W Gamma for each slice, and X = exp(-gamma d).
    let vs: Vec<CMat> = ops
        .iter()
        .map(|op| {
            let tw = op.modes.toeplitz.matrix() * &op.modes.w;
            linalg::scale_cols(tw.as_ref(), &op.modes.gamma)
        })
        .collect();
    let xs: Vec<Vec<Complex64>> = ops.iter().map(|op| op.decay()).collect();

    let col_a = |j: usize| 2 * n * j;
    let col_b = |j: usize| 2 * n * j + n;
    let col_r = 2 * n * s;
    let col_t = 2 * n * s + n;
    let mut sys = CMat::zeros(unknowns, unknowns);
    let mut rhs = vec![linalg::zero(); unknowns];
    let i = Complex64::new(0.0, 1.0);

    // Writes `sign * M * diag(x)` into the block at (row, col).
    let put = |sys: &mut CMat, row: usize, col: usize, mat: &CMat, x: Option<&[Complex64]>, sign: f64| {
        for p in 0..n {
            for q in 0..n {
                let scale = x.map_or(linalg::one(), |x| x[q]);
                sys[(row + p, col + q)] += sign * mat[(p, q)] * scale;
            }
        }
    };
    let eye = CMat::identity(n, n);

    // Bottom face: u = t, conormal = (-i beta^- / eps^-) t.
    put(&mut sys, 0, col_a(0), &ops[0].modes.w, None, 1.0);
    put(&mut sys, 0, col_b(0), &ops[0].modes.w, Some(&xs[0]), 1.0);
    put(&mut sys, 0, col_t, &eye, None, -1.0);
    put(&mut sys, n, col_a(0), &vs[0], None, -1.0);
    put(&mut sys, n, col_b(0), &vs[0], Some(&xs[0]), 1.0);
    for p in 0..n {
        sys[(n + p, col_t + p)] += i * basis.beta_minus[p] / basis.eps_minus;
    }
    // Interior breakpoints.
    for j in 0..s - 1 {
        let row = 2 * n * (j + 1);
        put(&mut sys, row, col_a(j), &ops[j].modes.w, Some(&xs[j]), 1.0);
        put(&mut sys, row, col_b(j), &ops[j].modes.w, None, 1.0);
        put(&mut sys, row, col_a(j + 1), &ops[j + 1].modes.w, None, -1.0);
        put(&mut sys, row, col_b(j + 1), &ops[j + 1].modes.w, Some(&xs[j + 1]), -1.0);
        put(&mut sys, row + n, col_a(j), &vs[j], Some(&xs[j]), -1.0);
        put(&mut sys, row + n, col_b(j), &vs[j], None, 1.0);
        put(&mut sys, row + n, col_a(j + 1), &vs[j + 1], None, 1.0);
        put(&mut sys, row + n, col_b(j + 1), &vs[j + 1], Some(&xs[j + 1]), -1.0);
    }
    // Top face: u = delta + r, conormal = (i beta^+ / eps^+)(r - delta).
    let top = s - 1;
    let row = 2 * n * s;
    put(&mut sys, row, col_a(top), &ops[top].modes.w, Some(&xs[top]), 1.0);
    put(&mut sys, row, col_b(top), &ops[top].modes.w, None, 1.0);
    put(&mut sys, row, col_r, &eye, None, -1.0);
    rhs[row + m] = linalg::one();
    put(&mut sys, row + n, col_a(top), &vs[top], Some(&xs[top]), -1.0);
    put(&mut sys, row + n, col_b(top), &vs[top], None, 1.0);
    for p in 0..n {
        sys[(row + n + p, col_r + p)] -= i * basis.beta_plus[p] / basis.eps_plus;
    }
    rhs[row + n + m] = -i * basis.beta_plus[m] / basis.eps_plus;

    // Row equilibration.
    for p in 0..unknowns {
        let scale = (0..unknowns).map(|q| sys[(p, q)].norm()).fold(0.0, f64::max);
        if scale > 0.0 {
            for q in 0..unknowns {
                sys[(p, q)] /= scale;
            }
            rhs[p] /= scale;
        }
    }
    let (lu, cond) = linalg::factor(sys.as_ref());
    if !(cond <= DENSE_MAX_CONDITION) {
        return Err(RcwaError::OracleRefused(format!("condition estimate {cond:e} exceeds {DENSE_MAX_CONDITION:e}")));
    }
    let x = linalg::to_vec(lu.solve(linalg::col_vec(&rhs)).as_ref());

    let layers = ops
        .into_iter()
        .enumerate()
        .map(|(j, op)| {
            let (bottom, top) = mesh.slice(j);
            SolvedLayer {
                bottom,
                top,
                first: j,
                last: j,
                op,
                amps: ModalAmplitudes {
                    a: x[col_a(j)..col_a(j) + n].to_vec(),
                    b: x[col_b(j)..col_b(j) + n].to_vec(),
                },
            }
        })
        .collect();
    Ok(ScatterSolution {
        r: x[col_r..col_r + n].to_vec(),
        t: x[col_t..col_t + n].to_vec(),
        layers,
        basis,
        mesh: mesh.clone(),
        domain: problem.domain,
        incident: problem.incident,
    })
}

/// Operator of a constant-permittivity slice.
pub fn constant_slice(eps: Complex64, basis: &ModeBasis, thickness: f64) -> Result<SliceOperator> {
    let toeplitz = ToeplitzFactor::scalar(basis.m, linalg::one() / eps);
    Ok(SliceOperator::new(Arc::new(SliceModes::from_toeplitz(toeplitz, basis)?), thickness))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        GratingDomain, IncidentWave, Interval, LamellarLayer, MeshSpec, PermittivityProfile, UniformLayer,
        build_slice_mesh, make_mode_basis,
    };
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn air_basis(m: usize, theta: f64) -> (GratingDomain, ModeBasis) {
        let d = GratingDomain::new(500.0, 200.0, c(1.0, 0.0), c(1.0, 0.0)).unwrap();
        let b = make_mode_basis(&IncidentWave::new(600.0, theta).unwrap(), &d, m).unwrap();
        (d, b)
    }

    pub(crate) fn lamellar_problem(theta: f64, eps_minus: Complex64) -> GratingProblem {
        let domain = GratingDomain::new(500.0, 150.0, c(1.0, 0.0), eps_minus).unwrap();
        let profile = PermittivityProfile::LamellarStack {
            top: 60.0,
            layers: vec![
                LamellarLayer {
                    thickness: 80.0,
                    background: c(1.0, 0.0),
                    inclusions: vec![Interval::new(0.0, 250.0, c(2.25, 0.0))],
                },
                LamellarLayer {
                    thickness: 40.0,
                    background: c(2.25, 0.0),
                    inclusions: vec![Interval::new(100.0, 200.0, c(4.0, 0.5))],
                },
            ],
        };
        GratingProblem::new(domain, IncidentWave::new(600.0, theta).unwrap(), profile)
    }

    fn random_smatrix(n: usize, seed: u64, scale: f64) -> SMatrix {
        let f = |k: u64| {
            move |i: usize, j: usize| {
                let s = (seed * 7919 + k * 104729 + (i * 31 + j * 17) as u64) as f64;
                c(scale * (s * 0.618).sin(), scale * (s * 1.414).cos())
            }
        };
        SMatrix {
            s11: Mat::from_fn(n, n, f(1)),
            s12: Mat::from_fn(n, n, f(2)),
            s21: Mat::from_fn(n, n, f(3)),
            s22: Mat::from_fn(n, n, f(4)),
        }
    }

    #[test]
    fn identity_is_neutral() {
        let s = random_smatrix(5, 3, 0.2);
        let id = SMatrix::identity(5);
        assert!(star(&id, &s).unwrap().max_abs_diff(&s) < 1e-14);
        assert!(star(&s, &id).unwrap().max_abs_diff(&s) < 1e-14);
    }

    #[test]
    fn zero_thickness_ambient_layer_is_transparent() {
        let (_, b) = air_basis(3, 0.2);
        let op = constant_slice(c(1.0, 0.0), &b, 0.0).unwrap();
        let s = layer_smatrix(&op).unwrap();
        assert!(s.max_abs_diff(&SMatrix::identity(7)) < 1e-12);
    }

    #[test]
    fn same_medium_slab_only_propagates() {
        let (_, b) = air_basis(3, 0.2);
        let op = constant_slice(c(1.0, 0.0), &b, 37.0).unwrap();
        let s = layer_smatrix(&op).unwrap();
        // transmission exp(-gamma0 d) with the reference constant gamma0 = -i beta^+
        let x: Vec<Complex64> = b.beta_plus.iter().map(|beta| (c(0.0, 1.0) * beta * 37.0).exp()).collect();
        assert!(linalg::norm_max(s.s11.as_ref()) < 1e-15);
        assert!(linalg::norm_max((&s.s12 - linalg::diag(&x)).as_ref()) < 1e-14);
    }

    #[test]
    fn fresnel_interface() {
        let d = GratingDomain::new(500.0, 100.0, c(1.0, 0.0), c(4.0, 0.0)).unwrap();
        let b = make_mode_basis(&IncidentWave::new(600.0, 0.0).unwrap(), &d, 0).unwrap();
        let s = bottom_interface(&b).unwrap();
        assert!((s.s11[(0, 0)] - c(1.0 / 3.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn homogeneous_problem_is_transparent() {
        let d = GratingDomain::new(500.0, 100.0, c(2.0, 0.0), c(2.0, 0.0)).unwrap();
        let p = GratingProblem::new(d, IncidentWave::new(600.0, 0.3).unwrap(), PermittivityProfile::homogeneous());
        let mesh = p.aligned_mesh(25.0).unwrap();
        for sol in [solve_grating(&p, 4, &mesh).unwrap(), dense_solve(&p, 4, &mesh).unwrap()] {
            assert!(sol.r.iter().all(|r| r.norm() < 1e-14));
            assert!((sol.t[4].norm() - 1.0).abs() < 1e-14);
            assert!(sol.t.iter().enumerate().all(|(i, t)| i == 4 || t.norm() < 1e-14));
        }
    }

    #[test]
    fn quarter_wave_slab() {
        let d = GratingDomain::new(500.0, 100.0, c(1.0, 0.0), c(1.0, 0.0)).unwrap();
        let profile = PermittivityProfile::Stack {
            top: 37.5,
            layers: vec![UniformLayer { thickness: 75.0, eps: c(4.0, 0.0) }],
        };
        let p = GratingProblem::new(d, IncidentWave::new(600.0, 0.0).unwrap(), profile);
        let mesh = p.aligned_mesh(10.0).unwrap();
        for m in [0, 3] {
            let sol = solve_grating(&p, m, &mesh).unwrap();
            assert!((sol.r[m].norm_sqr() - 0.36).abs() < 1e-12, "{}", sol.r[m].norm_sqr());
            let dense = dense_solve(&p, m, &mesh).unwrap();
            assert!((dense.r[m].norm_sqr() - 0.36).abs() < 1e-10);
        }
    }

    #[test]
    fn lamellar_matches_dense_oracle() {
        for (theta, sub) in [(0.0, c(1.0, 0.0)), (0.35, c(2.0, 0.1))] {
            let p = lamellar_problem(theta, sub);
            let mesh = build_slice_mesh(&p.domain, &MeshSpec::Uniform(50.0), Some(&p.profile)).unwrap();
            assert!(mesh.num_slices() <= 8, "{}", mesh.num_slices());
            let m = 3;
            let a = solve_grating(&p, m, &mesh).unwrap();
            let b = dense_solve(&p, m, &mesh).unwrap();
            let diff = a.r.iter().zip(&b.r).chain(a.t.iter().zip(&b.t)).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-8, "{diff}");
            for j in 0..mesh.num_slices() {
                let (_, amps_a) = a.slice_amplitudes(j).unwrap();
                let (_, amps_b) = b.slice_amplitudes(j).unwrap();
                for (x, y) in amps_a.a.iter().zip(&amps_b.a).chain(amps_a.b.iter().zip(&amps_b.b)) {
                    assert!((x - y).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn back_substitution_reproduces_outer_traces() {
        let p = lamellar_problem(0.2, c(1.5, 0.0));
        let mesh = p.aligned_mesh(20.0).unwrap();
        let sol = solve_grating(&p, 4, &mesh).unwrap();
        let h = p.domain.half_height;
        let inside_top = sol.coefficients_at(h);
        let inside_bot = sol.coefficients_at(-h);
        for i in 0..9 {
            let d = if i == 4 { 1.0 } else { 0.0 };
            assert!((inside_top[i] - sol.r[i] - d).norm() < 1e-10);
            assert!((inside_bot[i] - sol.t[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn layer_smatrix_matches_dense_columns() {
        // One lamellar slab in air; extract the reflection/transmission for each incoming order.
        let domain = GratingDomain::new(500.0, 50.0, c(1.0, 0.0), c(1.0, 0.0)).unwrap();
        let profile = PermittivityProfile::LamellarStack {
            top: 50.0,
            layers: vec![LamellarLayer {
                thickness: 100.0,
                background: c(1.0, 0.0),
                inclusions: vec![Interval::new(0.0, 250.0, c(2.25, 0.0))],
            }],
        };
        let p = GratingProblem::new(domain, IncidentWave::new(600.0, 0.0).unwrap(), profile);
        let mesh = SliceMesh::from_breakpoints(vec![-50.0, 50.0]).unwrap();
        let m = 2;
        let sol = dense_solve(&p, m, &mesh).unwrap();
        let op = &sol.layers[0].op;
        let s = layer_smatrix(op).unwrap();
        // Column m of S11/S21 is the response to unit down-going order 0 in the reference film.
        for i in 0..5 {
            assert!((s.s11[(i, m)] - sol.r[i]).norm() < 1e-8);
            assert!((s.s21[(i, m)] - sol.t[i]).norm() < 1e-8);
        }
    }

    #[test]
    fn splitting_constant_slices_changes_nothing() {
        let p = lamellar_problem(0.3, c(2.0, 0.0));
        let coarse = p.aligned_mesh(1000.0).unwrap();
        let mut fine_bp = coarse.breakpoints().to_vec();
        // split the gap above the grating and the top lamellar layer
        fine_bp.push(100.0);
        fine_bp.push(50.0);
        fine_bp.sort_by(f64::total_cmp);
        let fine = SliceMesh::from_breakpoints(fine_bp).unwrap();
        let opts = SolveOptions { merge_identical: false, ..Default::default() };
        let a = solve_grating_with(&p, 5, &coarse, &opts).unwrap();
        let b = solve_grating_with(&p, 5, &fine, &opts).unwrap();
        let diff = a.r.iter().zip(&b.r).chain(a.t.iter().zip(&b.t)).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn thick_evanescent_layers_stay_finite() {
        let p = lamellar_problem(0.0, c(1.0, 0.0));
        let mesh = p.aligned_mesh(200.0).unwrap();
        let sol = solve_grating(&p, 40, &mesh).unwrap();
        assert!(sol.r.iter().chain(&sol.t).all(|z| z.is_finite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn star_is_associative(seed in 0u64..10_000) {
            let a = random_smatrix(4, seed, 0.15);
            let b = random_smatrix(4, seed + 1, 0.15);
            let cc = random_smatrix(4, seed + 2, 0.15);
            let left = star(&star(&a, &b).unwrap(), &cc).unwrap();
            let right = star(&a, &star(&b, &cc).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) < 1e-10);
        }
    }
}
