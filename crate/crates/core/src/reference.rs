//! Planar multilayer oracle: p-polarized transfer recursion for laterally
//! uniform stacks, with amplitudes referenced at layer faces.

use num_complex::Complex64;

use crate::error::{RcwaError, Result};
use crate::linalg;
use crate::problem::{vertical_wavenumber, GratingProblem, IncidentWave, SliceMesh};
use crate::stitcher::{constant_slice, ScatterSolution, SolvedLayer};
use crate::slicesolver::ModalAmplitudes;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarLayer {
    pub eps: Complex64,
    pub thickness: f64,
}

/// Layers listed top-down between the upper and lower half-spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarStack {
    pub eps_plus: Complex64,
    pub eps_minus: Complex64,
    pub layers: Vec<PlanarLayer>,
}

impl PlanarStack {
    pub fn new(eps_plus: Complex64, eps_minus: Complex64, layers: Vec<PlanarLayer>) -> Result<Self> {
        if let Some(l) = layers.iter().find(|l| !(l.thickness > 0.0)) {
            return Err(RcwaError::invalid("thickness", format!("{} must be > 0", l.thickness)));
        }
        Ok(Self { eps_plus, eps_minus, layers })
    }

    /// The cell `[-H, H]` of a laterally uniform problem, including the ambient gaps.
    pub fn from_problem(problem: &GratingProblem) -> Result<Self> {
        let d = &problem.domain;
        let h = d.half_height;
        let mut faces: Vec<f64> = problem.profile.interfaces(d).into_iter().filter(|y| y.abs() < h).collect();
        faces.push(h);
        faces.push(-h);
        faces.sort_by(|a, b| b.total_cmp(a));
        faces.dedup();
        let mut layers = Vec::with_capacity(faces.len());
        for w in faces.windows(2) {
            let cross = problem.cross_section(0.5 * (w[0] + w[1]));
            let eps = cross.as_constant().ok_or_else(|| {
                RcwaError::GeometryMismatch(format!("profile varies laterally in [{}, {}]", w[1], w[0]))
            })?;
            layers.push(PlanarLayer { eps, thickness: w[0] - w[1] });
        }
        Self::new(d.eps_plus, d.eps_minus, layers)
    }

    pub fn reversed(&self) -> Self {
        Self {
            eps_plus: self.eps_minus,
            eps_minus: self.eps_plus,
            layers: self.layers.iter().rev().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarResult {
    /// Reflection amplitude at the top face of the stack.
    pub r: Complex64,
    /// Transmission amplitude at the bottom face of the stack.
    pub t: Complex64,
    pub reflectance: f64,
    pub transmittance: f64,
}

/// Per-layer amplitudes for one Bloch order.
struct Sweep {
    r: Complex64,
    t: Complex64,
    /// Down-going amplitude at each layer's top face.
    down: Vec<Complex64>,
    /// Up-going amplitude at each layer's bottom face.
    up: Vec<Complex64>,
    beta: Vec<Complex64>,
}

fn sweep(stack: &PlanarStack, kappa: f64, alpha: f64) -> Sweep {
    let i = Complex64::new(0.0, 1.0);
    let one = linalg::one();
    // media: 0 = upper half-space, 1..=n layers, n + 1 = lower half-space
    let eps: Vec<Complex64> = std::iter::once(stack.eps_plus)
        .chain(stack.layers.iter().map(|l| l.eps))
        .chain(std::iter::once(stack.eps_minus))
        .collect();
    let nm = eps.len();
    let beta: Vec<Complex64> = eps.iter().map(|&e| vertical_wavenumber(kappa, e, alpha)).collect();
    let q: Vec<Complex64> = beta.iter().zip(&eps).map(|(b, e)| b / e).collect();
    let thick = |j: usize| if j == 0 || j + 1 == nm { 0.0 } else { stack.layers[j - 1].thickness };
    let phase = |j: usize| (i * beta[j] * thick(j)).exp();

    // Ratios up/down at the bottom (rb) and top (rt) faces of each medium.
    let mut rb = vec![linalg::zero(); nm];
    let mut rt = vec![linalg::zero(); nm];
    for j in (0..nm - 1).rev() {
        let fresnel = (q[j] - q[j + 1]) / (q[j] + q[j + 1]);
        rb[j] = (fresnel + rt[j + 1]) / (one + fresnel * rt[j + 1]);
        let p = phase(j);
        rt[j] = rb[j] * p * p;
    }
    let mut down = vec![linalg::zero(); nm];
    down[0] = one;
    for j in 0..nm - 1 {
        let at_bottom = down[j] * phase(j);
        down[j + 1] = at_bottom * (one + rb[j]) / (one + rt[j + 1]);
    }
    let up: Vec<Complex64> = (0..nm).map(|j| rb[j] * down[j] * phase(j)).collect();
    Sweep { r: rb[0], t: down[nm - 1], down, up, beta }
}

fn flux(beta: Complex64, eps: Complex64) -> f64 {
    if eps.im.abs() <= crate::analysis::FLUX_IMAG_TOL {
        beta.re / eps.re
    } else {
        (beta / eps).re
    }
}

pub fn planar_tmm(stack: &PlanarStack, incident: &IncidentWave) -> Result<PlanarResult> {
    let kappa = incident.kappa();
    let alpha = incident.alpha0(stack.eps_plus)?;
    let s = sweep(stack, kappa, alpha);
    let nm = s.beta.len();
    let top = flux(s.beta[0], stack.eps_plus);
    let bottom = if vertical_wavenumber(kappa, stack.eps_minus, alpha).re > 0.0 {
        flux(s.beta[nm - 1], stack.eps_minus)
    } else {
        0.0
    };
    Ok(PlanarResult {
        r: s.r,
        t: s.t,
        reflectance: s.r.norm_sqr(),
        transmittance: s.t.norm_sqr() * bottom / top,
    })
}

/// Exact solution of a laterally uniform problem in the form produced by the
/// grating solvers, with `2M + 1` orders of which only order zero is excited.
pub fn planar_solution(problem: &GratingProblem, m: usize) -> Result<ScatterSolution> {
    let stack = PlanarStack::from_problem(problem)?;
    let basis = problem.mode_basis(m)?;
    let n = basis.len();
    let s = sweep(&stack, basis.kappa, basis.alpha0);
    let h = problem.domain.half_height;
    let mut faces = vec![h];
    for l in &stack.layers {
        faces.push(faces.last().unwrap() - l.thickness);
    }
    *faces.last_mut().unwrap() = -h;
    let i = Complex64::new(0.0, 1.0);
    let mut layers = Vec::with_capacity(stack.layers.len());
    let nl = stack.layers.len();
    for (k, l) in stack.layers.iter().enumerate().rev() {
        let j = k + 1;
        let op = constant_slice(l.eps, &basis, l.thickness)?;
        let gamma = op.modes.gamma[m];
        let beta = s.beta[j];
        let p = (i * beta * l.thickness).exp();
        // exp(-gamma z) is the up-going wave when gamma = -i beta, otherwise the down-going one.
        let (a0, b0) = if (gamma + i * beta).norm() <= (gamma - i * beta).norm() {
            (s.up[j], s.down[j])
        } else {
            (s.down[j] * p, s.up[j] * p)
        };
        let mut amps = ModalAmplitudes::zeros(n);
        amps.a[m] = a0;
        amps.b[m] = b0;
        let idx = nl - 1 - k;
        layers.push(SolvedLayer { bottom: faces[k + 1], top: faces[k], first: idx, last: idx, op, amps });
    }
    let mut breakpoints: Vec<f64> = faces.clone();
    breakpoints.reverse();
    let mut r = vec![linalg::zero(); n];
    let mut t = vec![linalg::zero(); n];
    r[m] = s.r;
    t[m] = s.t;
    Ok(ScatterSolution {
        r,
        t,
        layers,
        basis,
        mesh: SliceMesh::from_breakpoints(breakpoints)?,
        domain: problem.domain,
        incident: problem.incident,
    })
}
