//! Modal solution inside one slice.
//!
//! In a slice the Fourier coefficient vector `u(x2)` of the field obeys
//! `T u'' = K T K u - kappa^2 u`, where `T` is the Toeplitz factor of `1/eps` and
//! `K = diag(alpha_n)`. With `A = T^-1 (K T K - kappa^2 I) = W diag(gamma^2) W^-1`
//! the general solution is
//!
//! ```text
//! u(z) = W [ exp(-gamma z) a + exp(-gamma (d - z)) b ],   0 <= z <= d,
//! ```
//!
//! with `a` referenced at the bottom face and `b` at the top face. Because
//! `Re(gamma) >= 0` neither exponential exceeds one in modulus.

use std::sync::Arc;

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use num_complex::Complex64;

use crate::error::{RcwaError, Result};
use crate::fourier::{slice_toeplitz, FactorizationRule, ToeplitzFactor};
use crate::linalg::{self, CMat};
use crate::problem::{CrossSection, ModeBasis};

/// Toeplitz condition number above which a warning is logged.
pub const TOEPLITZ_WARN_CONDITION: f64 = 1e12;
/// Eigenvector condition number above which `A` is treated as near-defective.
pub const DEFECTIVE_WARN_CONDITION: f64 = 1e8;

/// Principal square root with the branch `Re >= 0`, ties broken toward `Im >= 0`.
pub fn branch_sqrt(lambda: Complex64) -> Complex64 {
    let g = if lambda.im == 0.0 {
        if lambda.re >= 0.0 {
            Complex64::new(lambda.re.sqrt(), 0.0)
        } else {
            Complex64::new(0.0, (-lambda.re).sqrt())
        }
    } else {
        lambda.sqrt()
    };
    if g.re < 0.0 || (g.re == 0.0 && g.im < 0.0) {
        -g
    } else {
        g
    }
}

/// `A = T^-1 (K T K - kappa^2 I)` together with `T^-1`.
pub(crate) fn coupling(toeplitz: &ToeplitzFactor, basis: &ModeBasis) -> Result<(CMat, CMat)> {
    let t = toeplitz.matrix();
    let n = t.nrows();
    if n != basis.len() {
        return Err(RcwaError::Dimension { expected: basis.len(), actual: n });
    }
    let k2 = basis.kappa * basis.kappa;
    let alpha: Vec<Complex64> = basis.alpha.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    let mut rhs = linalg::scale_cols(linalg::scale_rows(&alpha, t.as_ref()).as_ref(), &alpha);
    for i in 0..n {
        rhs[(i, i)] -= Complex64::new(k2, 0.0);
    }
    if linalg::is_diagonal(t.as_ref()) {
        let inv: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0, 0.0) / t[(i, i)]).collect();
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(RcwaError::SingularToeplitz { slice: None, condition: f64::INFINITY });
        }
        return Ok((linalg::scale_rows(&inv, rhs.as_ref()), linalg::diag(&inv)));
    }
    let (lu, cond) = linalg::factor(t.as_ref());
    if !(cond < 1e15) {
        return Err(RcwaError::SingularToeplitz { slice: None, condition: cond });
    }
    if cond > TOEPLITZ_WARN_CONDITION {
        log::warn!("Toeplitz factor is ill-conditioned (condition estimate {cond:e})");
    }
    let inv = lu.inverse();
    Ok((&inv * &rhs, inv))
}

/// Conormal admittance `-i beta_n^+ / eps_+` of the reference medium.
pub(crate) fn reference_admittance(basis: &ModeBasis) -> Vec<Complex64> {
    basis.beta_plus.iter().map(|b| Complex64::new(0.0, -1.0) * b / basis.eps_plus).collect()
}

/// Coupling matrix of the modal ODE `u'' = A u`.
pub fn build_a(toeplitz: &ToeplitzFactor, basis: &ModeBasis) -> Result<CMat> {
    coupling(toeplitz, basis).map(|(a, _)| a)
}

/// Eigen-decomposition `A W = W diag(gamma^2)`.
///
/// Diagonal matrices short-circuit to `W = I`. Otherwise eigenvectors are
/// scaled to unit max-norm with their largest entry real and positive, and
/// pairs are sorted by `(Re gamma, Im gamma)`.
pub fn eigensolve(a: &CMat) -> Result<(CMat, Vec<Complex64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(RcwaError::Dimension { expected: n, actual: a.ncols() });
    }
    if linalg::is_diagonal(a.as_ref()) {
        let gamma = (0..n).map(|i| branch_sqrt(a[(i, i)])).collect();
        return Ok((CMat::identity(n, n), gamma));
    }
    let evd = a.eigen().map_err(|_| RcwaError::EigenNotConverged { slice: None })?;
    let u = evd.U();
    let s = evd.S();
    let mut pairs: Vec<(Complex64, usize)> =
        (0..n).map(|j| (branch_sqrt(s[j]), j)).collect();
    if pairs.iter().any(|(g, _)| !g.is_finite()) {
        return Err(RcwaError::EigenNotConverged { slice: None });
    }
    pairs.sort_by(|x, y| x.0.re.total_cmp(&y.0.re).then(x.0.im.total_cmp(&y.0.im)));
    let mut w = Mat::zeros(n, n);
    let mut gamma = Vec::with_capacity(n);
    for (col, &(g, j)) in pairs.iter().enumerate() {
        let (mut imax, mut vmax) = (0, 0.0);
        for i in 0..n {
            let v = u[(i, j)].norm();
            if v > vmax {
                vmax = v;
                imax = i;
            }
        }
        if vmax == 0.0 {
            return Err(RcwaError::EigenNotConverged { slice: None });
        }
        let scale = Complex64::new(1.0, 0.0) / u[(imax, j)];
        for i in 0..n {
            w[(i, col)] = u[(i, j)] * scale;
        }
        w[(imax, col)] = Complex64::new(1.0, 0.0);
        gamma.push(g);
    }
    Ok((w, gamma))
}

/// Everything about a slice that does not depend on its thickness.
#[derive(Debug, Clone)]
pub struct SliceModes {
    pub toeplitz: ToeplitzFactor,
    pub a: CMat,
    pub w: CMat,
    pub gamma: Vec<Complex64>,
    /// Constant cross-section: `T`, `A` diagonal and `W = I`.
    pub diagonal: bool,
    /// 1-norm condition estimate of `W`.
    pub eigvec_condition: f64,
    /// Face-matching blocks against the reference medium: `F = (P + Q) / 2`,
    /// `G = (P - Q) / 2` with `P = W^-1` and `Q = (T W Gamma)^-1 V0`.
    pub f: CMat,
    pub g: CMat,
}

impl SliceModes {
    pub fn new(cross: &CrossSection, basis: &ModeBasis, rule: FactorizationRule) -> Result<Self> {
        let toeplitz = slice_toeplitz(cross, basis.m, rule)?;
        Self::from_toeplitz(toeplitz, basis)
    }

    pub fn from_toeplitz(toeplitz: ToeplitzFactor, basis: &ModeBasis) -> Result<Self> {
        let (a, toeplitz_inv) = coupling(&toeplitz, basis)?;
        let (w, gamma) = eigensolve(&a)?;
        let diagonal = linalg::is_diagonal(a.as_ref());
        let n = gamma.len();
        if let Some(i) = gamma.iter().position(|g| *g == Complex64::new(0.0, 0.0)) {
            return Err(RcwaError::SingularInterface {
                slice: None,
                reason: format!("mode {} has zero propagation constant", basis.order(i)),
            });
        }
        let (p, eigvec_condition) = if diagonal {
            (CMat::identity(n, n), 1.0)
        } else {
            let (lu, cond) = linalg::factor(w.as_ref());
            if !(cond < 1e15) {
                return Err(RcwaError::SingularInterface {
                    slice: None,
                    reason: format!("eigenvector matrix is singular (condition estimate {cond:e})"),
                });
            }
            (lu.inverse(), cond)
        };
        if eigvec_condition > DEFECTIVE_WARN_CONDITION {
            log::warn!("coupling matrix is near-defective (eigenvector condition {eigvec_condition:e})");
        }
        let v0 = reference_admittance(basis);
        let inv_gamma: Vec<Complex64> = gamma.iter().map(|g| Complex64::new(1.0, 0.0) / g).collect();
        let q = linalg::scale_cols(
            linalg::scale_rows(&inv_gamma, (&p * &toeplitz_inv).as_ref()).as_ref(),
            &v0,
        );
        let half = Complex64::new(0.5, 0.0);
        let f = Mat::from_fn(n, n, |i, j| half * (p[(i, j)] + q[(i, j)]));
        let g = Mat::from_fn(n, n, |i, j| half * (p[(i, j)] - q[(i, j)]));
        Ok(Self { toeplitz, a, w, gamma, diagonal, eigvec_condition, f, g })
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn is_near_defective(&self) -> bool {
        self.eigvec_condition > DEFECTIVE_WARN_CONDITION
    }

    /// `W v`
    pub(crate) fn apply_w(&self, v: &[Complex64]) -> Vec<Complex64> {
        if self.diagonal {
            v.to_vec()
        } else {
            linalg::mat_vec(self.w.as_ref(), v)
        }
    }

    /// `T v`
    pub(crate) fn apply_t(&self, v: &[Complex64]) -> Vec<Complex64> {
        if self.diagonal {
            v.iter().enumerate().map(|(i, x)| self.toeplitz.matrix()[(i, i)] * x).collect()
        } else {
            linalg::mat_vec(self.toeplitz.matrix().as_ref(), v)
        }
    }
}

/// A slice: its modes and thickness.
#[derive(Debug, Clone)]
pub struct SliceOperator {
    pub modes: Arc<SliceModes>,
    pub thickness: f64,
}

impl SliceOperator {
    pub fn new(modes: Arc<SliceModes>, thickness: f64) -> Self {
        Self { modes, thickness }
    }

    /// `exp(-gamma d)`
    pub fn decay(&self) -> Vec<Complex64> {
        self.modes.gamma.iter().map(|g| (-g * self.thickness).exp()).collect()
    }

    /// Modal weights `(exp(-gamma z) a, exp(-gamma (d - z)) b)` at local height `z`.
    fn weights(&self, amps: &ModalAmplitudes, z: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let d = self.thickness;
        let up = self.modes.gamma.iter().zip(&amps.a).map(|(g, a)| (-g * z).exp() * a).collect();
        let down = self.modes.gamma.iter().zip(&amps.b).map(|(g, b)| (-g * (d - z)).exp() * b).collect();
        (up, down)
    }

    /// Fourier coefficients of `u` at local height `z`.
    pub fn field(&self, amps: &ModalAmplitudes, z: f64) -> Vec<Complex64> {
        let (up, down) = self.weights(amps, z);
        let sum: Vec<Complex64> = up.iter().zip(&down).map(|(x, y)| x + y).collect();
        self.modes.apply_w(&sum)
    }

    /// Fourier coefficients of `du/dx2` at local height `z`.
    pub fn derivative(&self, amps: &ModalAmplitudes, z: f64) -> Vec<Complex64> {
        let (up, down) = self.weights(amps, z);
        let v: Vec<Complex64> =
            self.modes.gamma.iter().zip(up.iter().zip(&down)).map(|(g, (x, y))| g * (y - x)).collect();
        self.modes.apply_w(&v)
    }
}

/// Modal amplitudes of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalAmplitudes {
    /// Family `exp(-gamma z)`, unit at the bottom face.
    pub a: Vec<Complex64>,
    /// Family `exp(-gamma (d - z))`, unit at the top face.
    pub b: Vec<Complex64>,
}

impl ModalAmplitudes {
    pub fn zeros(n: usize) -> Self {
        Self { a: vec![Complex64::new(0.0, 0.0); n], b: vec![Complex64::new(0.0, 0.0); n] }
    }
}

/// Field coefficients `u` and conormal `T u'` at local height `z` in `[0, d]`.
pub fn slice_field(
    op: &SliceOperator,
    amps: &ModalAmplitudes,
    z: f64,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let tol = 1e-12 * op.thickness.max(1.0);
    if !(z >= -tol && z <= op.thickness + tol) {
        return Err(RcwaError::OutOfRange { x2: z, low: 0.0, high: op.thickness });
    }
    let z = z.clamp(0.0, op.thickness);
    let u = op.field(amps, z);
    let conormal = op.modes.apply_t(&op.derivative(amps, z));
    Ok((u, conormal))
}
