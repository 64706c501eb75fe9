//! Fourier coefficients of the slice permittivity and the Toeplitz factor of
//! the modal ODE system.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64;

use crate::error::{RcwaError, Result};
use crate::linalg::{self, CMat};
use crate::problem::CrossSection;

/// Default oversampling of the quadrature path relative to the `4M + 1` coefficients needed.
pub const DEFAULT_OVERSAMPLING: usize = 8;

/// How multiplication by `1/eps` is represented in the truncated basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorizationRule {
    /// Toeplitz matrix of the coefficients of `1/eps` (the Galerkin-consistent choice).
    #[default]
    Laurent,
    /// Inverse of the Toeplitz matrix of the coefficients of `eps`.
    Inverse,
}

/// Coefficients `c_k`, `k = -K..=K`, of an `Lx`-periodic function.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoeffs {
    max_order: usize,
    coeffs: Vec<Complex64>,
}

impl FourierCoeffs {
    pub fn new(max_order: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != 2 * max_order + 1 {
            return Err(RcwaError::Dimension { expected: 2 * max_order + 1, actual: coeffs.len() });
        }
        Ok(Self { max_order, coeffs })
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn get(&self, k: i64) -> Complex64 {
        self.coeffs[(k + self.max_order as i64) as usize]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.coeffs
    }
}

/// Coefficients of `1/eps` over orders `-2M..=2M`.
///
/// Interval cross-sections use exact step integrals; sampled ones use the
/// periodic trapezoid rule with [`DEFAULT_OVERSAMPLING`].
pub fn inv_eps_fourier(cross: &CrossSection, m: usize) -> Result<FourierCoeffs> {
    fourier_of(cross, 2 * m, |e| Complex64::new(1.0, 0.0) / e, true)
}

/// Coefficients of `eps` itself, used by the inverse rule.
pub fn eps_fourier(cross: &CrossSection, m: usize) -> Result<FourierCoeffs> {
    fourier_of(cross, 2 * m, |e| e, false)
}

/// Coefficients of `1/eps` by trapezoid quadrature regardless of the cross-section kind.
pub fn inv_eps_fourier_sampled(cross: &CrossSection, m: usize, oversampling: usize) -> Result<FourierCoeffs> {
    let period = cross.period();
    let nq = (oversampling.max(1) * (4 * m + 1)).max(256);
    let mut samples = Vec::with_capacity(nq);
    for j in 0..nq {
        let x = period * j as f64 / nq as f64;
        let e = cross.eval(x);
        if e == Complex64::new(0.0, 0.0) {
            return Err(RcwaError::ZeroPermittivity { start: x, end: x });
        }
        samples.push(Complex64::new(1.0, 0.0) / e);
    }
    Ok(dft(&samples, 2 * m))
}

fn fourier_of(
    cross: &CrossSection,
    max_order: usize,
    f: impl Fn(Complex64) -> Complex64,
    reject_zero: bool,
) -> Result<FourierCoeffs> {
    match cross {
        CrossSection::Intervals { period, intervals } => {
            let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * max_order + 1];
            for iv in intervals {
                if reject_zero && iv.eps == Complex64::new(0.0, 0.0) {
                    return Err(RcwaError::ZeroPermittivity { start: iv.start, end: iv.end });
                }
                let v = f(iv.eps);
                for (idx, c) in coeffs.iter_mut().enumerate() {
                    let k = idx as i64 - max_order as i64;
                    *c += v * step_integral(*period, iv.start, iv.end, k);
                }
            }
            Ok(FourierCoeffs { max_order, coeffs })
        }
        CrossSection::Sampled { period, .. } => {
            let nq = (DEFAULT_OVERSAMPLING * (2 * max_order + 1)).max(64);
            let mut samples = Vec::with_capacity(nq);
            for j in 0..nq {
                let x = period * j as f64 / nq as f64;
                let e = cross.eval(x);
                if reject_zero && e == Complex64::new(0.0, 0.0) {
                    return Err(RcwaError::ZeroPermittivity { start: x, end: x });
                }
                samples.push(f(e));
            }
            Ok(dft(&samples, max_order))
        }
    }
}

/// `(1/L) int_a^b exp(-2 pi i k x / L) dx`
fn step_integral(period: f64, a: f64, b: f64, k: i64) -> Complex64 {
    if k == 0 {
        return Complex64::new((b - a) / period, 0.0);
    }
    let kk = 2.0 * PI * k as f64 / period;
    let ea = Complex64::from_polar(1.0, -kk * a);
    let eb = Complex64::from_polar(1.0, -kk * b);
    (ea - eb) / Complex64::new(0.0, kk * period)
}

/// `c_k = (1/N) sum_j f_j exp(-2 pi i k j / N)` for `|k| <= max_order`.
fn dft(samples: &[Complex64], max_order: usize) -> FourierCoeffs {
    let n = samples.len();
    let twiddle: Vec<Complex64> =
        (0..n).map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / n as f64)).collect();
    let coeffs = (-(max_order as i64)..=max_order as i64)
        .map(|k| {
            let kk = k.rem_euclid(n as i64) as usize;
            let sum = samples
                .iter()
                .enumerate()
                .fold(Complex64::new(0.0, 0.0), |acc, (j, &s)| acc + s * twiddle[(kk * j) % n]);
            sum / n as f64
        })
        .collect();
    FourierCoeffs { max_order, coeffs }
}

/// Dense `(2M+1) x (2M+1)` matrix with entry `(n, m) = c_{n-m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzFactor {
    m: usize,
    mat: CMat,
}

impl ToeplitzFactor {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn into_matrix(self) -> CMat {
        self.mat
    }

    /// Wraps an arbitrary matrix (used for the inverse rule).
    pub(crate) fn from_matrix(m: usize, mat: CMat) -> Self {
        Self { m, mat }
    }

    /// `(1/eps) I`
    pub fn scalar(m: usize, value: Complex64) -> Self {
        Self { m, mat: linalg::diag(&vec![value; 2 * m + 1]) }
    }
}

pub fn toeplitz_assemble(coeffs: &FourierCoeffs, m: usize) -> Result<ToeplitzFactor> {
    if coeffs.max_order() < 2 * m {
        return Err(RcwaError::InsufficientCoefficients { needed: 2 * m, available: coeffs.max_order() });
    }
    let n = 2 * m + 1;
    let mat = Mat::from_fn(n, n, |i, j| coeffs.get(i as i64 - j as i64));
    Ok(ToeplitzFactor { m, mat })
}

/// Toeplitz factor of a cross-section under the chosen rule.
pub fn slice_toeplitz(cross: &CrossSection, m: usize, rule: FactorizationRule) -> Result<ToeplitzFactor> {
    if let Some(eps) = cross.as_constant() {
        if eps == Complex64::new(0.0, 0.0) {
            return Err(RcwaError::ZeroPermittivity { start: 0.0, end: cross.period() });
        }
        return Ok(ToeplitzFactor::scalar(m, Complex64::new(1.0, 0.0) / eps));
    }
    match rule {
        FactorizationRule::Laurent => toeplitz_assemble(&inv_eps_fourier(cross, m)?, m),
        FactorizationRule::Inverse => {
            let eps_t = toeplitz_assemble(&eps_fourier(cross, m)?, m)?;
            let (lu, cond) = linalg::factor(eps_t.matrix().as_ref());
            if !(cond < 1e15) {
                return Err(RcwaError::SingularToeplitz { slice: None, condition: cond });
            }
            use faer::linalg::solvers::DenseSolveCore;
            Ok(ToeplitzFactor::from_matrix(m, lu.inverse()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Interval;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn half_split(period: f64) -> CrossSection {
        // 1/eps = 1 on [0, L/2), 1/4 on [L/2, L)
        CrossSection::painted(period, c(1.0, 0.0), &[Interval::new(period / 2.0, period, c(4.0, 0.0))])
    }

    /// Independent oracle: midpoint-rule DFT on a very fine grid.
    fn brute_force(cross: &CrossSection, k: i64, n: usize) -> Complex64 {
        let l = cross.period();
        (0..n)
            .map(|j| {
                let x = l * (j as f64 + 0.5) / n as f64;
                Complex64::from_polar(1.0, -2.0 * PI * k as f64 * x / l) / cross.eval(x)
            })
            .sum::<Complex64>()
            / n as f64
    }

    #[test]
    fn constant_cross_section() {
        let cs = CrossSection::constant(500.0, c(4.0, 0.0));
        let f = inv_eps_fourier(&cs, 3).unwrap();
        assert_eq!(f.get(0), c(0.25, 0.0));
        for k in 1..=6 {
            assert!(f.get(k).norm() < 1e-16 && f.get(-k).norm() < 1e-16);
        }
    }

    #[test]
    fn lamellar_closed_form() {
        let cs = half_split(500.0);
        let f = inv_eps_fourier(&cs, 1).unwrap();
        assert!((f.get(0) - c(0.625, 0.0)).norm() < 1e-15);
        assert!((f.get(1) - c(0.0, -0.75 / PI)).norm() < 1e-15);
        assert!((f.get(1).im + 0.23873).abs() < 1e-5);
        // even orders vanish for a half-period split
        assert!(f.get(2).norm() < 1e-15);
        for k in -2..=2 {
            let oracle = brute_force(&cs, k, 200_000);
            assert!((f.get(k) - oracle).norm() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn smooth_profile_quadrature_matches_closed_form() {
        // 1/eps = a + b cos(2 pi x / L) has c0 = a, c(+-1) = b/2 and nothing else.
        let (a, b) = (0.4, 0.15);
        let cs = CrossSection::Sampled {
            period: 500.0,
            y: 0.0,
            func: std::sync::Arc::new(move |x, _| {
                c(1.0, 0.0) / (a + b * (2.0 * PI * x / 500.0).cos())
            }),
        };
        let f = inv_eps_fourier(&cs, 4).unwrap();
        assert!((f.get(0) - c(a, 0.0)).norm() < 1e-12);
        assert!((f.get(1) - c(b / 2.0, 0.0)).norm() < 1e-12);
        assert!((f.get(-1) - c(b / 2.0, 0.0)).norm() < 1e-12);
        for k in 2..=8 {
            assert!(f.get(k).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_permittivity_rejected() {
        let cs = CrossSection::painted(1.0, c(1.0, 0.0), &[Interval::new(0.2, 0.4, c(0.0, 0.0))]);
        assert!(matches!(inv_eps_fourier(&cs, 2), Err(RcwaError::ZeroPermittivity { .. })));
    }

    #[test]
    fn toeplitz_layout() {
        let f = inv_eps_fourier(&half_split(500.0), 1).unwrap();
        let t = toeplitz_assemble(&f, 1).unwrap();
        let m = t.matrix();
        for i in 0..3 {
            assert!((m[(i, i)] - c(0.625, 0.0)).norm() < 1e-15);
        }
        assert!((m[(0, 1)] - c(0.0, 0.75 / PI)).norm() < 1e-15);
        assert!((m[(1, 0)] - c(0.0, -0.75 / PI)).norm() < 1e-15);
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[(i, j)] - m[(j, i)].conj()).norm() < 1e-15);
            }
        }
        assert!(matches!(
            toeplitz_assemble(&f, 2),
            Err(RcwaError::InsufficientCoefficients { .. })
        ));
    }

    #[test]
    fn constant_toeplitz_is_scaled_identity() {
        let cs = CrossSection::constant(500.0, c(4.0, 0.0));
        let t = slice_toeplitz(&cs, 2, FactorizationRule::Laurent).unwrap();
        assert!(linalg::is_diagonal(t.matrix().as_ref()));
        assert_eq!(t.matrix()[(3, 3)], c(0.25, 0.0));
        let alpha: Vec<Complex64> = (0..5).map(|i| c(i as f64 - 2.0, 0.0)).collect();
        let kt = linalg::scale_rows(&alpha, t.matrix().as_ref());
        let tk = linalg::scale_cols(t.matrix().as_ref(), &alpha);
        assert!(linalg::norm_max((&kt - &tk).as_ref()) == 0.0);
    }

    #[test]
    fn inverse_rule_is_inverse_of_eps_toeplitz() {
        let cs = half_split(500.0);
        let t = slice_toeplitz(&cs, 3, FactorizationRule::Inverse).unwrap();
        let e = toeplitz_assemble(&eps_fourier(&cs, 3).unwrap(), 3).unwrap();
        let prod = t.matrix() * e.matrix();
        let id = CMat::identity(7, 7);
        assert!(linalg::norm_max((&prod - &id).as_ref()) < 1e-12);
    }

    #[test]
    fn parseval_bound_tightens_with_m() {
        let cs = CrossSection::painted(
            500.0,
            c(1.0, 0.0),
            &[Interval::new(100.0, 260.0, c(2.25, 0.0)), Interval::new(300.0, 320.0, c(6.0, 1.0))],
        );
        // (1/L) int |1/eps|^2
        let total: f64 =
            cs.intervals().unwrap().iter().map(|iv| iv.width() / 500.0 * (1.0 / iv.eps.norm_sqr())).sum();
        let mut last = 0.0;
        for m in 0..12 {
            let f = inv_eps_fourier(&cs, m).unwrap();
            let s: f64 = f.as_slice().iter().map(|c| c.norm_sqr()).sum();
            assert!(s <= total * (1.0 + 1e-14));
            assert!(s >= last);
            last = s;
        }
        assert!(last > 0.97 * total);
    }

    proptest! {
        #[test]
        fn sampled_path_is_stable_under_oversampling(
            s in 0.0f64..0.9, phase in 0.0f64..6.3, base in 1.5f64..10.0, m in 0usize..6
        ) {
            let func = move |x: f64, _y: f64| {
                c(base + s * base * (2.0 * PI * x / 500.0 + phase).cos(), 0.1)
            };
            let cs = CrossSection::Sampled { period: 500.0, y: 0.0, func: std::sync::Arc::new(func) };
            let f8 = inv_eps_fourier_sampled(&cs, m, 8).unwrap();
            let f16 = inv_eps_fourier_sampled(&cs, m, 16).unwrap();
            for (x, y) in f8.as_slice().iter().zip(f16.as_slice()) {
                prop_assert!((x - y).norm() <= 1e-13 * f8.get(0).norm());
            }
        }

        #[test]
        fn real_profiles_have_conjugate_symmetric_coefficients(
            a in 0.0f64..500.0, w in 1.0f64..400.0, re in 0.5f64..20.0, m in 0usize..8
        ) {
            let cs = CrossSection::painted(500.0, c(1.0, 0.0), &[Interval::new(a, a + w, c(re, 0.0))]);
            let f = inv_eps_fourier(&cs, m).unwrap();
            for k in 0..=(2 * m as i64) {
                prop_assert!((f.get(-k) - f.get(k).conj()).norm() < 1e-14);
            }
        }
    }
}
