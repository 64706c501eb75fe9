//! WebAssembly bindings for a single-page grating demo.
//!
//! The page drives a triangular grating on a strip in air and can ask for
//! diffraction efficiencies, the field intensity over the cell, or the error
//! of successive truncation orders against the largest one.

use rcwa::problem::TriangleOnStrip;
use rcwa::{
    efficiencies, reconstruct_field, rel_l2_error, solve_grating, Complex64, FieldKind, FieldRequest, GratingDomain,
    GratingProblem, IncidentWave, PermittivityProfile, RcwaError, ScatterSolution,
};
use wasm_bindgen::prelude::*;

const PERIOD_NM: f64 = 500.0;
const AMBIENT: Complex64 = Complex64::new(1.0, 1e-6);

fn js_err(e: RcwaError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Grating {
    problem: GratingProblem,
}

#[wasm_bindgen]
impl Grating {
    /// Triangle of base `Lx/2` centred in a 500 nm period, on a strip of the same material.
    #[wasm_bindgen(constructor)]
    pub fn new(
        wavelength_nm: f64,
        theta_deg: f64,
        eps_re: f64,
        eps_im: f64,
        height_nm: f64,
        strip_nm: f64,
        apex_offset_nm: f64,
    ) -> Result<Grating, JsError> {
        Self::build(wavelength_nm, theta_deg, Complex64::new(eps_re, eps_im), height_nm, strip_nm, apex_offset_nm)
            .map_err(js_err)
    }

    /// Flattened `[order, R, T]` triples of the propagating orders, followed by `[R_total, T_total, A]`.
    pub fn efficiencies(&self, m: usize, slice_nm: f64) -> Result<Vec<f64>, JsError> {
        let sol = self.solve(m, slice_nm).map_err(js_err)?;
        let e = efficiencies(&sol);
        let mut out = Vec::new();
        for (i, &n) in e.orders.iter().enumerate() {
            if e.reflected[i] > 0.0 || e.transmitted[i] > 0.0 {
                out.extend([n as f64, e.reflected[i], e.transmitted[i]]);
            }
        }
        out.extend([e.total_reflected, e.total_transmitted, e.absorption]);
        Ok(out)
    }

    /// `|H3|^2` on `nz` rows (top to bottom) of `nx` samples over one period.
    pub fn intensity(&self, m: usize, slice_nm: f64, nx: usize, nz: usize) -> Result<Vec<f64>, JsError> {
        let sol = self.solve(m, slice_nm).map_err(js_err)?;
        let h = self.problem.domain.half_height;
        let grid = reconstruct_field(&sol, &FieldRequest::uniform(nx, h, -h, nz, FieldKind::Total));
        Ok(grid.values.iter().map(|v| v.norm_sqr()).collect())
    }

    /// Relative L2 error of `M = 1..m_max-1` against the `m_max` solution.
    pub fn convergence(&self, m_max: usize, slice_nm: f64) -> Result<Vec<f64>, JsError> {
        let reference = self.solve(m_max, slice_nm).map_err(js_err)?;
        (1..m_max)
            .map(|m| {
                let sol = self.solve(m, slice_nm)?;
                rel_l2_error(&sol, &reference)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn half_height(&self) -> f64 {
        self.problem.domain.half_height
    }
}

impl Grating {
    fn build(
        wavelength_nm: f64,
        theta_deg: f64,
        eps: Complex64,
        height_nm: f64,
        strip_nm: f64,
        apex_offset_nm: f64,
    ) -> Result<Self, RcwaError> {
        let half_height = height_nm + strip_nm + 0.5 * wavelength_nm;
        let domain = GratingDomain::new(PERIOD_NM, half_height, AMBIENT, AMBIENT)?;
        let incident = IncidentWave::from_degrees(wavelength_nm, theta_deg)?;
        let profile = PermittivityProfile::TriangleOnStrip(TriangleOnStrip {
            base_center: 0.5 * PERIOD_NM,
            base_width: 0.5 * PERIOD_NM,
            apex_offset: apex_offset_nm,
            height: height_nm,
            base_y: 0.0,
            strip_thickness: strip_nm,
            inclusion: eps,
            ambient: AMBIENT,
        });
        Ok(Self { problem: GratingProblem::new(domain, incident, profile) })
    }

    fn solve(&self, m: usize, slice_nm: f64) -> Result<ScatterSolution, RcwaError> {
        let mesh = self.problem.aligned_mesh(slice_nm)?;
        solve_grating(&self.problem, m, &mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dielectric() -> Grating {
        Grating::build(600.0, 0.0, Complex64::new(15.0, 4.0), 100.0, 100.0, 0.0).unwrap()
    }

    #[test]
    fn efficiencies_are_passive() {
        let out = dielectric().efficiencies(6, 10.0).unwrap();
        let n = out.len();
        let (r, t, a) = (out[n - 3], out[n - 2], out[n - 1]);
        assert!(r > 0.0 && t > 0.0 && a > 0.0 && (r + t + a - 1.0).abs() < 1e-12);
        assert_eq!((n - 3) % 3, 0);
    }

    #[test]
    fn intensity_grid_shape() {
        let g = dielectric();
        let v = g.intensity(4, 20.0, 8, 6).unwrap();
        assert_eq!(v.len(), 48);
        assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn convergence_curve_decreases_overall() {
        let errs = dielectric().convergence(8, 20.0).unwrap();
        assert_eq!(errs.len(), 7);
        assert!(errs[6] < errs[0]);
    }
}
