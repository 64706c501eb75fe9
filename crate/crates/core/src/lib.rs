//! Rigorous coupled wave approach (RCWA) for p-polarized plane waves incident on
//! gratings that are periodic in `x1` and invariant in `x3`.
//!
//! The unknown is the magnetic field component `u = H3`, which satisfies
//! `div(eps^-1 grad u) + kappa^2 u = 0` with quasi-periodic boundary conditions.
//! The solver slices the computational cell `[0, Lx] x [-H, H]` horizontally,
//! replaces the permittivity in every slice by its value on the slice midline,
//! expands the field in `2M + 1` Bloch modes and solves the resulting modal
//! ODE system exactly inside each slice. Slices are stitched with a scattering
//! matrix recursion.
//!
//! All lengths are in nanometres and wavenumbers in inverse nanometres.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod fourier;
pub(crate) mod linalg;
pub mod problem;
pub mod reference;
pub mod slicesolver;
pub mod stitcher;

pub use error::{RcwaError, Result};
pub use num_complex::Complex64;

pub use analysis::{
    dtn_apply, efficiencies, energy_balance, galerkin_residual, reconstruct_field, rel_error, rel_l2_error,
    EfficiencyTable, ErrorNorm, FieldGrid, FieldKind, FieldRequest, Side,
};
pub use fourier::{inv_eps_fourier, toeplitz_assemble, FactorizationRule, FourierCoeffs, ToeplitzFactor};
pub use problem::{
    build_slice_mesh, check_nontrapping, check_wood_anomaly, make_mode_basis,
    staircase_cross_section, CrossSection, GratingDomain, GratingProblem, IncidentWave, Interval,
    LamellarLayer, MaterialCase, MeshSpec, ModeBasis, PermittivityProfile, SliceMesh,
    TriangleOnStrip, UniformLayer,
};
pub use reference::{planar_solution, planar_tmm, PlanarLayer, PlanarResult, PlanarStack};
pub use slicesolver::{build_a, eigensolve, slice_field, ModalAmplitudes, SliceModes, SliceOperator};
pub use stitcher::{
    dense_solve, layer_smatrix, solve_grating, solve_grating_with, star, SMatrix, ScatterSolution, SolveOptions,
    SolvedLayer,
};

/// Imaginary unit.
pub const I: Complex64 = Complex64::new(0.0, 1.0);
