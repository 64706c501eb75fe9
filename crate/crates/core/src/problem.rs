//! Scattering problem description: incidence, cell geometry, permittivity
//! profiles, slice meshes, the Bloch mode basis and structural diagnostics.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{RcwaError, Result};

/// Relative tolerance used when comparing breakpoint and interface heights.
const HEIGHT_TOL: f64 = 1e-9;

/// Default relative tolerance of [`check_wood_anomaly`].
pub const WOOD_DEFAULT_TOL: f64 = 1e-8;

/// Upper (`x2 > H`) or lower (`x2 < -H`) half-space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Top,
    Bottom,
}

/// p-polarized plane wave incident from the upper half-space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncidentWave {
    wavelength: f64,
    theta: f64,
}

impl IncidentWave {
    /// `theta` is measured from the `x2` axis, in radians.
    pub fn new(wavelength_nm: f64, theta: f64) -> Result<Self> {
        if !(wavelength_nm > 0.0 && wavelength_nm.is_finite()) {
            return Err(RcwaError::invalid("wavelength", format!("{wavelength_nm} must be > 0")));
        }
        if !(theta.abs() < PI / 2.0) {
            return Err(RcwaError::invalid("theta", format!("|{theta}| must be < pi/2")));
        }
        Ok(Self { wavelength: wavelength_nm, theta })
    }

    pub fn from_degrees(wavelength_nm: f64, theta_deg: f64) -> Result<Self> {
        Self::new(wavelength_nm, theta_deg.to_radians())
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Free-space wavenumber `2 pi / lambda0`.
    pub fn kappa(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Bloch constant `kappa sqrt(eps_plus) sin(theta)`.
    ///
    /// A tiny imaginary part (below `1e-12` of the real part) is dropped; larger
    /// ones are rejected because the Fourier basis needs a real Bloch phase.
    pub fn alpha0(&self, eps_plus: Complex64) -> Result<f64> {
        if self.theta == 0.0 {
            return Ok(0.0);
        }
        let a = self.kappa() * eps_plus.sqrt() * self.theta.sin();
        if a.im == 0.0 || a.im.abs() < 1e-12 * a.re.abs() {
            Ok(a.re)
        } else {
            Err(RcwaError::ComplexBlochPhase { real: a.re, imag: a.im })
        }
    }
}

/// One period of the computational cell `[0, Lx] x [-H, H]` plus the half-space media.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GratingDomain {
    pub period: f64,
    pub half_height: f64,
    pub eps_plus: Complex64,
    pub eps_minus: Complex64,
}

impl GratingDomain {
    pub fn new(period: f64, half_height: f64, eps_plus: Complex64, eps_minus: Complex64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(RcwaError::invalid("period", format!("{period} must be > 0")));
        }
        if !(half_height > 0.0 && half_height.is_finite()) {
            return Err(RcwaError::invalid("half_height", format!("{half_height} must be > 0")));
        }
        for (name, e) in [("eps_plus", eps_plus), ("eps_minus", eps_minus)] {
            if e == Complex64::new(0.0, 0.0) || !e.is_finite() {
                return Err(RcwaError::invalid(name, format!("{e} is not a usable permittivity")));
            }
        }
        Ok(Self { period, half_height, eps_plus, eps_minus })
    }

    pub fn eps(&self, side: Side) -> Complex64 {
        match side {
            Side::Top => self.eps_plus,
            Side::Bottom => self.eps_minus,
        }
    }
}

/// Analysis regime recorded from user metadata; never inferred from the profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaterialCase {
    #[default]
    Unspecified,
    /// Real permittivity with positive real part everywhere.
    Lossless,
    /// Complex permittivity with positive real and imaginary parts inside the cell.
    Dissipative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub eps: Complex64,
}

impl Interval {
    pub fn new(start: f64, end: f64, eps: Complex64) -> Self {
        Self { start, end, eps }
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformLayer {
    pub thickness: f64,
    pub eps: Complex64,
}

/// Layer whose cross-section is piecewise constant in `x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LamellarLayer {
    pub thickness: f64,
    pub background: Complex64,
    /// Painted over the background in order; positions are taken modulo the period.
    pub inclusions: Vec<Interval>,
}

/// Triangular ridge standing on a strip of the same material.
///
/// The triangle base lies on `x2 = base_y` and spans `base_center -/+ base_width/2`;
/// the apex sits at `(base_center + apex_offset, base_y + height)`. The strip
/// occupies `[base_y - strip_thickness, base_y)`. Everything else inside the
/// cell is `ambient`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleOnStrip {
    pub base_center: f64,
    pub base_width: f64,
    pub apex_offset: f64,
    pub height: f64,
    pub base_y: f64,
    pub strip_thickness: f64,
    pub inclusion: Complex64,
    pub ambient: Complex64,
}

/// Permittivity given by a callable `eps(x1, x2)`, with its horizontal
/// interfaces declared so meshes can be aligned to them.
#[derive(Clone)]
pub struct SampledProfile {
    pub func: Arc<dyn Fn(f64, f64) -> Complex64 + Send + Sync>,
    pub interfaces: Vec<f64>,
}

impl fmt::Debug for SampledProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SampledProfile").field("interfaces", &self.interfaces).finish_non_exhaustive()
    }
}

/// `Lx`-periodic relative permittivity inside the cell.
///
/// Layered variants list their layers from the top down, starting at `top`.
/// Above the first layer the upper half-space permittivity applies and below
/// the last layer the lower one.
#[derive(Debug, Clone)]
pub enum PermittivityProfile {
    Stack { top: f64, layers: Vec<UniformLayer> },
    LamellarStack { top: f64, layers: Vec<LamellarLayer> },
    TriangleOnStrip(TriangleOnStrip),
    Sampled(SampledProfile),
}

impl PermittivityProfile {
    pub fn homogeneous() -> Self {
        Self::Stack { top: 0.0, layers: Vec::new() }
    }

    /// Permittivity at `(x1, x2)`. Outside `[-H, H]` the half-space values apply.
    pub fn eps_at(&self, domain: &GratingDomain, x1: f64, x2: f64) -> Complex64 {
        if x2 > domain.half_height {
            return domain.eps_plus;
        }
        if x2 < -domain.half_height {
            return domain.eps_minus;
        }
        match self {
            Self::Sampled(s) => (s.func)(x1.rem_euclid(domain.period), x2),
            _ => staircase_cross_section(self, domain, x2).eval(x1),
        }
    }

    /// Heights in `(-H, H)` where the permittivity jumps in `x2`.
    pub fn interfaces(&self, domain: &GratingDomain) -> Vec<f64> {
        let mut out = match self {
            Self::Stack { top, layers } => layer_faces(*top, layers.iter().map(|l| l.thickness)),
            Self::LamellarStack { top, layers } => {
                layer_faces(*top, layers.iter().map(|l| l.thickness))
            }
            Self::TriangleOnStrip(t) => {
                vec![t.base_y - t.strip_thickness, t.base_y, t.base_y + t.height]
            }
            Self::Sampled(s) => s.interfaces.clone(),
        };
        let h = domain.half_height;
        out.retain(|&y| y > -h * (1.0 - HEIGHT_TOL) && y < h * (1.0 - HEIGHT_TOL));
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() <= HEIGHT_TOL * h);
        out
    }
}

fn layer_faces(top: f64, thicknesses: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut faces = vec![top];
    let mut y = top;
    for t in thicknesses {
        y -= t;
        faces.push(y);
    }
    faces
}

/// Finds the layer containing `y` for layers stacked downward from `top`.
fn layer_at<T>(top: f64, layers: &[T], thickness: impl Fn(&T) -> f64, y: f64) -> Option<&T> {
    let mut upper = top;
    for layer in layers {
        let lower = upper - thickness(layer);
        if y < upper && y >= lower {
            return Some(layer);
        }
        upper = lower;
    }
    None
}

/// The permittivity along one horizontal line `x2 = y`, over one period.
#[derive(Clone)]
pub enum CrossSection {
    /// Piecewise constant: sorted, non-overlapping intervals covering `[0, period)`.
    Intervals { period: f64, intervals: Vec<Interval> },
    /// Sampled on demand.
    Sampled { period: f64, y: f64, func: Arc<dyn Fn(f64, f64) -> Complex64 + Send + Sync> },
}

impl fmt::Debug for CrossSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Intervals { period, intervals } => f
                .debug_struct("Intervals")
                .field("period", period)
                .field("intervals", intervals)
                .finish(),
            Self::Sampled { period, y, .. } => {
                f.debug_struct("Sampled").field("period", period).field("y", y).finish_non_exhaustive()
            }
        }
    }
}

impl PartialEq for CrossSection {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

/// Bitwise identity of a cross-section, for caching.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CrossSectionKey {
    Intervals(Vec<[u64; 4]>),
    Sampled(u64),
}

impl CrossSection {
    pub fn constant(period: f64, eps: Complex64) -> Self {
        Self::Intervals { period, intervals: vec![Interval::new(0.0, period, eps)] }
    }

    /// Paints `inclusions` (taken modulo the period) over a uniform background.
    pub fn painted(period: f64, background: Complex64, inclusions: &[Interval]) -> Self {
        let mut intervals = vec![Interval::new(0.0, period, background)];
        for inc in inclusions {
            if !(inc.end > inc.start) {
                continue;
            }
            if inc.width() >= period {
                intervals = vec![Interval::new(0.0, period, inc.eps)];
                continue;
            }
            let start = inc.start.rem_euclid(period);
            let end = start + inc.width();
            if end <= period {
                paint(&mut intervals, start, end, inc.eps);
            } else {
                paint(&mut intervals, start, period, inc.eps);
                paint(&mut intervals, 0.0, end - period, inc.eps);
            }
        }
        let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
        for iv in intervals {
            if iv.width() <= 0.0 {
                continue;
            }
            match merged.last_mut() {
                Some(last) if last.eps == iv.eps => last.end = iv.end,
                _ => merged.push(iv),
            }
        }
        Self::Intervals { period, intervals: merged }
    }

    pub fn period(&self) -> f64 {
        match self {
            Self::Intervals { period, .. } | Self::Sampled { period, .. } => *period,
        }
    }

    pub fn intervals(&self) -> Option<&[Interval]> {
        match self {
            Self::Intervals { intervals, .. } => Some(intervals),
            Self::Sampled { .. } => None,
        }
    }

    /// `Some(eps)` when the cross-section is a single constant.
    pub fn as_constant(&self) -> Option<Complex64> {
        match self {
            Self::Intervals { intervals, .. } if intervals.len() == 1 => Some(intervals[0].eps),
            _ => None,
        }
    }

    pub fn eval(&self, x1: f64) -> Complex64 {
        match self {
            Self::Intervals { period, intervals } => {
                let x = x1.rem_euclid(*period);
                let idx = intervals.partition_point(|iv| iv.end <= x);
                intervals[idx.min(intervals.len() - 1)].eps
            }
            Self::Sampled { period, y, func } => func(x1.rem_euclid(*period), *y),
        }
    }

    pub fn key(&self) -> CrossSectionKey {
        match self {
            Self::Intervals { intervals, .. } => CrossSectionKey::Intervals(
                intervals
                    .iter()
                    .map(|iv| {
                        [iv.start.to_bits(), iv.end.to_bits(), iv.eps.re.to_bits(), iv.eps.im.to_bits()]
                    })
                    .collect(),
            ),
            Self::Sampled { y, .. } => CrossSectionKey::Sampled(y.to_bits()),
        }
    }
}

fn paint(intervals: &mut Vec<Interval>, start: f64, end: f64, eps: Complex64) {
    let mut out = Vec::with_capacity(intervals.len() + 2);
    for iv in intervals.iter() {
        if iv.end <= start || iv.start >= end {
            out.push(*iv);
            continue;
        }
        if iv.start < start {
            out.push(Interval::new(iv.start, start, iv.eps));
        }
        if iv.end > end {
            out.push(Interval::new(end, iv.end, iv.eps));
        }
    }
    out.push(Interval::new(start, end, eps));
    out.sort_by(|a, b| a.start.total_cmp(&b.start));
    *intervals = out;
}

/// Cross-section `x1 -> eps(x1, y)` used for the slice whose midline is `y`.
pub fn staircase_cross_section(
    profile: &PermittivityProfile,
    domain: &GratingDomain,
    y: f64,
) -> CrossSection {
    let period = domain.period;
    let fill = || if y >= 0.0 { domain.eps_plus } else { domain.eps_minus };
    match profile {
        PermittivityProfile::Stack { top, layers } => {
            let eps = match layer_at(*top, layers, |l| l.thickness, y) {
                Some(l) => l.eps,
                None if y >= *top => domain.eps_plus,
                None => domain.eps_minus,
            };
            CrossSection::constant(period, eps)
        }
        PermittivityProfile::LamellarStack { top, layers } => {
            match layer_at(*top, layers, |l| l.thickness, y) {
                Some(l) => CrossSection::painted(period, l.background, &l.inclusions),
                None if y >= *top => CrossSection::constant(period, domain.eps_plus),
                None => CrossSection::constant(period, domain.eps_minus),
            }
        }
        PermittivityProfile::TriangleOnStrip(t) => {
            if y >= t.base_y - t.strip_thickness && y < t.base_y {
                CrossSection::constant(period, t.inclusion)
            } else if y >= t.base_y && y < t.base_y + t.height {
                let s = (y - t.base_y) / t.height;
                let apex = t.base_center + t.apex_offset;
                let left0 = t.base_center - 0.5 * t.base_width;
                let right0 = t.base_center + 0.5 * t.base_width;
                let left = left0 + s * (apex - left0);
                let right = right0 + s * (apex - right0);
                CrossSection::painted(period, t.ambient, &[Interval::new(left, right, t.inclusion)])
            } else if y.abs() <= domain.half_height {
                CrossSection::constant(period, t.ambient)
            } else {
                CrossSection::constant(period, fill())
            }
        }
        PermittivityProfile::Sampled(s) => CrossSection::Sampled { period, y, func: s.func.clone() },
    }
}

/// Horizontal slicing `-H = h_0 < h_1 < ... < h_S = H`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceMesh {
    breakpoints: Vec<f64>,
}

impl SliceMesh {
    pub fn from_breakpoints(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(RcwaError::invalid("breakpoints", "need at least two"));
        }
        for (i, w) in breakpoints.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(RcwaError::NonMonotoneMesh { index: i + 1 });
            }
        }
        Ok(Self { breakpoints })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn num_slices(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// `(bottom, top)` of slice `j` (0-based, counted upward).
    pub fn slice(&self, j: usize) -> (f64, f64) {
        (self.breakpoints[j], self.breakpoints[j + 1])
    }

    pub fn thickness(&self, j: usize) -> f64 {
        self.breakpoints[j + 1] - self.breakpoints[j]
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        0.5 * (self.breakpoints[j] + self.breakpoints[j + 1])
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.num_slices()).map(|j| self.midpoint(j)).collect()
    }

    /// Maximum slice thickness `h`.
    pub fn h(&self) -> f64 {
        (0..self.num_slices()).map(|j| self.thickness(j)).fold(0.0, f64::max)
    }

    pub fn bottom(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn top(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Index of the slice containing `x2` (faces belong to the slice above, the top face to the last slice).
    pub fn locate(&self, x2: f64) -> Option<usize> {
        if x2 < self.bottom() || x2 > self.top() {
            return None;
        }
        let idx = self.breakpoints.partition_point(|&b| b <= x2);
        Some(idx.saturating_sub(1).min(self.num_slices() - 1))
    }
}

/// How to build a [`SliceMesh`].
#[derive(Debug, Clone, PartialEq)]
pub enum MeshSpec {
    /// Slices no thicker than the target.
    Uniform(f64),
    /// Breakpoints used verbatim.
    Explicit(Vec<f64>),
}

/// Builds a slice mesh over `[-H, H]`.
///
/// With `align_to`, the declared horizontal interfaces of the profile become
/// breakpoints and every gap between them is meshed uniformly; explicit
/// breakpoints are never modified.
pub fn build_slice_mesh(
    domain: &GratingDomain,
    spec: &MeshSpec,
    align_to: Option<&PermittivityProfile>,
) -> Result<SliceMesh> {
    let h = domain.half_height;
    match spec {
        MeshSpec::Explicit(b) => SliceMesh::from_breakpoints(b.clone()),
        MeshSpec::Uniform(target) => {
            if !(*target > 0.0 && target.is_finite()) {
                return Err(RcwaError::invalid("target_h", format!("{target} must be > 0")));
            }
            let mut fixed = vec![-h];
            if let Some(profile) = align_to {
                fixed.extend(profile.interfaces(domain));
            }
            fixed.push(h);
            let mut breakpoints = vec![-h];
            for w in fixed.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                let n = slice_count(hi - lo, *target);
                for k in 1..=n {
                    breakpoints.push(if k == n { hi } else { lo + (hi - lo) * k as f64 / n as f64 });
                }
            }
            SliceMesh::from_breakpoints(breakpoints)
        }
    }
}

fn slice_count(length: f64, target: f64) -> usize {
    let ratio = length / target;
    (ratio * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Truncated Bloch basis `exp(i alpha_n x1)`, `n = -M..=M`, with the vertical
/// wavenumbers of both half-spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBasis {
    pub m: usize,
    pub kappa: f64,
    pub alpha0: f64,
    pub period: f64,
    pub eps_plus: Complex64,
    pub eps_minus: Complex64,
    pub alpha: Vec<f64>,
    pub beta_plus: Vec<Complex64>,
    pub beta_minus: Vec<Complex64>,
}

impl ModeBasis {
    pub fn len(&self) -> usize {
        2 * self.m + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Vector index of order `n`.
    pub fn index(&self, n: i64) -> usize {
        (n + self.m as i64) as usize
    }

    pub fn order(&self, index: usize) -> i64 {
        index as i64 - self.m as i64
    }

    pub fn orders(&self) -> impl Iterator<Item = i64> {
        let m = self.m as i64;
        -m..=m
    }

    pub fn beta(&self, side: Side) -> &[Complex64] {
        match side {
            Side::Top => &self.beta_plus,
            Side::Bottom => &self.beta_minus,
        }
    }

    pub fn eps(&self, side: Side) -> Complex64 {
        match side {
            Side::Top => self.eps_plus,
            Side::Bottom => self.eps_minus,
        }
    }

    /// Whether order `index` propagates in the given half-space.
    pub fn is_propagating(&self, side: Side, index: usize) -> bool {
        let b = self.beta(side)[index];
        b.re > 0.0 && b.re >= b.im.abs()
    }
}

/// Vertical wavenumber `sqrt(kappa^2 eps - alpha^2)` on the branch with
/// non-negative real and imaginary parts.
pub fn vertical_wavenumber(kappa: f64, eps: Complex64, alpha: f64) -> Complex64 {
    let z = kappa * kappa * eps - alpha * alpha;
    let b = if z.im == 0.0 {
        if z.re >= 0.0 {
            Complex64::new(z.re.sqrt(), 0.0)
        } else {
            Complex64::new(0.0, (-z.re).sqrt())
        }
    } else {
        z.sqrt()
    };
    if b.im < 0.0 { -b } else { b }
}

pub fn make_mode_basis(incident: &IncidentWave, domain: &GratingDomain, m: usize) -> Result<ModeBasis> {
    let kappa = incident.kappa();
    let alpha0 = incident.alpha0(domain.eps_plus)?;
    let grating = 2.0 * PI / domain.period;
    let alpha: Vec<f64> = (-(m as i64)..=m as i64).map(|n| alpha0 + grating * n as f64).collect();
    let beta_plus = alpha.iter().map(|&a| vertical_wavenumber(kappa, domain.eps_plus, a)).collect();
    let beta_minus = alpha.iter().map(|&a| vertical_wavenumber(kappa, domain.eps_minus, a)).collect();
    Ok(ModeBasis {
        m,
        kappa,
        alpha0,
        period: domain.period,
        eps_plus: domain.eps_plus,
        eps_minus: domain.eps_minus,
        alpha,
        beta_plus,
        beta_minus,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WoodHit {
    pub order: i64,
    pub side: Side,
    /// `|alpha_n^2 - kappa^2 eps| / (kappa^2 |eps|)`
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WoodReport {
    pub hits: Vec<WoodHit>,
    /// Smallest relative gap over all orders and both sides.
    pub min_gap: f64,
}

impl WoodReport {
    pub fn is_clear(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Lists orders that graze (`alpha_n^2 ~ kappa^2 eps_pm`) in either half-space.
pub fn check_wood_anomaly(basis: &ModeBasis, tol: f64) -> WoodReport {
    let k2 = basis.kappa * basis.kappa;
    let mut report = WoodReport { hits: Vec::new(), min_gap: f64::INFINITY };
    for side in [Side::Top, Side::Bottom] {
        let eps = basis.eps(side);
        for (i, &a) in basis.alpha.iter().enumerate() {
            let gap = (a * a - k2 * eps).norm() / (k2 * eps.norm());
            report.min_gap = report.min_gap.min(gap);
            if gap < tol {
                report.hits.push(WoodHit { order: basis.order(i), side, relative_gap: gap });
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonTrappingReport {
    /// `Re(eps)` is non-decreasing upward along every sampled column.
    pub increasing: bool,
    /// `Re(eps)` is non-increasing upward along every sampled column.
    pub decreasing: bool,
    /// Column with the largest violation of the better-satisfied direction.
    pub worst_column: Option<f64>,
    pub worst_violation: f64,
}

impl NonTrappingReport {
    pub fn pass(&self) -> bool {
        self.increasing || self.decreasing
    }
}

/// Samples `Re(eps)` on `samples_x` columns and `samples_per_slice` points per
/// slice and checks monotonicity in `x2`.
pub fn check_nontrapping(
    profile: &PermittivityProfile,
    domain: &GratingDomain,
    mesh: &SliceMesh,
    samples_x: usize,
    samples_per_slice: usize,
) -> Result<NonTrappingReport> {
    if samples_per_slice < 2 {
        return Err(RcwaError::invalid("samples_per_slice", "need at least 2"));
    }
    if samples_x == 0 {
        return Err(RcwaError::invalid("samples_x", "need at least 1"));
    }
    let mut heights = Vec::with_capacity(mesh.num_slices() * samples_per_slice);
    for j in 0..mesh.num_slices() {
        let (lo, hi) = mesh.slice(j);
        for k in 0..samples_per_slice {
            heights.push(lo + (hi - lo) * (k as f64 + 0.5) / samples_per_slice as f64);
        }
    }
    let mut inc_worst = (0.0f64, None);
    let mut dec_worst = (0.0f64, None);
    for ix in 0..samples_x {
        let x1 = domain.period * (ix as f64 + 0.5) / samples_x as f64;
        let column: Vec<f64> = heights.iter().map(|&y| profile.eps_at(domain, x1, y).re).collect();
        let mut drop = 0.0f64;
        let mut rise = 0.0f64;
        for w in column.windows(2) {
            drop = drop.max(w[0] - w[1]);
            rise = rise.max(w[1] - w[0]);
        }
        if drop > inc_worst.0 {
            inc_worst = (drop, Some(x1));
        }
        if rise > dec_worst.0 {
            dec_worst = (rise, Some(x1));
        }
    }
    let increasing = inc_worst.0 == 0.0;
    let decreasing = dec_worst.0 == 0.0;
    let (worst_violation, worst_column) =
        if inc_worst.0 <= dec_worst.0 { inc_worst } else { dec_worst };
    Ok(NonTrappingReport { increasing, decreasing, worst_column, worst_violation })
}

/// Complete scattering problem.
#[derive(Debug, Clone)]
pub struct GratingProblem {
    pub domain: GratingDomain,
    pub incident: IncidentWave,
    pub profile: PermittivityProfile,
    pub case: MaterialCase,
}

impl GratingProblem {
    pub fn new(domain: GratingDomain, incident: IncidentWave, profile: PermittivityProfile) -> Self {
        Self { domain, incident, profile, case: MaterialCase::Unspecified }
    }

    pub fn with_case(mut self, case: MaterialCase) -> Self {
        self.case = case;
        self
    }

    pub fn mode_basis(&self, m: usize) -> Result<ModeBasis> {
        make_mode_basis(&self.incident, &self.domain, m)
    }

    /// Uniform mesh aligned to the profile's interfaces.
    pub fn aligned_mesh(&self, target_h: f64) -> Result<SliceMesh> {
        build_slice_mesh(&self.domain, &MeshSpec::Uniform(target_h), Some(&self.profile))
    }

    pub fn cross_section(&self, y: f64) -> CrossSection {
        staircase_cross_section(&self.profile, &self.domain, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn air_domain(period: f64) -> GratingDomain {
        GratingDomain::new(period, 50.0, c(1.0, 0.0), c(1.0, 0.0)).unwrap()
    }

    #[test]
    fn normal_incidence_single_mode() {
        let inc = IncidentWave::new(600.0, 0.0).unwrap();
        let b = make_mode_basis(&inc, &air_domain(500.0), 0).unwrap();
        assert_eq!(b.alpha, vec![0.0]);
        assert!((b.beta_plus[0].re - 1.04720e-2).abs() < 1e-7);
        assert_eq!(b.beta_plus[0].im, 0.0);
    }

    #[test]
    fn first_order_is_evanescent_for_short_period() {
        let inc = IncidentWave::new(600.0, 0.0).unwrap();
        let b = make_mode_basis(&inc, &air_domain(500.0), 1).unwrap();
        let beta1 = b.beta_plus[b.index(1)];
        // i sqrt(alpha_1^2 - kappa^2), evaluated independently
        let k = 2.0 * PI / 600.0;
        let a1 = 2.0 * PI / 500.0;
        let expected = (a1 * a1 - k * k).sqrt();
        assert_eq!(beta1.re, 0.0);
        assert!((beta1.im - expected).abs() < 1e-15);
        assert!((beta1.im - 6.946e-3).abs() < 1e-6);
        assert!(!b.is_propagating(Side::Top, b.index(1)));
        assert!(b.is_propagating(Side::Top, b.index(0)));
    }

    #[test]
    fn oblique_alpha0() {
        let inc = IncidentWave::new(600.0, PI / 6.0).unwrap();
        let a0 = inc.alpha0(c(1.0, 0.0)).unwrap();
        assert!((a0 - inc.kappa() / 2.0).abs() < 1e-15);
        assert!((a0 - 5.236e-3).abs() < 1e-6);
    }

    #[test]
    fn complex_bloch_phase_rejected() {
        let inc = IncidentWave::new(600.0, 0.3).unwrap();
        assert!(matches!(inc.alpha0(c(1.0, 1e-6)), Err(RcwaError::ComplexBlochPhase { .. })));
        assert!(inc.alpha0(c(1.0, 1e-20)).is_ok());
        // normal incidence needs no projection
        assert_eq!(IncidentWave::new(600.0, 0.0).unwrap().alpha0(c(1.0, 1e-6)).unwrap(), 0.0);
    }

    #[test]
    fn invalid_incidence() {
        assert!(IncidentWave::new(-1.0, 0.0).is_err());
        assert!(IncidentWave::new(600.0, PI / 2.0).is_err());
    }

    #[test]
    fn uniform_mesh_counts() {
        let d = air_domain(500.0);
        let mesh = build_slice_mesh(&d, &MeshSpec::Uniform(10.0), None).unwrap();
        assert_eq!(mesh.num_slices(), 10);
        let local: Vec<f64> = mesh.midpoints().iter().map(|m| m + 50.0).collect();
        for (j, m) in local.iter().enumerate() {
            assert!((m - (5.0 + 10.0 * j as f64)).abs() < 1e-12);
        }
        let d = GratingDomain::new(500.0, 850.0, c(1.0, 0.0), c(1.0, 0.0)).unwrap();
        let mesh = build_slice_mesh(&d, &MeshSpec::Uniform(50.0), None).unwrap();
        assert_eq!(mesh.num_slices(), 34);
        assert!((mesh.h() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn explicit_mesh_is_verbatim() {
        let d = air_domain(500.0);
        let mesh = build_slice_mesh(&d, &MeshSpec::Explicit(vec![-50.0, 0.0, 50.0]), None).unwrap();
        assert_eq!(mesh.breakpoints(), &[-50.0, 0.0, 50.0]);
        let err = build_slice_mesh(&d, &MeshSpec::Explicit(vec![-50.0, 10.0, 0.0, 50.0]), None);
        assert_eq!(err, Err(RcwaError::NonMonotoneMesh { index: 2 }));
    }

    #[test]
    fn aligned_mesh_hits_interfaces() {
        let d = air_domain(500.0);
        let profile = PermittivityProfile::Stack {
            top: 13.0,
            layers: vec![UniformLayer { thickness: 7.3, eps: c(4.0, 0.0) }],
        };
        let mesh = build_slice_mesh(&d, &MeshSpec::Uniform(3.0), Some(&profile)).unwrap();
        for y in [13.0, 13.0 - 7.3] {
            assert!(mesh.breakpoints().iter().any(|&b| (b - y).abs() < 1e-12), "{y}");
        }
        assert!(mesh.h() <= 3.0);
    }

    fn symmetric_triangle() -> TriangleOnStrip {
        TriangleOnStrip {
            base_center: 250.0,
            base_width: 250.0,
            apex_offset: 0.0,
            height: 100.0,
            base_y: 0.0,
            strip_thickness: 100.0,
            inclusion: c(15.0, 4.0),
            ambient: c(1.0, 1e-6),
        }
    }

    #[test]
    fn triangle_cross_section_width() {
        let d = GratingDomain::new(500.0, 850.0, c(1.0, 1e-6), c(1.0, 1e-6)).unwrap();
        let p = PermittivityProfile::TriangleOnStrip(symmetric_triangle());
        let cs = staircase_cross_section(&p, &d, 5.0);
        let iv = cs.intervals().unwrap();
        assert_eq!(iv.len(), 3);
        assert!((iv[1].start - 131.25).abs() < 1e-12);
        assert!((iv[1].end - 368.75).abs() < 1e-12);
        assert!((iv[1].width() - 250.0 * (1.0 - 5.0 / 100.0)).abs() < 1e-12);
        assert_eq!(iv[1].eps, c(15.0, 4.0));

        let above = staircase_cross_section(&p, &d, 120.0);
        assert_eq!(above.as_constant(), Some(c(1.0, 1e-6)));
        let strip = staircase_cross_section(&p, &d, -50.0);
        assert_eq!(strip.as_constant(), Some(c(15.0, 4.0)));
    }

    #[test]
    fn asymmetric_triangle_apex() {
        let d = GratingDomain::new(500.0, 800.0, c(1.0, 1e-6), c(1.0, 1e-6)).unwrap();
        let t = TriangleOnStrip { apex_offset: 62.5, height: 50.0, strip_thickness: 50.0, ..symmetric_triangle() };
        let p = PermittivityProfile::TriangleOnStrip(t);
        let iv = staircase_cross_section(&p, &d, 49.999).intervals().unwrap().to_vec();
        let mid = 0.5 * (iv[1].start + iv[1].end);
        assert!((mid - 312.5).abs() < 0.01);
    }

    #[test]
    fn stack_layer_is_constant() {
        let d = air_domain(500.0);
        let p = PermittivityProfile::Stack {
            top: 10.0,
            layers: vec![UniformLayer { thickness: 20.0, eps: c(4.0, 0.0) }],
        };
        assert_eq!(staircase_cross_section(&p, &d, 0.0).as_constant(), Some(c(4.0, 0.0)));
        assert_eq!(staircase_cross_section(&p, &d, 20.0).as_constant(), Some(c(1.0, 0.0)));
    }

    #[test]
    fn painting_wraps_and_merges() {
        let cs = CrossSection::painted(
            10.0,
            c(1.0, 0.0),
            &[Interval::new(8.0, 12.0, c(2.0, 0.0)), Interval::new(4.0, 6.0, c(1.0, 0.0))],
        );
        let iv = cs.intervals().unwrap();
        assert_eq!(iv.len(), 3);
        assert_eq!((iv[0].start, iv[0].end), (0.0, 2.0));
        assert_eq!((iv[2].start, iv[2].end), (8.0, 10.0));
        assert_eq!(cs.eval(1.0), c(2.0, 0.0));
        assert_eq!(cs.eval(5.0), c(1.0, 0.0));
    }

    #[test]
    fn wood_anomaly_flags_grazing_orders() {
        let inc = IncidentWave::new(600.0, 0.0).unwrap();
        let b = make_mode_basis(&inc, &air_domain(600.0), 2).unwrap();
        let r = check_wood_anomaly(&b, WOOD_DEFAULT_TOL);
        let mut orders: Vec<i64> = r.hits.iter().filter(|h| h.side == Side::Top).map(|h| h.order).collect();
        orders.sort();
        assert_eq!(orders, vec![-1, 1]);

        let b = make_mode_basis(&inc, &air_domain(500.0), 5).unwrap();
        let r = check_wood_anomaly(&b, 1e-6);
        assert!(r.is_clear());
        // closest order is n = 1: (alpha_1^2 - kappa^2)/kappa^2 = (6/5)^2 - 1
        assert!((r.min_gap - 0.44).abs() < 1e-12);

        let d = GratingDomain::new(600.0, 50.0, c(1.0, 1e-6), c(1.0, 1e-6)).unwrap();
        let b = make_mode_basis(&inc, &d, 2).unwrap();
        assert!(check_wood_anomaly(&b, WOOD_DEFAULT_TOL).is_clear());
    }

    #[test]
    fn nontrapping_diagnostic() {
        let d = air_domain(500.0);
        let mesh = build_slice_mesh(&d, &MeshSpec::Uniform(5.0), None).unwrap();
        let increasing = PermittivityProfile::Stack {
            top: 50.0,
            layers: vec![
                UniformLayer { thickness: 50.0, eps: c(1.0, 0.0) },
                UniformLayer { thickness: 50.0, eps: c(0.5, 0.0) },
            ],
        };
        let r = check_nontrapping(&increasing, &d, &mesh, 64, 4).unwrap();
        assert!(r.pass() && r.increasing && !r.decreasing);

        let r = check_nontrapping(&PermittivityProfile::homogeneous(), &d, &mesh, 64, 4).unwrap();
        assert!(r.increasing && r.decreasing);

        let d = GratingDomain::new(500.0, 850.0, c(1.0, 1e-6), c(1.0, 1e-6)).unwrap();
        let mesh = build_slice_mesh(&d, &MeshSpec::Uniform(10.0), None).unwrap();
        let p = PermittivityProfile::TriangleOnStrip(symmetric_triangle());
        let r = check_nontrapping(&p, &d, &mesh, 64, 4).unwrap();
        assert!(!r.pass());
        assert!(r.worst_column.is_some());
        assert!((r.worst_violation - 14.0).abs() < 1e-9);
        assert!(check_nontrapping(&p, &d, &mesh, 64, 1).is_err());
    }
}
