//! Log-log least-squares slopes of convergence records.

use std::str::FromStr;

use crate::error::{HarnessError, Result};
use crate::sweep::ConvergenceRecord;

/// Plateau threshold: trailing errors within this relative distance of the last one are saturated.
pub const PLATEAU_RELATIVE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    H,
    M,
}

impl FromStr for Axis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h" | "h_nm" => Ok(Self::H),
            "m" => Ok(Self::M),
            other => Err(HarnessError::Fit(format!("unknown axis `{other}` (expected h or m)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlateauFilter {
    None,
    /// Drops the trailing run of at least two points whose errors lie within
    /// [`PLATEAU_RELATIVE`] of the final error.
    #[default]
    Trailing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

fn abscissa(rec: &ConvergenceRecord, axis: Axis) -> f64 {
    match axis {
        Axis::H => rec.h_nm,
        Axis::M => rec.m as f64,
    }
}

/// Records ordered from coarse to fine along `axis`, with unusable errors removed.
pub fn refinement_order(records: &[ConvergenceRecord], axis: Axis) -> Vec<ConvergenceRecord> {
    let mut v: Vec<ConvergenceRecord> = records
        .iter()
        .filter(|r| r.rel_l2_error.is_finite() && r.rel_l2_error > 0.0 && abscissa(r, axis) > 0.0)
        .cloned()
        .collect();
    match axis {
        Axis::H => v.sort_by(|a, b| b.h_nm.total_cmp(&a.h_nm)),
        Axis::M => v.sort_by_key(|r| r.m),
    }
    v
}

/// Length of the pre-plateau prefix of errors given in refinement order.
pub fn pre_plateau_len(errors: &[f64], filter: PlateauFilter) -> usize {
    let n = errors.len();
    if filter == PlateauFilter::None || n < 2 {
        return n;
    }
    let last = errors[n - 1];
    let mut start = n - 1;
    while start > 0 && ((errors[start - 1] - last) / last).abs() < PLATEAU_RELATIVE {
        start -= 1;
    }
    if n - start >= 2 { start } else { n }
}

/// Ordinary least squares of `log(error)` against `log(x)`.
///
/// The fit is made against the raw axis value, so error decreasing under
/// refinement gives a negative slope for `M` and a positive one for `h`.
pub fn fit_slope(records: &[ConvergenceRecord], axis: Axis, filter: PlateauFilter) -> Result<SlopeFit> {
    let other_axis_values = |r: &ConvergenceRecord| match axis {
        Axis::H => r.m as f64,
        Axis::M => r.h_nm,
    };
    if let Some(first) = records.first() {
        if records.iter().any(|r| other_axis_values(r) != other_axis_values(first)) {
            return Err(HarnessError::Fit("records mix several values of the fixed parameter".into()));
        }
    }
    let ordered = refinement_order(records, axis);
    let errors: Vec<f64> = ordered.iter().map(|r| r.rel_l2_error).collect();
    let keep = pre_plateau_len(&errors, filter);
    let xs: Vec<f64> = ordered[..keep].iter().map(|r| abscissa(r, axis).ln()).collect();
    let ys: Vec<f64> = errors[..keep].iter().map(|e| e.ln()).collect();
    least_squares(&xs, &ys)
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    let n = xs.len();
    if n < 3 {
        return Err(HarnessError::Fit(format!("need at least 3 usable points, have {n}")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Fit("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit { slope, intercept, r_squared, points_used: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h_records(hs: &[f64], f: impl Fn(f64) -> f64) -> Vec<ConvergenceRecord> {
        hs.iter().map(|&h| ConvergenceRecord { h_nm: h, m: 30, rel_l2_error: f(h), wall_time_s: 0.0 }).collect()
    }

    fn m_records(ms: &[usize], errors: &[f64]) -> Vec<ConvergenceRecord> {
        ms.iter()
            .zip(errors)
            .map(|(&m, &e)| ConvergenceRecord { h_nm: 1.0, m, rel_l2_error: e, wall_time_s: 0.0 })
            .collect()
    }

    #[test]
    fn linear_power_law() {
        let recs = h_records(&[50.0, 25.0, 10.0, 5.0, 2.0, 1.0, 0.5], |h| 1e-2 * h);
        let fit = fit_slope(&recs, Axis::H, PlateauFilter::Trailing).unwrap();
        assert!((fit.slope - 1.0).abs() <= 1e-12, "{}", fit.slope);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);
        assert_eq!(fit.points_used, 7);
    }

    #[test]
    fn appended_plateau_is_ignored() {
        let ms = [2, 4, 8, 16, 32, 40, 50, 60];
        let law: Vec<f64> = ms[..5].iter().map(|&m| 0.5 * (m as f64).powf(-1.1)).collect();
        let floor = law[4];
        let mut with_plateau = law.clone();
        with_plateau.extend([floor * 0.95, floor * 0.93, floor * 0.92]);
        let clean = fit_slope(&m_records(&ms[..5], &law), Axis::M, PlateauFilter::Trailing).unwrap();
        let noisy = fit_slope(&m_records(&ms, &with_plateau), Axis::M, PlateauFilter::Trailing).unwrap();
        assert!(((noisy.slope - clean.slope) / clean.slope).abs() < 0.05, "{} vs {}", noisy.slope, clean.slope);
        let unfiltered = fit_slope(&m_records(&ms, &with_plateau), Axis::M, PlateauFilter::None).unwrap();
        assert!(((unfiltered.slope - clean.slope) / clean.slope).abs() > 0.05);
    }

    #[test]
    fn too_few_points() {
        let recs = m_records(&[2, 4, 8], &[0.1, f64::NAN, 0.01]);
        assert!(matches!(fit_slope(&recs, Axis::M, PlateauFilter::None), Err(HarnessError::Fit(_))));
        let flat = m_records(&[2, 4, 8, 16], &[0.01, 0.0101, 0.0099, 0.01]);
        assert!(fit_slope(&flat, Axis::M, PlateauFilter::Trailing).is_err());
    }

    #[test]
    fn mixed_fixed_parameter_is_rejected() {
        let mut recs = m_records(&[2, 4, 8], &[0.1, 0.05, 0.02]);
        recs[1].h_nm = 2.0;
        assert!(fit_slope(&recs, Axis::M, PlateauFilter::None).is_err());
    }

    #[test]
    fn single_trailing_point_is_not_a_plateau() {
        assert_eq!(pre_plateau_len(&[1.0, 0.5, 0.25], PlateauFilter::Trailing), 3);
        assert_eq!(pre_plateau_len(&[1.0, 0.5, 0.26, 0.25], PlateauFilter::Trailing), 2);
    }

    proptest! {
        #[test]
        fn exact_on_power_laws(p in -3.0f64..3.0, c in 1e-6f64..1e2) {
            let xs: Vec<f64> = [1.0f64, 2.0, 3.0, 5.0, 8.0].iter().map(|x| x.ln()).collect();
            let ys: Vec<f64> = xs.iter().map(|x| c.ln() + p * x).collect();
            let fit = least_squares(&xs, &ys).unwrap();
            prop_assert!((fit.slope - p).abs() < 1e-12);
        }
    }
}
