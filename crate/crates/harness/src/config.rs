//! JSON sweep configuration.
//!
//! Complex numbers are `[re, im]`, lengths are in nanometres and angles in degrees.

use std::fs;
use std::path::{Path, PathBuf};

use rcwa::problem::TriangleOnStrip;
use rcwa::{
    GratingDomain, GratingProblem, IncidentWave, Interval, LamellarLayer, MaterialCase, PermittivityProfile,
    UniformLayer,
};
use rcwa::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub type ComplexPair = [f64; 2];

fn cx(v: ComplexPair) -> Complex64 {
    Complex64::new(v[0], v[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub problem: ProblemConfig,
    pub incident: IncidentConfig,
    pub sweep: SweepSpec,
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub period_nm: f64,
    /// Full cell height `2H`.
    pub cell_height_nm: f64,
    pub eps_plus: ComplexPair,
    pub eps_minus: ComplexPair,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub case: CaseConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseConfig {
    #[default]
    Unspecified,
    Lossless,
    Dissipative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    Homogeneous {},
    /// Uniform layers listed top-down from `top_nm`.
    Stack { top_nm: f64, layers: Vec<UniformLayerConfig> },
    /// Lamellar layers listed top-down from `top_nm`.
    Lamellar { top_nm: f64, layers: Vec<LamellarLayerConfig> },
    TriangleOnStrip {
        base_center_nm: f64,
        base_width_nm: f64,
        apex_offset_nm: f64,
        height_nm: f64,
        base_y_nm: f64,
        strip_thickness_nm: f64,
        inclusion: ComplexPair,
        ambient: ComplexPair,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformLayerConfig {
    pub thickness_nm: f64,
    pub eps: ComplexPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LamellarLayerConfig {
    pub thickness_nm: f64,
    pub background: ComplexPair,
    #[serde(default)]
    pub inclusions: Vec<InclusionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionConfig {
    pub start_nm: f64,
    pub end_nm: f64,
    pub eps: ComplexPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidentConfig {
    pub wavelength_nm: f64,
    #[serde(default)]
    pub theta_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Truncation orders, sorted ascending on load.
    pub m: Vec<usize>,
    /// Target slice thicknesses, sorted from coarsest to finest on load.
    pub h_nm: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    /// One high-resolution solve shared by every sweep point.
    #[serde(rename = "self")]
    SelfConverged { m: usize, h_nm: f64 },
    /// The dense global solve at each point's own discretization.
    Dense,
    /// The planar transfer-matrix solution (laterally uniform problems only).
    Planar,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    /// Long-format table (`h_nm,M,metric,value`) for external plotting.
    #[serde(default)]
    pub long_csv: Option<PathBuf>,
}

/// Reference policy names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    SelfConverged,
    Dense,
    Planar,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    fn normalize(&mut self) {
        self.sweep.m.sort_unstable();
        self.sweep.m.dedup();
        self.sweep.h_nm.sort_by(|a, b| b.total_cmp(a));
        self.sweep.h_nm.dedup();
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.m.is_empty() || self.sweep.h_nm.is_empty() {
            return Err(HarnessError::Config("sweep.m and sweep.h_nm must be non-empty".into()));
        }
        if let Some(h) = self.sweep.h_nm.iter().find(|h| !(**h > 0.0)) {
            return Err(HarnessError::Config(format!("sweep.h_nm: {h} must be > 0")));
        }
        if let ReferenceConfig::SelfConverged { m, h_nm } = self.reference {
            let max_m = *self.sweep.m.iter().max().unwrap();
            let min_h = self.sweep.h_nm.iter().copied().fold(f64::INFINITY, f64::min);
            if m < max_m {
                return Err(HarnessError::Config(format!("reference.m = {m} is below the largest sweep order {max_m}")));
            }
            if !(h_nm > 0.0) || h_nm > min_h {
                return Err(HarnessError::Config(format!(
                    "reference.h_nm = {h_nm} must be positive and no larger than the finest sweep value {min_h}"
                )));
            }
        }
        self.problem.build(&self.incident)?;
        Ok(())
    }

    pub fn problem(&self) -> Result<GratingProblem> {
        self.problem.build(&self.incident)
    }

    /// Replaces the reference policy, keeping self-converged parameters when present.
    pub fn with_reference(mut self, kind: ReferenceKind) -> Result<Self> {
        self.reference = match (kind, self.reference) {
            (ReferenceKind::SelfConverged, r @ ReferenceConfig::SelfConverged { .. }) => r,
            (ReferenceKind::SelfConverged, _) => {
                return Err(HarnessError::Config(
                    "the self-converged reference needs reference.m and reference.h_nm in the config".into(),
                ))
            }
            (ReferenceKind::Dense, _) => ReferenceConfig::Dense,
            (ReferenceKind::Planar, _) => ReferenceConfig::Planar,
        };
        self.validate()?;
        Ok(self)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SweepConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let mut cfg = SweepConfig::from_json(&text).map_err(|e| match e {
        HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    // Relative output paths are taken relative to the config file.
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.output.csv, &mut cfg.output.long_csv].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

impl ProblemConfig {
    pub fn build(&self, incident: &IncidentConfig) -> Result<GratingProblem> {
        let domain = GratingDomain::new(self.period_nm, 0.5 * self.cell_height_nm, cx(self.eps_plus), cx(self.eps_minus))?;
        let wave = IncidentWave::from_degrees(incident.wavelength_nm, incident.theta_deg)?;
        let profile = match &self.geometry {
            GeometryConfig::Homogeneous {} => PermittivityProfile::homogeneous(),
            GeometryConfig::Stack { top_nm, layers } => PermittivityProfile::Stack {
                top: *top_nm,
                layers: layers.iter().map(|l| UniformLayer { thickness: l.thickness_nm, eps: cx(l.eps) }).collect(),
            },
            GeometryConfig::Lamellar { top_nm, layers } => PermittivityProfile::LamellarStack {
                top: *top_nm,
                layers: layers
                    .iter()
                    .map(|l| LamellarLayer {
                        thickness: l.thickness_nm,
                        background: cx(l.background),
                        inclusions: l.inclusions.iter().map(|i| Interval::new(i.start_nm, i.end_nm, cx(i.eps))).collect(),
                    })
                    .collect(),
            },
            GeometryConfig::TriangleOnStrip {
                base_center_nm,
                base_width_nm,
                apex_offset_nm,
                height_nm,
                base_y_nm,
                strip_thickness_nm,
                inclusion,
                ambient,
            } => PermittivityProfile::TriangleOnStrip(TriangleOnStrip {
                base_center: *base_center_nm,
                base_width: *base_width_nm,
                apex_offset: *apex_offset_nm,
                height: *height_nm,
                base_y: *base_y_nm,
                strip_thickness: *strip_thickness_nm,
                inclusion: cx(*inclusion),
                ambient: cx(*ambient),
            }),
        };
        let case = match self.case {
            CaseConfig::Unspecified => MaterialCase::Unspecified,
            CaseConfig::Lossless => MaterialCase::Lossless,
            CaseConfig::Dissipative => MaterialCase::Dissipative,
        };
        Ok(GratingProblem::new(domain, wave, profile).with_case(case))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOMOGENEOUS: &str = r#"{
        "problem": {
            "period_nm": 500, "cell_height_nm": 200,
            "eps_plus": [1, 0], "eps_minus": [1, 0],
            "geometry": { "kind": "homogeneous" }
        },
        "incident": { "wavelength_nm": 600, "theta_deg": 0 },
        "sweep": { "m": [2, 1], "h_nm": [5, 50, 10] },
        "reference": { "policy": "self", "m": 4, "h_nm": 2 }
    }"#;

    #[test]
    fn round_trip() {
        let cfg = SweepConfig::from_json(HOMOGENEOUS).unwrap();
        let again = SweepConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn sweep_lists_are_sorted() {
        let cfg = SweepConfig::from_json(HOMOGENEOUS).unwrap();
        assert_eq!(cfg.sweep.m, vec![1, 2]);
        assert_eq!(cfg.sweep.h_nm, vec![50.0, 10.0, 5.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = HOMOGENEOUS.replace("\"theta_deg\": 0", "\"theta_deg\": 0, \"phi\": 1");
        let err = SweepConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("phi"), "{err}");
        let bad = HOMOGENEOUS.replace("\"kind\": \"homogeneous\"", "\"kind\": \"homogeneous\", \"x\": 1");
        assert!(SweepConfig::from_json(&bad).is_err());
    }

    #[test]
    fn reference_must_dominate_the_sweep() {
        let bad = HOMOGENEOUS.replace("\"m\": 4", "\"m\": 1");
        assert!(SweepConfig::from_json(&bad).is_err());
        let bad = HOMOGENEOUS.replace("\"h_nm\": 2 }", "\"h_nm\": 20 }");
        assert!(SweepConfig::from_json(&bad).is_err());
    }

    #[test]
    fn shipped_symmetric_grating_config() {
        let cfg = load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/symmetric_dissipative_m_sweep.json")).unwrap();
        assert_eq!(cfg.problem.period_nm, 500.0);
        assert_eq!(cfg.problem.cell_height_nm, 1700.0);
        assert_eq!(cfg.problem.eps_plus, [1.0, 1e-6]);
        assert_eq!(cfg.incident.wavelength_nm, 600.0);
        assert_eq!(cfg.incident.theta_deg, 0.0);
        match cfg.problem.geometry {
            GeometryConfig::TriangleOnStrip { base_width_nm, height_nm, strip_thickness_nm, inclusion, ambient, .. } => {
                assert_eq!((base_width_nm, height_nm, strip_thickness_nm), (250.0, 100.0, 100.0));
                assert_eq!(inclusion, [15.0, 4.0]);
                assert_eq!(ambient, [1.0, 1e-6]);
            }
            other => panic!("unexpected geometry {other:?}"),
        }
    }
}
