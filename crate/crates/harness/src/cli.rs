//! Command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rcwa::problem::WOOD_DEFAULT_TOL;
use rcwa::{
    check_nontrapping, check_wood_anomaly, efficiencies, galerkin_residual, reconstruct_field, solve_grating, FieldKind,
    FieldRequest, MaterialCase,
};

use crate::config::{load_config, ReferenceKind, SweepConfig};
use crate::error::{HarnessError, Result};
use crate::fit::{fit_slope, Axis, PlateauFilter};
use crate::sweep::{read_csv, run_sweep, write_csv, write_long_csv, SweepOptions};

const GALERKIN_TEST_NODES: usize = 400;
const GALERKIN_TOL: f64 = 1e-6;
const ENERGY_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "rcwa", version, about = "RCWA solver for p-polarized gratings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    #[value(name = "self")]
    SelfConverged,
    Dense,
    Planar,
}

impl From<ReferenceArg> for ReferenceKind {
    fn from(r: ReferenceArg) -> Self {
        match r {
            ReferenceArg::SelfConverged => Self::SelfConverged,
            ReferenceArg::Dense => Self::Dense,
            ReferenceArg::Planar => Self::Planar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    H,
    M,
}

#[derive(Debug, clap::Args)]
pub struct Discretization {
    /// Truncation order M (default: largest order of the sweep).
    #[arg(long)]
    pub order: Option<usize>,
    /// Target slice thickness in nm (default: finest h of the sweep).
    #[arg(long)]
    pub slice_nm: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve once and print r, t and efficiencies.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        disc: Discretization,
    },
    /// Run the configured (h, M) convergence sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        /// CSV destination (default: output.csv of the config, then standard output).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        reference: Option<ReferenceArg>,
    },
    /// Fit a log-log slope to a sweep CSV.
    Fit {
        csv: PathBuf,
        #[arg(long, value_enum, default_value = "m")]
        axis: AxisArg,
        /// Keep saturated trailing points.
        #[arg(long)]
        no_plateau_filter: bool,
    },
    /// Print well-posedness and accuracy diagnostics.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        disc: Discretization,
    },
    /// Write the field on a grid covering the cell to CSV.
    Field {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        disc: Discretization,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        nx: usize,
        #[arg(long, default_value_t = 128)]
        nz: usize,
        /// Subtract the incident wave above the grating.
        #[arg(long)]
        scattered: bool,
    },
}

fn discretization(cfg: &SweepConfig, disc: &Discretization) -> (usize, f64) {
    let m = disc.order.unwrap_or_else(|| *cfg.sweep.m.iter().max().expect("validated non-empty"));
    let h = disc.slice_nm.unwrap_or_else(|| cfg.sweep.h_nm.iter().copied().fold(f64::INFINITY, f64::min));
    (m, h)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?)),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Solve { config, disc } => solve(&load_config(config)?, &disc, out),
        Command::Sweep { config, threads, out: dest, reference } => {
            let mut cfg = load_config(config)?;
            if let Some(r) = reference {
                cfg = cfg.with_reference(r.into())?;
            }
            let records = run_sweep(&cfg, &SweepOptions { threads })?;
            match dest.or_else(|| cfg.output.csv.clone()) {
                Some(p) => {
                    write_csv(&records, open_output(Some(&p))?)?;
                    writeln!(out, "wrote {} records to {}", records.len(), p.display())?;
                }
                None => write_csv(&records, &mut *out)?,
            }
            if let Some(p) = &cfg.output.long_csv {
                write_long_csv(&records, open_output(Some(p))?)?;
            }
            Ok(())
        }
        Command::Fit { csv, axis, no_plateau_filter } => {
            let records = read_csv(csv)?;
            let axis = match axis {
                AxisArg::H => Axis::H,
                AxisArg::M => Axis::M,
            };
            let filter = if no_plateau_filter { PlateauFilter::None } else { PlateauFilter::Trailing };
            let fit = fit_slope(&records, axis, filter)?;
            writeln!(out, "slope = {:.6}", fit.slope)?;
            writeln!(out, "r_squared = {:.6}", fit.r_squared)?;
            writeln!(out, "points_used = {}", fit.points_used)?;
            Ok(())
        }
        Command::Check { config, disc } => check(&load_config(config)?, &disc, out),
        Command::Field { config, disc, out: dest, nx, nz, scattered } => {
            let cfg = load_config(config)?;
            let (m, h) = discretization(&cfg, &disc);
            let problem = cfg.problem()?;
            let mesh = problem.aligned_mesh(h)?;
            let sol = solve_grating(&problem, m, &mesh)?;
            let hh = problem.domain.half_height;
            let kind = if scattered { FieldKind::Scattered } else { FieldKind::Total };
            let grid = reconstruct_field(&sol, &FieldRequest::uniform(nx, -hh, hh, nz, kind));
            let mut w = csv::Writer::from_writer(match &dest {
                Some(p) => open_output(Some(p))?,
                None => Box::new(&mut *out) as Box<dyn Write>,
            });
            w.write_record(["x1_nm", "x2_nm", "re", "im", "abs2"])?;
            for (iz, &x2) in grid.x2.iter().enumerate() {
                for (ix, &x1) in grid.x1.iter().enumerate() {
                    let v = grid.get(iz, ix);
                    w.write_record([x1, x2, v.re, v.im, v.norm_sqr()].map(|x| format!("{x:.16e}")))?;
                }
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn solve(cfg: &SweepConfig, disc: &Discretization, out: &mut dyn Write) -> Result<()> {
    let (m, h) = discretization(cfg, disc);
    let problem = cfg.problem()?;
    let mesh = problem.aligned_mesh(h)?;
    let sol = solve_grating(&problem, m, &mesh)?;
    let eff = efficiencies(&sol);
    writeln!(out, "M = {m}, h = {h} nm, slices = {}", mesh.num_slices())?;
    writeln!(out, "{:>5} {:>24} {:>24} {:>14} {:>14}", "order", "r", "t", "R", "T")?;
    for (i, n) in eff.orders.iter().enumerate() {
        let (r, t) = (sol.r[i], sol.t[i]);
        writeln!(
            out,
            "{n:>5} {:>11.4e}{:+11.4e}i {:>11.4e}{:+11.4e}i {:>14.10} {:>14.10}",
            r.re, r.im, t.re, t.im, eff.reflected[i], eff.transmitted[i]
        )?;
    }
    writeln!(out, "R = {:.10}", eff.total_reflected)?;
    writeln!(out, "T = {:.10}", eff.total_transmitted)?;
    writeln!(out, "A = {:.10}", eff.absorption)?;
    if !eff.reliable {
        writeln!(out, "note: a half-space is lossy; plane-wave efficiencies are indicative only")?;
    }
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok { "pass" } else { "FAIL" }
}

fn check(cfg: &SweepConfig, disc: &Discretization, out: &mut dyn Write) -> Result<()> {
    let (m, h) = discretization(cfg, disc);
    let problem = cfg.problem()?;
    let mesh = problem.aligned_mesh(h)?;
    let mut failures = 0;

    let basis = problem.mode_basis(m)?;
    let wood = check_wood_anomaly(&basis, WOOD_DEFAULT_TOL);
    failures += usize::from(!wood.is_clear());
    writeln!(out, "wood-anomaly: {} (min relative gap {:.3e})", verdict(wood.is_clear()), wood.min_gap)?;

    let nt = check_nontrapping(&problem.profile, &problem.domain, &mesh, 64, 4)?;
    failures += usize::from(!nt.pass());
    let shape = match (nt.increasing, nt.decreasing) {
        (true, true) => "constant in x2".to_string(),
        (true, false) => "non-decreasing in x2".to_string(),
        (false, true) => "non-increasing in x2".to_string(),
        (false, false) => format!("not monotone (worst jump {:.3e})", nt.worst_violation),
    };
    writeln!(out, "non-trapping: {} (Re eps {shape})", verdict(nt.pass()))?;

    let sol = solve_grating(&problem, m, &mesh)?;
    let eff = efficiencies(&sol);
    if eff.reliable {
        let ok = match problem.case {
            MaterialCase::Lossless => eff.absorption.abs() <= ENERGY_TOL,
            _ => eff.absorption >= -ENERGY_TOL,
        };
        failures += usize::from(!ok);
        writeln!(
            out,
            "energy-balance: {} (R + T = {:.12}, absorbed {:.3e})",
            verdict(ok),
            eff.total_reflected + eff.total_transmitted,
            eff.absorption
        )?;
    } else {
        writeln!(out, "energy-balance: skipped (lossy half-space)")?;
    }

    let res = galerkin_residual(&sol, &problem, &mesh, GALERKIN_TEST_NODES)?;
    let ok = res <= GALERKIN_TOL;
    failures += usize::from(!ok);
    writeln!(out, "galerkin-residual: {} ({res:.3e} with {GALERKIN_TEST_NODES} test nodes)", verdict(ok))?;

    if failures == 0 {
        writeln!(out, "all checks pass")?;
    } else {
        writeln!(out, "{failures} check(s) failed")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn configs() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
    }

    fn run_args(args: &[&str]) -> Result<String> {
        let cli = Cli::try_parse_from(std::iter::once("rcwa").chain(args.iter().copied()))
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut buf = Vec::new();
        run(cli, &mut buf)?;
        Ok(String::from_utf8(buf).unwrap())
    }

    #[test]
    fn solve_quarter_wave_prints_r() {
        let cfg = configs().join("quarter_wave.json");
        let text = run_args(&["solve", "--config", cfg.to_str().unwrap()]).unwrap();
        assert!(text.contains("R = 0.3600000000"), "{text}");
        assert!(text.contains("T = 0.6400000000"), "{text}");
    }

    #[test]
    fn check_homogeneous_all_pass() {
        let cfg = configs().join("homogeneous.json");
        let text = run_args(&["check", "--config", cfg.to_str().unwrap()]).unwrap();
        assert!(text.contains("all checks pass"), "{text}");
    }

    #[test]
    fn fit_synthetic_csv() {
        let csv = configs().join("synthetic_slope.csv");
        let text = run_args(&["fit", csv.to_str().unwrap(), "--axis", "h"]).unwrap();
        assert!(text.contains("slope = 1.000000"), "{text}");
    }

    #[test]
    fn sweep_to_stdout_and_override_reference() {
        let cfg = configs().join("lamellar.json");
        let text = run_args(&["sweep", "--config", cfg.to_str().unwrap(), "--reference", "dense", "--threads", "1"]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("h_nm,M,rel_l2_error,wall_time_s"));
        for line in lines {
            let err: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
            assert!(err <= 1e-8, "{line}");
        }
    }

    #[test]
    fn field_grid_has_one_row_per_sample() {
        let cfg = configs().join("lamellar.json");
        let text = run_args(&["field", "--config", cfg.to_str().unwrap(), "--nx", "4", "--nz", "5", "--order", "2"]).unwrap();
        assert_eq!(text.lines().count(), 1 + 20);
    }

    #[test]
    fn operation_errors_propagate() {
        assert!(run_args(&["solve", "--config", "/nonexistent.json"]).is_err());
        let cfg = configs().join("quarter_wave.json");
        assert!(run_args(&["solve", "--config", cfg.to_str().unwrap(), "--slice-nm", "-1"]).is_err());
    }
}
