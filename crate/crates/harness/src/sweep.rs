//! `(h, M)` convergence sweeps.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use rcwa::stitcher::dense_solve;
use rcwa::{planar_solution, rel_l2_error, solve_grating, GratingProblem, ScatterSolution};
use serde::{Deserialize, Serialize};

use crate::config::{ReferenceConfig, SweepConfig};
use crate::error::{HarnessError, Result};

pub const CSV_HEADER: [&str; 4] = ["h_nm", "M", "rel_l2_error", "wall_time_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub h_nm: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub rel_l2_error: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

pub fn solve_at(problem: &GratingProblem, m: usize, h_nm: f64) -> Result<ScatterSolution> {
    let mesh = problem.aligned_mesh(h_nm)?;
    Ok(solve_grating(problem, m, &mesh)?)
}

enum Reference {
    Shared(Box<ScatterSolution>),
    Dense,
    Planar,
}

fn point_error(problem: &GratingProblem, reference: &Reference, m: usize, h_nm: f64) -> Result<f64> {
    let mesh = problem.aligned_mesh(h_nm)?;
    let sol = solve_grating(problem, m, &mesh)?;
    let err = match reference {
        Reference::Shared(r) => rel_l2_error(&sol, r)?,
        Reference::Dense => rel_l2_error(&sol, &dense_solve(problem, m, &mesh)?)?,
        Reference::Planar => rel_l2_error(&sol, &planar_solution(problem, m)?)?,
    };
    Ok(err)
}

/// Sweep points in configured order: `h` from coarse to fine, `M` ascending within each `h`.
pub fn sweep_points(cfg: &SweepConfig) -> Vec<(f64, usize)> {
    cfg.sweep.h_nm.iter().flat_map(|&h| cfg.sweep.m.iter().map(move |&m| (h, m))).collect()
}

/// Runs every `(h, M)` point against the configured reference.
///
/// Failed points are reported as `NaN` and logged; the sweep carries on.
pub fn run_sweep(cfg: &SweepConfig, options: &SweepOptions) -> Result<Vec<ConvergenceRecord>> {
    let problem = cfg.problem()?;
    let run = || -> Result<Vec<ConvergenceRecord>> {
        let reference = match cfg.reference {
            ReferenceConfig::SelfConverged { m, h_nm } => {
                log::info!("reference solve at M = {m}, h = {h_nm} nm");
                Reference::Shared(Box::new(solve_at(&problem, m, h_nm)?))
            }
            ReferenceConfig::Dense => Reference::Dense,
            ReferenceConfig::Planar => Reference::Planar,
        };
        let records = sweep_points(cfg)
            .into_par_iter()
            .map(|(h_nm, m)| {
                let start = Instant::now();
                let rel_l2_error = match point_error(&problem, &reference, m, h_nm) {
                    Ok(e) => e,
                    Err(e) => {
                        log::error!("sweep point h = {h_nm} nm, M = {m} failed: {e}");
                        f64::NAN
                    }
                };
                ConvergenceRecord { h_nm, m, rel_l2_error, wall_time_s: start.elapsed().as_secs_f64() }
            })
            .collect();
        Ok(records)
    };
    match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(run),
        None => run(),
    }
}

fn full(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<W: Write>(records: &[ConvergenceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([full(r.h_nm), r.m.to_string(), full(r.rel_l2_error), full(r.wall_time_s)])?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format table `h_nm,M,metric,value`.
pub fn write_long_csv<W: Write>(records: &[ConvergenceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h_nm", "M", "metric", "value"])?;
    for r in records {
        for (metric, value) in [("rel_l2_error", r.rel_l2_error), ("wall_time_s", r.wall_time_s)] {
            w.write_record([full(r.h_nm), r.m.to_string(), metric.to_string(), full(value)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ConvergenceRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(HarnessError::Config(format!(
            "{}: expected header {}, found {}",
            path.display(),
            CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize().map(|r| r.map_err(HarnessError::from)).collect()
}

pub fn to_csv_string(records: &[ConvergenceRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}
