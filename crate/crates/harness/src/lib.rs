//! Configuration files, convergence sweeps, slope fits and the `rcwa` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod fit;
pub mod sweep;

pub use config::{load_config, SweepConfig};
pub use error::{HarnessError, Result};
pub use fit::{fit_slope, Axis, PlateauFilter, SlopeFit};
pub use sweep::{run_sweep, ConvergenceRecord, SweepOptions};
