//! Cost-minimising battery dispatch as an exact linear program.
//!
//! The piecewise meter cost and the efficiency-dependent battery dynamics are
//! linearised by splitting battery power into charge/discharge parts and meter
//! power into import/export parts. The split is exact whenever injection
//! prices never exceed consumption prices and `eta <= 1`: simultaneous
//! import/export or charge/discharge then never lowers the cost.

mod brute_force;
mod dispatch;
mod io;
mod lp;
mod simplex;
mod verify;

use std::path::PathBuf;

use thiserror::Error;

use crate::timeseries::SeriesError;

pub use brute_force::{brute_force_dispatch, BruteForceResult, MAX_BRUTE_FORCE_STEPS, STATE_BUCKET_KWH};
pub use dispatch::{
    build_lp, schedule_cost, extract_dispatch, solve_dispatch, step_cost, DispatchProblem, DispatchSolution,
    VARS_PER_STEP,
};
pub use io::{read_problem_csv, write_problem_csv, write_solution_csv};
pub use lp::{LinearProgram, SparseMatrix};
pub use simplex::{solve_lp, LpSolution, LpStatus, FEASIBILITY_TOL, OPTIMALITY_TOL, PIVOT_TOL};
pub use verify::{verify_solution, Check, VerificationReport, Violation, VERIFY_TOL};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("invalid dispatch problem: {0}")]
    InvalidProblem(String),
    #[error(
        "injection price {inj} exceeds consumption price {con} at step {step}; \
         the split linearisation would allow fictitious simultaneous import and export"
    )]
    InexactTariff { step: usize, con: f64, inj: f64 },
    #[error("malformed linear program: {0}")]
    MalformedLp(String),
    #[error("simplex iteration limit reached after {0} iterations")]
    IterationLimit(usize),
    #[error("LP is not optimal: {0:?}")]
    NotOptimal(LpStatus),
    #[error("LP objective {lp} disagrees with the recomputed cost {recomputed}")]
    Inconsistent { lp: f64, recomputed: f64 },
    #[error("brute force is limited to {max} steps, got {steps}")]
    TooLarge { steps: usize, max: usize },
    #[error("action grid resolution must be positive and finite, got {0}")]
    InvalidResolution(f64),
    #[error("row {row}: {reason}")]
    Csv { row: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
