//! The discrete synthesis program: assembly, solution and extraction.

pub mod assemble;
pub mod program;
pub mod solution;
pub mod solver;

use log::info;
use serde::Serialize;

pub use assemble::{assemble, FunnelProgram, SynthesisData};
pub use program::ConicProgram;
pub use solution::{extract_gains, harmonic_c, reconstruct_continuous, reconstruct_interval, FunnelPoint, FunnelSolution};
pub use solver::{Clarabel, ConicSolver, SolveStatus, SolverOptions};

use crate::error::{FunnelError, Result};

/// Constraint families found in an infeasibility certificate.
#[derive(Debug, Clone, Serialize)]
pub struct InfeasibilityReport {
    pub status: SolveStatus,
    pub detail: String,
    /// `(family, share of certificate mass)`, largest first.
    pub families: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub enum SynthesisOutcome {
    Solved(Box<FunnelSolution>),
    Infeasible(InfeasibilityReport),
}

/// Assembles, solves and extracts. Numerical solver failures are errors;
/// certified infeasibility is a regular outcome.
pub fn synthesize(data: &SynthesisData<'_>, solver: &dyn ConicSolver, opts: &SolverOptions) -> Result<SynthesisOutcome> {
    let fp = assemble(data)?;
    info!(
        "synthesis program: {} variables, {} rows, {} PSD cones",
        fp.program.n_vars,
        fp.program.n_rows(),
        fp.program.n_psd_cones()
    );
    let res = solver.solve(&fp.program, opts)?;
    info!(
        "solver finished: {} after {} iterations, objective {:.9e}",
        res.detail, res.iterations, res.objective
    );
    match res.status {
        SolveStatus::Optimal | SolveStatus::OptimalInaccurate => Ok(SynthesisOutcome::Solved(Box::new(FunnelSolution::from_result(
            &fp,
            &res,
            data.problem.alpha,
            data.problem.lambda_w,
            &data.lin.gamma,
            data.traj,
        )?))),
        SolveStatus::Infeasible => Ok(SynthesisOutcome::Infeasible(InfeasibilityReport {
            status: res.status,
            detail: res.detail.clone(),
            families: res.binding_families(&fp.program, 0.01),
        })),
        SolveStatus::Unbounded | SolveStatus::Failed => Err(FunnelError::Solver(format!(
            "{} after {} iterations (primal residual {:.3e}, dual residual {:.3e})",
            res.detail, res.iterations, res.primal_residual, res.dual_residual
        ))),
    }
}
