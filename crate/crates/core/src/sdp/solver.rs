//! Narrow solver interface and the Clarabel backend.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use super::program::{ConeKind, ConicProgram};
use crate::error::{FunnelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Feasibility and relative/absolute gap tolerance.
    pub tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 400,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    OptimalInaccurate,
    Infeasible,
    Unbounded,
    Failed,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::OptimalInaccurate)
    }
}

#[derive(Debug, Clone)]
pub struct ConicResult {
    pub status: SolveStatus,
    pub detail: String,
    pub x: Vec<f64>,
    /// Dual variables (or the infeasibility certificate), one per row.
    pub z: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl ConicResult {
    /// Constraint families carrying the bulk of the dual vector, largest first.
    /// On an infeasible result these are the families the certificate
    /// combines to prove infeasibility.
    pub fn binding_families(&self, prog: &ConicProgram, min_share: f64) -> Vec<(String, f64)> {
        let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
        let mut row = 0;
        for b in &prog.blocks {
            let n = b.rows.len();
            let norm: f64 = self.z[row..row + n].iter().map(|v| v * v).sum::<f64>().sqrt();
            *mass.entry(b.family).or_default() += norm;
            row += n;
        }
        let total: f64 = mass.values().sum();
        if total <= 0.0 {
            return Vec::new();
        }
        let mut out: Vec<(String, f64)> = mass
            .into_iter()
            .map(|(k, v)| (k.to_string(), v / total))
            .filter(|(_, s)| *s >= min_share)
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }
}

pub trait ConicSolver {
    fn solve(&self, prog: &ConicProgram, opts: &SolverOptions) -> Result<ConicResult>;
}

/// Clarabel interior-point solver. Clarabel equilibrates the problem data
/// (Ruiz scaling) before factorizing and unscales the returned iterates.
#[derive(Debug, Clone, Copy, Default)]
pub struct Clarabel;

fn csc_from_triplets(m: usize, n: usize, mut trip: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    trip.sort_by_key(|&(r, c, _)| (c, r));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(trip.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(trip.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in trip {
        if last == Some((r, c)) {
            *nzval.last_mut().unwrap() += v;
            continue;
        }
        rowval.push(r);
        nzval.push(v);
        colptr[c + 1] += 1;
        last = Some((r, c));
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

impl ConicSolver for Clarabel {
    fn solve(&self, prog: &ConicProgram, opts: &SolverOptions) -> Result<ConicResult> {
        prog.validate().map_err(FunnelError::Solver)?;
        let n = prog.n_vars;
        let m = prog.n_rows();
        let mut q = vec![0.0; n];
        for &(v, c) in &prog.objective.terms {
            q[v] += c;
        }
        // s = b − A x with s = const + Σ coef·x.
        let mut trip = Vec::new();
        let mut b = Vec::with_capacity(m);
        let mut cones = Vec::with_capacity(prog.blocks.len());
        let mut row = 0;
        for blk in &prog.blocks {
            for r in &blk.rows {
                for &(v, c) in &r.terms {
                    trip.push((row, v, -c));
                }
                b.push(r.constant);
                row += 1;
            }
            cones.push(match blk.kind {
                ConeKind::Zero => SupportedConeT::ZeroConeT(blk.rows.len()),
                ConeKind::Nonneg => SupportedConeT::NonnegativeConeT(blk.rows.len()),
                ConeKind::Psd(k) => SupportedConeT::PSDTriangleConeT(k),
                ConeKind::Exp => SupportedConeT::ExponentialConeT(),
            });
        }
        let a = csc_from_triplets(m, n, trip);
        let p = CscMatrix::<f64>::zeros((n, n));
        let settings = DefaultSettingsBuilder::default()
            .verbose(opts.verbose)
            .max_iter(opts.max_iter)
            .tol_feas(opts.tol)
            .tol_gap_abs(opts.tol)
            .tol_gap_rel(opts.tol)
            .build()
            .map_err(|e| FunnelError::Solver(format!("{e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).map_err(|e| FunnelError::Solver(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::OptimalInaccurate,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            _ => SolveStatus::Failed,
        };
        Ok(ConicResult {
            status,
            detail: format!("{:?}", sol.status),
            x: sol.x.clone(),
            z: sol.z.clone(),
            objective: sol.obj_val + prog.objective.constant,
            iterations: sol.iterations,
            primal_residual: sol.r_prim,
            dual_residual: sol.r_dual,
        })
    }
}
