//! End-to-end orchestration used by the command-line tool.

use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::RunConfig;
use crate::discretization::{self, DiscreteTransition, NominalPath, VectorizedOde};
use crate::error::{FunnelError, Result};
use crate::lmi::{ConstraintSet, FunnelProblem, Halfspace};
use crate::sdp::{self, Clarabel, FunnelSolution, SynthesisData, SynthesisOutcome};
use crate::system::{self, LureLinearization, NonlinearSystem, SamplingRegion};
use crate::trajectory::{self, NominalTrajectory, TimeGrid};
use crate::unicycle::Unicycle;
use crate::validation::{self, ValidationInput, ValidationOptions, ValidationReport};

pub fn system_by_name(name: &str) -> Result<Box<dyn NonlinearSystem>> {
    match name {
        "unicycle" => Ok(Box::new(Unicycle::new())),
        other => Err(FunnelError::InvalidArgument(format!("unknown system {other:?}"))),
    }
}

/// Nominal trajectory described by `cfg`. Relative trajectory paths are
/// resolved against `base`.
pub fn load_nominal(cfg: &RunConfig, sys: &dyn NonlinearSystem, base: &Path) -> Result<NominalTrajectory> {
    let grid = TimeGrid::new(cfg.grid.t0, cfg.grid.tf, cfg.grid.n)?;
    let tr = &cfg.trajectory;
    let traj = match (&tr.file, &tr.x0, &tr.inputs) {
        (Some(file), _, _) => {
            let path = base.join(file);
            let f = std::fs::File::open(&path).map_err(|e| FunnelError::InvalidArgument(format!("cannot read trajectory {}: {e}", path.display())))?;
            let traj = NominalTrajectory::read_csv(f)?;
            let same = (traj.grid.t0 - grid.t0).abs() <= 1e-12 && (traj.grid.tf - grid.tf).abs() <= 1e-12;
            if !same {
                return Err(FunnelError::InvalidArgument(format!(
                    "trajectory spans [{}, {}], config grid spans [{}, {}]",
                    traj.grid.t0, traj.grid.tf, grid.t0, grid.tf
                )));
            }
            if traj.grid.n != grid.n {
                info!("resampling nominal from {} to {} intervals", traj.grid.n, grid.n);
                trajectory::resample(sys, &traj, grid.n)?
            } else {
                traj
            }
        }
        (None, Some(x0), Some(inputs)) => trajectory::integrate_nominal(sys, &DVector::from_column_slice(x0), inputs, grid)?,
        _ => return Err(FunnelError::Config(vec!["trajectory: give either `file` or both `x0` and `inputs`".into()])),
    };
    traj.check_dynamics(sys, tr.defect_tol)?;
    Ok(traj)
}

/// Fails when the nominal itself violates a constraint at some node.
pub fn check_nominal_feasible(traj: &NominalTrajectory, state: &[Vec<Halfspace>], input: &[Vec<Halfspace>]) -> Result<()> {
    for k in 0..traj.grid.nodes() {
        for (family, hs, z) in [("state", &state[k], &traj.states[k]), ("input", &input[k], &traj.inputs[k])] {
            for (index, h) in hs.iter().enumerate() {
                let margin = h.margin(z);
                if margin <= 0.0 {
                    return Err(FunnelError::InfeasibleNominal {
                        family,
                        node: k,
                        index,
                        margin,
                    });
                }
            }
        }
    }
    Ok(())
}

pub fn build_problem(cfg: &RunConfig, traj: &NominalTrajectory) -> Result<FunnelProblem> {
    let (state_constraints, input_constraints) = cfg.constraints.at_nodes(&traj.states)?;
    check_nominal_feasible(traj, &state_constraints, &input_constraints)?;
    let f = &cfg.funnel;
    Ok(FunnelProblem {
        alpha: f.alpha,
        lambda_w: f.lambda_w,
        w_c: f.w_c,
        w_q0: f.w_q0,
        w_qbar: f.w_qbar,
        q_init: cfg.q_init(),
        q_final: cfg.q_final(),
        state_constraints,
        input_constraints,
    })
}

/// Sampling regions for the Lipschitz estimate: the boundary ellipsoid with
/// the larger volume at every node, with no feedback.
pub fn sampling_regions(problem: &FunnelProblem, nodes: usize, n_u: usize) -> Vec<SamplingRegion> {
    let n = problem.q_init.nrows();
    let shape = if problem.q_init.determinant() >= problem.q_final.determinant() {
        problem.q_init.clone()
    } else {
        problem.q_final.clone()
    };
    vec![
        SamplingRegion {
            shape,
            gain: DMatrix::zeros(n_u, n),
        };
        nodes
    ]
}

/// Everything synthesis and validation share.
pub struct Prepared {
    pub sys: Box<dyn NonlinearSystem>,
    pub traj: NominalTrajectory,
    pub problem: FunnelProblem,
    pub lin: LureLinearization,
    pub transitions: Vec<DiscreteTransition>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub prepare_s: f64,
    pub discretize_s: f64,
    pub solve_s: f64,
}

/// Nominal, constraints, linearization, Lipschitz constants and the discrete
/// transition maps.
pub fn prepare(cfg: &RunConfig, base: &Path, timings: &mut Timings) -> Result<Prepared> {
    let start = Instant::now();
    let sys = system_by_name(&cfg.system)?;
    let traj = load_nominal(cfg, sys.as_ref(), base)?;
    let problem = build_problem(cfg, &traj)?;
    let points = system::linearize_trajectory(sys.as_ref(), &traj)?;
    let gamma = if sys.dims().is_linear() {
        vec![0.0; points.len()]
    } else {
        let regions = sampling_regions(&problem, points.len(), sys.dims().n_u);
        system::estimate_lipschitz(sys.as_ref(), &points, &regions, &cfg.lipschitz)?
    };
    info!(
        "lipschitz constants in [{:.4}, {:.4}]",
        gamma.iter().copied().fold(f64::INFINITY, f64::min),
        gamma.iter().copied().fold(0.0, f64::max)
    );
    let lin = LureLinearization { points, gamma };
    timings.prepare_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let dims = sys.dims();
    let ode = VectorizedOde::new(dims.n_x, dims.n_u, problem.alpha, problem.lambda_w);
    let path = NominalPath {
        sys: sys.as_ref(),
        traj: &traj,
    };
    let transitions = discretization::discretize(&ode, &path, &traj.grid)?;
    timings.discretize_s = start.elapsed().as_secs_f64();
    Ok(Prepared {
        sys,
        traj,
        problem,
        lin,
        transitions,
    })
}

pub fn run_synthesis(cfg: &RunConfig, base: &Path) -> Result<(Prepared, SynthesisOutcome, Timings)> {
    let mut timings = Timings::default();
    let prep = prepare(cfg, base, &mut timings)?;
    let start = Instant::now();
    let data = SynthesisData {
        problem: &prep.problem,
        traj: &prep.traj,
        lin: &prep.lin,
        transitions: &prep.transitions,
        selectors: prep.sys.selectors(),
        dims: prep.sys.dims(),
    };
    let outcome = sdp::synthesize(&data, &Clarabel, &cfg.solver)?;
    timings.solve_s = start.elapsed().as_secs_f64();
    if let SynthesisOutcome::Solved(sol) = &outcome {
        for w in &sol.warnings {
            warn!("{w}");
        }
    }
    Ok((prep, outcome, timings))
}

/// Problem and transitions rebuilt around the nominal stored in a funnel file.
pub struct Reloaded {
    pub sys: Box<dyn NonlinearSystem>,
    pub problem: FunnelProblem,
    pub constraints: ConstraintSet,
    pub transitions: Vec<DiscreteTransition>,
}

pub fn reload(cfg: &RunConfig, sol: &FunnelSolution) -> Result<Reloaded> {
    let sys = system_by_name(&cfg.system)?;
    let dims = sys.dims();
    if sol.n_x() != dims.n_x || sol.n_u() != dims.n_u {
        return Err(FunnelError::InvalidArgument(format!(
            "funnel file is {}x{} but system {:?} is {}x{}",
            sol.n_x(),
            sol.n_u(),
            cfg.system,
            dims.n_x,
            dims.n_u
        )));
    }
    let mut problem = build_problem(cfg, &sol.nominal)?;
    problem.alpha = sol.alpha;
    problem.lambda_w = sol.lambda_w;
    let ode = VectorizedOde::new(dims.n_x, dims.n_u, sol.alpha, sol.lambda_w);
    let path = NominalPath {
        sys: sys.as_ref(),
        traj: &sol.nominal,
    };
    let transitions = discretization::discretize(&ode, &path, &sol.grid)?;
    Ok(Reloaded {
        sys,
        problem,
        constraints: cfg.constraints.clone(),
        transitions,
    })
}

pub fn run_validation(cfg: &RunConfig, sol: &FunnelSolution, opts: &ValidationOptions) -> Result<ValidationReport> {
    let r = reload(cfg, sol)?;
    let input = ValidationInput {
        sys: r.sys.as_ref(),
        sol,
        problem: &r.problem,
        constraints: &r.constraints,
        transitions: Some(&r.transitions),
    };
    validation::validate(&input, opts)
}
