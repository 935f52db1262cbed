#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use funnel::discretization::{discretize, NominalPath, VectorizedOde};
use funnel::lmi::FunnelProblem;
use funnel::sdp::{self, Clarabel, FunnelSolution, SolverOptions, SynthesisData, SynthesisOutcome};
use funnel::system::{self, LureLinearization, NonlinearSystem};
use funnel::trajectory::NominalTrajectory;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.gen_range(-1.0..1.0))
}

pub fn rand_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.gen_range(-1.0..1.0))
}

pub fn rand_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let m = rand_matrix(rng, n, n, scale);
    (&m + m.transpose()) * 0.5
}

/// `G Gᵀ + floor I` with `G` uniform in `[-1, 1]`.
pub fn rand_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let g = rand_matrix(rng, n, n, 1.0);
    &g * g.transpose() + DMatrix::identity(n, n) * floor
}

/// Classical RK4 with a fixed number of steps.
pub fn rk4<F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>>(f: F, t0: f64, t1: f64, y0: DMatrix<f64>, steps: usize) -> DMatrix<f64> {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    for i in 0..steps {
        let t = t0 + h * i as f64;
        let k1 = f(t, &y);
        let k2 = f(t + h / 2.0, &(&y + &k1 * (h / 2.0)));
        let k3 = f(t + h / 2.0, &(&y + &k2 * (h / 2.0)));
        let k4 = f(t + h, &(&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    y
}

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn benchmark_config() -> PathBuf {
    crate_dir().join("configs/unicycle_paper.cfg")
}

pub fn funnel_bin(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_funnel"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("FUNNEL_LOG", "warn")
        .output()
        .expect("funnel binary runs")
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Library-level synthesis for systems the config format does not name.
pub fn synthesize_direct(sys: &dyn NonlinearSystem, traj: &NominalTrajectory, problem: &FunnelProblem, gamma: Vec<f64>) -> SynthesisOutcome {
    let points = system::linearize_trajectory(sys, traj).unwrap();
    let lin = LureLinearization { points, gamma };
    let dims = sys.dims();
    let ode = VectorizedOde::new(dims.n_x, dims.n_u, problem.alpha, problem.lambda_w);
    let transitions = discretize(&ode, &NominalPath { sys, traj }, &traj.grid).unwrap();
    let data = SynthesisData {
        problem,
        traj,
        lin: &lin,
        transitions: &transitions,
        selectors: sys.selectors(),
        dims,
    };
    sdp::synthesize(&data, &Clarabel, &SolverOptions::default()).unwrap()
}

pub fn solved(outcome: SynthesisOutcome) -> FunnelSolution {
    match outcome {
        SynthesisOutcome::Solved(sol) => *sol,
        SynthesisOutcome::Infeasible(r) => panic!("unexpectedly infeasible: {:?}", r.families),
    }
}
