mod common;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use common::*;
use funnel::config::RunConfig;
use funnel::linalg;
use funnel::lmi::{FunnelProblem, Halfspace};
use funnel::pipeline::{self, Prepared};
use funnel::sdp::{FunnelSolution, SynthesisOutcome};
use funnel::system::{self, LinearSystem, NonlinearSystem};
use funnel::trajectory::{integrate_nominal, InputSchedule, TimeGrid};
use funnel::validation::{self, ValidationInput, ValidationOptions};

struct Run {
    cfg: RunConfig,
    prep: Prepared,
    sol: FunnelSolution,
}

fn run_with(n: usize) -> Run {
    let mut cfg = RunConfig::load(&benchmark_config()).unwrap();
    cfg.grid.n = n;
    let (prep, outcome, _) = pipeline::run_synthesis(&cfg, &crate_dir()).unwrap();
    let SynthesisOutcome::Solved(sol) = outcome else {
        panic!("benchmark with N = {n} is infeasible")
    };
    Run { cfg, prep, sol: *sol }
}

fn bench() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run_with(30))
}

fn linear_case() -> (LinearSystem, FunnelProblem, FunnelSolution) {
    let sys = LinearSystem::new(
        DMatrix::from_element(1, 1, 0.3),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 0.5),
    );
    let grid = TimeGrid::new(0.0, 2.0, 10).unwrap();
    let traj = integrate_nominal(&sys, &DVector::zeros(1), &InputSchedule::constant(&[0.0]), grid).unwrap();
    let nodes = grid.nodes();
    let problem = FunnelProblem {
        alpha: 0.5,
        lambda_w: 0.5,
        w_c: 1e3,
        w_q0: 0.1,
        w_qbar: 0.1,
        q_init: DMatrix::from_element(1, 1, 1.0),
        q_final: DMatrix::from_element(1, 1, 1.0),
        state_constraints: vec![vec![Halfspace::new(&[1.0], 3.0), Halfspace::new(&[-1.0], 3.0)]; nodes],
        input_constraints: vec![vec![Halfspace::new(&[1.0], 5.0), Halfspace::new(&[-1.0], 5.0)]; nodes],
    };
    let sol = solved(synthesize_direct(&sys, &traj, &problem, vec![0.0; nodes]));
    (sys, problem, sol)
}

#[test]
fn zero_disturbance_from_the_nominal_stays_at_zero() {
    let r = bench();
    let w = vec![DVector::zeros(2); r.sol.grid.n];
    let trace = validation::simulate_closed_loop(r.prep.sys.as_ref(), &r.sol, &DVector::zeros(3), &w, 10).unwrap();
    assert_eq!(trace.len(), 10 * r.sol.grid.n + 1);
    assert!(
        trace.iter().all(|p| p.v.abs() <= 1e-12),
        "max V {}",
        trace.iter().map(|p| p.v).fold(0.0, f64::max)
    );
}

#[test]
fn linear_closed_loop_matches_direct_integration() {
    let (sys, _, sol) = linear_case();
    let (a, b, f) = (0.3, 1.0, 0.5);
    let eta0 = DVector::from_element(1, sol.q[0][(0, 0)].sqrt());
    let w = vec![DVector::from_element(1, 1.0); sol.grid.n];
    let m = 20;
    let trace = validation::simulate_closed_loop(&sys, &sol, &eta0, &w, m).unwrap();

    // State (η, Q) with K = Y/Q, Y and Z held first-order between nodes.
    let h = sol.grid.step();
    let mut y = DMatrix::from_row_slice(1, 2, &[eta0[0], sol.q[0][(0, 0)]]);
    let mut oracle = vec![y[(0, 1)].recip() * y[(0, 0)] * y[(0, 0)]];
    for k in 0..sol.grid.n {
        let (y0, y1, z0, z1) = (sol.y[k][(0, 0)], sol.y[k + 1][(0, 0)], sol.z[k][(0, 0)], sol.z[k + 1][(0, 0)]);
        let t0 = sol.grid.t(k);
        for j in 0..m {
            let (ta, tb) = (t0 + h * j as f64 / m as f64, t0 + h * (j + 1) as f64 / m as f64);
            y = rk4(
                |t, s| {
                    let l = (t - t0) / h;
                    let (yy, zz) = (y0 * (1.0 - l) + y1 * l, z0 * (1.0 - l) + z1 * l);
                    let (eta, q) = (s[(0, 0)], s[(0, 1)]);
                    DMatrix::from_row_slice(
                        1,
                        2,
                        &[(a + b * yy / q) * eta + f, 2.0 * a * q + 2.0 * b * yy + (sol.alpha + sol.lambda_w) * q + zz],
                    )
                },
                ta,
                tb,
                y,
                200,
            );
            oracle.push(y[(0, 0)] * y[(0, 0)] / y[(0, 1)]);
        }
    }
    assert_eq!(trace.len(), oracle.len());
    for (p, v) in trace.iter().zip(&oracle) {
        assert!((p.v - v).abs() <= 1e-7 * (1.0 + v.abs()), "t = {}: {} vs {}", p.t, p.v, v);
        assert!(p.v <= f64::max((-sol.alpha * p.t).exp() * trace[0].v, 1.0) + 1e-3);
    }
}

#[test]
fn large_q_perturbation_breaks_the_certificate() {
    let r = bench();
    let points = system::linearize_trajectory(r.prep.sys.as_ref(), &r.sol.nominal).unwrap();
    let clean = validation::check_dlmi(r.prep.sys.as_ref(), &r.sol, &points).unwrap();
    assert!(clean.iter().all(|&v| v <= 1e-6));
    let mut bad = r.sol.clone();
    bad.q[12] += DMatrix::identity(3, 3) * 10.0;
    let res = validation::check_dlmi(r.prep.sys.as_ref(), &bad, &points).unwrap();
    assert!(res[12] > 1e-6, "residual at perturbed node {}", res[12]);
}

#[test]
fn intersample_values_at_nodes_equal_nodal_residuals() {
    let r = bench();
    let m = 10;
    let sys = r.prep.sys.as_ref();
    let points = system::linearize_trajectory(sys, &r.sol.nominal).unwrap();
    let nodal = validation::check_dlmi(sys, &r.sol, &points).unwrap();
    let report = validation::check_intersample(sys, &r.sol, &r.cfg.constraints, m, &nodal).unwrap();
    assert_eq!(report.points.len(), m * r.sol.grid.n + 1);
    for (k, nodal_k) in nodal.iter().enumerate() {
        let p = &report.points[k * m];
        assert!((p.t - r.sol.grid.t(k)).abs() < 1e-12);
        assert!((p.dlmi - nodal_k).abs() <= 1e-6, "node {k}: {} vs {}", p.dlmi, nodal_k);
    }
    assert!(report.q_positive_definite);
    assert!(report.min_q_eigenvalue.value > 0.0);
}

#[test]
fn coarse_grid_has_larger_intersample_residual() {
    let fine = bench();
    let coarse = run_with(3);
    let worst = |r: &Run| {
        let sys = r.prep.sys.as_ref();
        let points = system::linearize_trajectory(sys, &r.sol.nominal).unwrap();
        let nodal = validation::check_dlmi(sys, &r.sol, &points).unwrap();
        validation::check_intersample(sys, &r.sol, &r.cfg.constraints, 20, &nodal)
            .unwrap()
            .worst_dlmi
            .value
    };
    let (wf, wc) = (worst(fine), worst(&coarse));
    assert!(wc > wf, "N=3 worst {wc:.3e}, N=30 worst {wf:.3e}");
}

#[test]
fn projection_contains_projected_boundary_samples() {
    let mut rng = rng(11);
    for _ in 0..20 {
        let q = rand_spd(&mut rng, 3, 0.05);
        let c = rng.gen_range(0.05..=1.0);
        let (i, j) = [(0, 1), (0, 2), (1, 2), (2, 0)][rng.gen_range(0..4)];
        let s = validation::project_funnel_2d(&q, c, i, j).unwrap();
        let s_inv = s.try_inverse().unwrap();
        let root = linalg::sqrt_psd(&q);
        let mut max_level = 0.0_f64;
        for _ in 0..2000 {
            let d = rand_vector(&mut rng, 3, 1.0);
            let eta = &root * d.normalize() / c.sqrt();
            let xi = nalgebra::Vector2::new(eta[i], eta[j]);
            max_level = max_level.max((xi.transpose() * s_inv * xi)[(0, 0)]);
        }
        assert!(max_level <= 1.0 + 1e-9, "level {max_level}");
        // Support along the first projected axis is √(Q_ii / c).
        assert!((s[(0, 0)].sqrt() - (q[(i, i)] / c).sqrt()).abs() < 1e-15);
    }
}

#[test]
fn no_constraints_gives_empty_containment() {
    let (_, mut problem, sol) = linear_case();
    problem.state_constraints.iter_mut().for_each(Vec::clear);
    problem.input_constraints.iter_mut().for_each(Vec::clear);
    assert!(validation::check_containment(&sol, &problem).is_empty());
}

#[test]
fn linear_funnel_passes_full_validation() {
    let (sys, problem, sol) = linear_case();
    let constraints = funnel::lmi::ConstraintSet {
        obstacles: vec![],
        state_halfspaces: problem.state_constraints[0].clone(),
        input_halfspaces: problem.input_constraints[0].clone(),
    };
    let input = ValidationInput {
        sys: &sys,
        sol: &sol,
        problem: &problem,
        constraints: &constraints,
        transitions: None,
    };
    let report = validation::validate(&input, &ValidationOptions::default()).unwrap();
    assert!(report.passed, "{}", report.summary());
    assert!(report.shooting_residuals.is_none());
}

#[test]
fn reports_are_deterministic_for_a_seed() {
    let r = bench();
    let opts = ValidationOptions {
        n_e: 5,
        n_ec: 5,
        seed: 3,
        ..ValidationOptions::default()
    };
    let render = || {
        let report = pipeline::run_validation(&r.cfg, &r.sol, &opts).unwrap();
        let mut json = Vec::new();
        report.write_json(&mut json).unwrap();
        let mut csv = Vec::new();
        report.write_traces_csv(&mut csv).unwrap();
        (json, csv, report.summary())
    };
    assert_eq!(render(), render());
    let other = pipeline::run_validation(&r.cfg, &r.sol, &ValidationOptions { seed: 4, ..opts }).unwrap();
    let mut json = Vec::new();
    other.write_json(&mut json).unwrap();
    assert_ne!(json, render().0);
}

#[test]
fn failing_samples_are_flagged_not_aborted() {
    let r = bench();
    let mut bad = r.sol.clone();
    bad.q[0] = -DMatrix::identity(3, 3);
    let opts = ValidationOptions {
        n_e: 3,
        n_ec: 2,
        ..ValidationOptions::default()
    };
    let mc = validation::monte_carlo_invariance(r.prep.sys.as_ref(), &bad, &opts);
    assert_eq!(mc.n_total, 5);
    assert_eq!(mc.n_passed, 0);
    assert!(mc.samples.iter().all(|s| s.failure.is_some()));
}

#[test]
fn too_coarse_dense_grid_is_rejected() {
    let opts = ValidationOptions {
        dense_grid: 5,
        ..ValidationOptions::default()
    };
    assert!(opts.problems().iter().any(|p| p.contains("dense_grid")));
}

#[test]
fn benchmark_report_passes_all_checks() {
    let r = bench();
    let report = pipeline::run_validation(&r.cfg, &r.sol, &r.cfg.validation).unwrap();
    assert!(report.passed, "{}", report.summary());
    assert_eq!(report.dlmi_residuals.len(), 31);
    assert_eq!(report.monte_carlo.n_passed, 100);
    let sys: &dyn NonlinearSystem = r.prep.sys.as_ref();
    assert_eq!(sys.name(), "unicycle");
}
