mod common;

use nalgebra::{DMatrix, DVector};

use common::*;
use funnel::discretization::{discretize, NominalPath, VectorizedOde};
use funnel::expr::EMat;
use funnel::linalg::{self, vec};
use funnel::lmi::{self, FunnelProblem, Halfspace, ObjectiveWeights};
use funnel::sdp::SynthesisOutcome;
use funnel::system::{self, LinearSystem};
use funnel::trajectory::{integrate_nominal, InputSchedule, NominalTrajectory, TimeGrid};
use funnel::unicycle::Unicycle;
use funnel::validation;

fn lti(n: usize, state_bound: f64) -> (LinearSystem, NominalTrajectory, FunnelProblem) {
    let sys = LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.1, 0.0]),
    );
    let grid = TimeGrid::new(0.0, 1.0, n).unwrap();
    let traj = integrate_nominal(&sys, &DVector::zeros(2), &InputSchedule::constant(&[0.0]), grid).unwrap();
    let problem = FunnelProblem {
        alpha: 0.5,
        lambda_w: 0.5,
        w_c: 1e3,
        w_q0: 0.1,
        w_qbar: 0.1,
        q_init: DMatrix::identity(2, 2) * 0.1,
        q_final: DMatrix::identity(2, 2) * 0.1,
        state_constraints: vec![vec![Halfspace::new(&[1.0, 0.0], state_bound)]; n + 1],
        input_constraints: vec![vec![Halfspace::new(&[1.0], 5.0), Halfspace::new(&[-1.0], 5.0)]; n + 1],
    };
    (sys, traj, problem)
}

#[test]
fn single_interval_lti_is_feasible() {
    let (sys, traj, problem) = lti(1, 2.0);
    let sol = solved(synthesize_direct(&sys, &traj, &problem, vec![0.0; 2]));
    assert!(sol.status.is_optimal());
    assert_eq!(sol.q.len(), 2);
    for (k, (q, y)) in sol.q.iter().zip(&sol.y).enumerate() {
        assert!(linalg::lambda_min(q) > 0.0);
        assert!((&sol.k[k] * q - y).amax() <= 1e-9, "K Q − Y at node {k}");
        assert!(linalg::lambda_max(q) <= sol.v_q[k] + 1e-7);
    }
    let grid = traj.grid;
    for cond in lmi::build_c_conditions(problem.alpha, &grid) {
        assert!(cond.slack(&sol.c) >= -1e-9, "{cond:?}");
    }
    let w = ObjectiveWeights::new(&problem, &grid);
    let objective = w.evaluate(sol.c[0], linalg::logdet_spd(&sol.q[0]).unwrap(), &sol.v_q);
    assert!(
        (objective - sol.objective).abs() <= 1e-6 * (1.0 + objective.abs()),
        "{objective} vs {}",
        sol.objective
    );
}

#[test]
fn node_values_satisfy_the_program() {
    let (sys, traj, problem) = lti(4, 2.0);
    let sol = solved(synthesize_direct(&sys, &traj, &problem, vec![0.0; 5]));
    let points = system::linearize_trajectory(&sys, &traj).unwrap();
    let dlmi = validation::check_dlmi(&sys, &sol, &points).unwrap();
    assert!(dlmi.iter().all(|&r| r <= 1e-6), "{dlmi:?}");
    let ode = VectorizedOde::new(2, 1, problem.alpha, problem.lambda_w);
    let transitions = discretize(&ode, &NominalPath { sys: &sys, traj: &traj }, &traj.grid).unwrap();
    let z11 = |k: usize| vec(&sol.z[k].view((0, 0), (2, 2)).into_owned());
    for (k, tr) in transitions.iter().enumerate() {
        let next = tr.propagate(&vec(&sol.q[k]), &vec(&sol.y[k]), &vec(&sol.y[k + 1]), &z11(k), &z11(k + 1));
        assert!((next - vec(&sol.q[k + 1])).amax() <= 1e-7, "interval {k}");
    }
    // The program enforces the containment LMIs; the support-distance slack
    // derived from them carries the error amplified through `1/c` and `K`.
    for k in 0..sol.q.len() {
        let q = EMat::from_dmatrix(&sol.q[k]);
        let y = EMat::from_dmatrix(&sol.y[k]);
        for (j, hs) in problem.input_constraints[k].iter().enumerate() {
            let m = lmi::build_input_containment_lmi(&q, &y, &sol.c[k], &traj.inputs[k], hs, k, j)
                .unwrap()
                .to_dmatrix();
            assert!(linalg::lambda_min(&m) >= -1e-8, "input LMI at node {k}");
        }
        for (j, hs) in problem.state_constraints[k].iter().enumerate() {
            let m = lmi::build_state_containment_lmi(&q, &sol.c[k], &traj.states[k], hs, k, j).unwrap().to_dmatrix();
            assert!(linalg::lambda_min(&m) >= -1e-8, "state LMI at node {k}");
        }
    }
    for r in validation::check_containment(&sol, &problem) {
        assert!(r.residual >= -1e-6 * 5.0, "{r:?}");
    }
}

#[test]
fn zero_margin_bound_is_certified_infeasible() {
    let (sys, traj, problem) = lti(2, 1e-4);
    match synthesize_direct(&sys, &traj, &problem, vec![0.0; 3]) {
        SynthesisOutcome::Infeasible(report) => {
            let families: Vec<&str> = report.families.iter().map(|(f, _)| f.as_str()).collect();
            assert!(families.contains(&"state_containment"), "{families:?}");
        }
        SynthesisOutcome::Solved(_) => panic!("zero-margin bound solved"),
    }
}

#[test]
fn short_unicycle_funnel_certifies_at_nodes() {
    let sys = Unicycle::new();
    let grid = TimeGrid::new(0.0, 1.0, 5).unwrap();
    let traj = integrate_nominal(&sys, &DVector::zeros(3), &InputSchedule::constant(&[1.0, 0.3]), grid).unwrap();
    let q0 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.05, 0.05, 0.03]));
    let problem = FunnelProblem {
        alpha: 0.7,
        lambda_w: 0.5,
        w_c: 1e3,
        w_q0: 0.1,
        w_qbar: 0.1,
        q_init: q0.clone(),
        q_final: q0,
        state_constraints: vec![vec![]; 6],
        input_constraints: vec![vec![Halfspace::new(&[1.0, 0.0], 2.0), Halfspace::new(&[-1.0, 0.0], 0.0)]; 6],
    };
    let sol = solved(synthesize_direct(&sys, &traj, &problem, vec![0.12; 6]));
    let points = system::linearize_trajectory(&sys, &traj).unwrap();
    let dlmi = validation::check_dlmi(&sys, &sol, &points).unwrap();
    assert!(dlmi.iter().all(|&r| r <= 1e-6), "{dlmi:?}");
    assert!(sol.nu.iter().all(|&nu| nu > 0.0));
    assert_eq!(sol.gamma, vec![0.12; 6]);
}
