mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use common::*;
use funnel::expr::{AffExpr, EMat};
use funnel::linalg;
use funnel::lmi::{self, CCondition, DlmiPoint, FunnelProblem, Halfspace, ObjectiveWeights};
use funnel::sdp::{Clarabel, ConicProgram, ConicSolver, SolveStatus, SolverOptions};
use funnel::system::{self, NonlinearSystem};
use funnel::trajectory::TimeGrid;
use funnel::unicycle::Unicycle;

fn problem(w_qbar: f64) -> FunnelProblem {
    FunnelProblem {
        alpha: 0.7,
        lambda_w: 0.5,
        w_c: 1e3,
        w_q0: 0.1,
        w_qbar,
        q_init: DMatrix::identity(3, 3),
        q_final: DMatrix::identity(3, 3),
        state_constraints: vec![],
        input_constraints: vec![],
    }
}

#[test]
fn running_weight_is_spread_over_intervals() {
    let grid = TimeGrid::new(0.0, 5.0, 30).unwrap();
    let w = ObjectiveWeights::new(&problem(0.1), &grid);
    assert!((w.w_q - 1.0 / 60.0).abs() < 1e-15);
    assert!((w.evaluate(0.5, 2.0, &[1.0; 31]) - (500.0 - 0.2 + 31.0 / 60.0)).abs() < 1e-12);
}

#[test]
fn eigenvalue_epigraph_of_diagonal() {
    let mut prog = ConicProgram::new();
    let v = AffExpr::var(prog.var());
    prog.add_objective(&v);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
    let vi = EMat::scalar_times(&v, &DMatrix::identity(2, 2));
    prog.add_psd("eig", &vi.sub(&EMat::constant(&q)));
    let r = Clarabel.solve(&prog, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.x[0] - 3.0).abs() < 1e-7, "v = {}", r.x[0]);
}

fn unicycle_point() -> (Unicycle, system::OperatingPoint) {
    let sys = Unicycle::new();
    let at = system::operating_point(&sys, 0.0, &DVector::from_vec(vec![1.0, -0.5, 0.3]), &DVector::from_vec(vec![1.0, 0.4])).unwrap();
    (sys, at)
}

#[test]
fn nu_enters_exactly_three_blocks() {
    let (sys, at) = unicycle_point();
    let mut rng = rng(5);
    let q = rand_spd(&mut rng, 3, 0.1);
    let q_dot = rand_sym(&mut rng, 3, 1.0);
    let y = rand_matrix(&mut rng, 2, 3, 1.0);
    let h = |nu| {
        let p = DlmiPoint {
            q: &q,
            q_dot: &q_dot,
            y: &y,
            nu,
            gamma: 0.5,
        };
        lmi::build_h(&p, 0.7, 0.5, &at.jac, sys.selectors(), sys.dims()).unwrap()
    };
    let d = h(2.0) - h(1.0);
    // Block offsets: η 0..3, δp 3..5, w 5..7, δq 7..9.
    let blocks = [(0, 3), (3, 5), (5, 7), (7, 9)];
    let mut touched = Vec::new();
    for (bi, &(r0, r1)) in blocks.iter().enumerate() {
        for (bj, &(c0, c1)) in blocks.iter().enumerate().take(bi + 1) {
            if d.view((r0, c0), (r1 - r0, c1 - c0)).amax() > 0.0 {
                touched.push((bi, bj));
            }
        }
    }
    assert_eq!(touched, vec![(1, 0), (1, 1), (3, 3)]);
    assert!((d.view((7, 7), (2, 2)) + DMatrix::identity(2, 2) * 4.0).amax() < 1e-12);
}

#[test]
fn h_is_symmetric_with_nz_rows() {
    let (sys, at) = unicycle_point();
    let mut rng = rng(6);
    let q = rand_spd(&mut rng, 3, 0.1);
    let q_dot = rand_sym(&mut rng, 3, 1.0);
    let y = rand_matrix(&mut rng, 2, 3, 1.0);
    let p = DlmiPoint {
        q: &q,
        q_dot: &q_dot,
        y: &y,
        nu: 0.3,
        gamma: 0.2,
    };
    let h = lmi::build_h(&p, 0.7, 0.5, &at.jac, sys.selectors(), sys.dims()).unwrap();
    assert_eq!(h.shape(), (9, 9));
    assert_eq!(h, h.transpose());
    let m = lmi::lyapunov_m(&q, &y, &at.jac, 0.7, 0.5);
    assert!((h.view((0, 0), (3, 3)) - (m - &q_dot)).amax() < 1e-14);
}

#[test]
fn state_containment_matches_support_function() {
    let mut rng = rng(7);
    for _ in 0..200 {
        let q = rand_spd(&mut rng, 3, 0.01);
        let c = rng.gen_range(0.05..1.0);
        let a = rand_vector(&mut rng, 3, 1.0);
        let x_bar = rand_vector(&mut rng, 3, 1.0);
        let b = a.dot(&x_bar) + rng.gen_range(0.01..2.0);
        let hs = Halfspace::new(a.as_slice(), b);
        let m = lmi::build_state_containment_lmi(&EMat::from_dmatrix(&q), &c, &x_bar, &hs, 0, 0)
            .unwrap()
            .to_dmatrix();
        let support = a.dot(&x_bar) + (a.dot(&(&q * &a)) / c).sqrt();
        let psd = linalg::lambda_min(&m) >= -1e-12;
        if (support - b).abs() > 1e-6 {
            assert_eq!(psd, support <= b, "support {support}, b {b}");
        }
    }
}

#[test]
fn input_containment_matches_gain_image() {
    let mut rng = rng(8);
    for _ in 0..200 {
        let q = rand_spd(&mut rng, 3, 0.01);
        let k = rand_matrix(&mut rng, 2, 3, 1.0);
        let y = &k * &q;
        let c = rng.gen_range(0.05..1.0);
        let a = rand_vector(&mut rng, 2, 1.0);
        let u_bar = rand_vector(&mut rng, 2, 1.0);
        let b = a.dot(&u_bar) + rng.gen_range(0.01..2.0);
        let hs = Halfspace::new(a.as_slice(), b);
        let m = lmi::build_input_containment_lmi(&EMat::from_dmatrix(&q), &EMat::from_dmatrix(&y), &c, &u_bar, &hs, 0, 0)
            .unwrap()
            .to_dmatrix();
        let kta = k.transpose() * &a;
        let support = a.dot(&u_bar) + (kta.dot(&(&q * &kta)) / c).sqrt();
        if (support - b).abs() > 1e-6 {
            assert_eq!(linalg::lambda_min(&m) >= -1e-12, support <= b);
        }
    }
}

#[test]
fn violated_nominal_is_reported() {
    let hs = Halfspace::new(&[1.0, 0.0, 0.0], 0.5);
    let q = EMat::from_dmatrix(&DMatrix::<f64>::identity(3, 3));
    let err = lmi::build_state_containment_lmi(&q, &1.0, &DVector::from_vec(vec![0.6, 0.0, 0.0]), &hs, 4, 2).unwrap_err();
    let text = err.to_string();
    assert!(text.contains('4') && text.contains('2'), "{text}");
}

#[test]
fn c_conditions_three_per_node() {
    let grid = TimeGrid::new(0.0, 2.0, 4).unwrap();
    let conds = lmi::build_c_conditions(0.5, &grid);
    assert_eq!(conds.len(), 15);
    let envelope: Vec<f64> = conds
        .iter()
        .filter_map(|c| match c {
            CCondition::Envelope { coeff, .. } => Some(*coeff),
            _ => None,
        })
        .collect();
    for (k, coeff) in envelope.iter().enumerate() {
        assert!((coeff - (-0.5 * grid.t(k)).exp()).abs() < 1e-15);
    }
    let c: Vec<f64> = (0..5).map(|k| 0.2 * (0.5 * grid.t(k)).exp()).collect();
    assert!(conds.iter().all(|cc| cc.slack(&c) >= -1e-15));
    let mut bad = c.clone();
    bad[3] *= 1.01;
    assert!(conds.iter().any(|cc| cc.slack(&bad) < 0.0));
}

#[test]
fn problem_validation_lists_every_issue() {
    let mut p = problem(0.1);
    p.alpha = -1.0;
    p.lambda_w = 0.0;
    p.q_init = DMatrix::zeros(3, 3);
    let err = p.validate(Unicycle::new().dims(), 3).unwrap_err().to_string();
    for needle in ["alpha", "lambda_w", "q_init"] {
        assert!(err.contains(needle), "{err}");
    }
}
