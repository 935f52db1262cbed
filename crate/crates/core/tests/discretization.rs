mod common;

use nalgebra::DMatrix;

use common::*;
use funnel::discretization::{commutation_matrix, discretize, FnPath, VectorizedOde};
use funnel::linalg::{unvec, vec};
use funnel::trajectory::TimeGrid;

#[test]
fn vectorized_operators_match_matrix_products() {
    let mut rng = rng(21);
    let ode = VectorizedOde::new(3, 2, 0.7, 0.5);
    for _ in 0..50 {
        let a = rand_matrix(&mut rng, 3, 3, 2.0);
        let b = rand_matrix(&mut rng, 3, 2, 2.0);
        let q = rand_sym(&mut rng, 3, 1.0);
        let y = rand_matrix(&mut rng, 2, 3, 1.0);
        let z = rand_sym(&mut rng, 3, 1.0);
        let aq = &a * &q + &q * a.transpose() + &q * 1.2;
        let by = &b * &y + y.transpose() * b.transpose();
        assert!(rel_err(&unvec(&(ode.a_q(&a) * vec(&q)), 3, 3), &aq) <= 1e-13);
        assert!(rel_err(&unvec(&(ode.b_q(&b) * vec(&y)), 3, 3), &by) <= 1e-13);
        let rhs = ode.rhs(&a, &b, &vec(&q), &vec(&y), &vec(&z));
        assert!(rel_err(&unvec(&rhs, 3, 3), &(aq + by + z)) <= 1e-13);
    }
}

#[test]
fn commutation_of_two_by_two() {
    #[rustfmt::skip]
    let expected = DMatrix::from_row_slice(4, 4, &[
        1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    ]);
    assert_eq!(commutation_matrix(2, 2), expected);
    let n = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(commutation_matrix(2, 3) * vec(&n), vec(&n.transpose()));
}

/// `Q̇ = AQ + QAᵀ + BY + YᵀBᵀ + (α + λ_w) Q + Z` with first-order-hold `Y`, `Z`.
fn rk4_interval(
    ode: &VectorizedOde,
    ab: &dyn Fn(f64) -> (DMatrix<f64>, DMatrix<f64>),
    (t0, t1): (f64, f64),
    q0: &DMatrix<f64>,
    (y0, y1): (&DMatrix<f64>, &DMatrix<f64>),
    (z0, z1): (&DMatrix<f64>, &DMatrix<f64>),
) -> DMatrix<f64> {
    let h = t1 - t0;
    rk4(
        |t, q| {
            let l = (t - t0) / h;
            let (a, b) = ab(t);
            let y = y0 * (1.0 - l) + y1 * l;
            let z = z0 * (1.0 - l) + z1 * l;
            unvec(&ode.rhs(&a, &b, &vec(q), &vec(&y), &vec(&z)), ode.n_x, ode.n_x)
        },
        t0,
        t1,
        q0.clone(),
        400,
    )
}

#[test]
fn transitions_match_direct_integration() {
    let mut rng = rng(22);
    let ode = VectorizedOde::new(3, 2, 0.7, 0.5);
    let (a0, a1) = (rand_matrix(&mut rng, 3, 3, 1.0), rand_matrix(&mut rng, 3, 3, 0.5));
    let (b0, b1) = (rand_matrix(&mut rng, 3, 2, 1.0), rand_matrix(&mut rng, 3, 2, 0.5));
    let ab = move |t: f64| (&a0 + &a1 * t.sin(), &b0 + &b1 * t);
    let grid = TimeGrid::new(0.0, 1.5, 5).unwrap();
    let path = FnPath(ab.clone());
    let transitions = discretize(&ode, &path, &grid).unwrap();
    for (k, tr) in transitions.iter().enumerate() {
        let q0 = rand_spd(&mut rng, 3, 0.1);
        let (y0, y1) = (rand_matrix(&mut rng, 2, 3, 1.0), rand_matrix(&mut rng, 2, 3, 1.0));
        let (z0, z1) = (rand_sym(&mut rng, 3, 1.0), rand_sym(&mut rng, 3, 1.0));
        let got = unvec(&tr.propagate(&vec(&q0), &vec(&y0), &vec(&y1), &vec(&z0), &vec(&z1)), 3, 3);
        let want = rk4_interval(&ode, &ab, (grid.t(k), grid.t(k + 1)), &q0, (&y0, &y1), (&z0, &z1));
        assert!(rel_err(&got, &want) <= 1e-9, "interval {k}: {:e}", rel_err(&got, &want));
    }
}

#[test]
fn transitions_are_linear_in_the_node_values() {
    let mut rng = rng(23);
    let ode = VectorizedOde::new(2, 1, 0.3, 0.2);
    let a = rand_matrix(&mut rng, 2, 2, 1.0);
    let b = rand_matrix(&mut rng, 2, 1, 1.0);
    let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
    let tr = &discretize(&ode, &FnPath(move |_| (a.clone(), b.clone())), &grid).unwrap()[0];
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        [
            rand_vector(rng, 4, 1.0),
            rand_vector(rng, 2, 1.0),
            rand_vector(rng, 2, 1.0),
            rand_vector(rng, 4, 1.0),
            rand_vector(rng, 4, 1.0),
        ]
    };
    let (u, v) = (draw(&mut rng), draw(&mut rng));
    let p = |x: &[nalgebra::DVector<f64>; 5]| tr.propagate(&x[0], &x[1], &x[2], &x[3], &x[4]);
    let sum: [nalgebra::DVector<f64>; 5] = std::array::from_fn(|i| &u[i] * 2.0 + &v[i]);
    assert!((p(&sum) - (p(&u) * 2.0 + p(&v))).amax() <= 1e-12);
}
