//! Exact first-order-hold discretization of the vectorized Lyapunov matrix ODE.
//!
//! The first block of the differential matrix equality reads
//! `Q̇ = AQ + QAᵀ + BY + YᵀBᵀ + (α + λ_w) Q + Z¹¹`. In column-major `vec`
//! coordinates this is the linear ODE
//!
//! ```text
//! q̇ = A_q(t) q + B_q(t) y + S_q z,
//! A_q = I⊗A + A⊗I + (α+λ_w) I⊗I,   B_q = I⊗B + (B⊗I) K^c,   S_q = I
//! ```
//!
//! With `y` and `z` interpolated linearly between nodes, integrating this ODE
//! over `[t_k, t_{k+1}]` gives the multiple-shooting map
//! `q_{k+1} = A_k q_k + B⁻ y_k + B⁺ y_{k+1} + S⁻ z_k + S⁺ z_{k+1}`.
//! The transition and input matrices are obtained by integrating the
//! sensitivity system alongside the nominal state, so `A(t)` and `B(t)` are the
//! true Jacobians along the trajectory rather than an interpolation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{FunnelError, Result};
use crate::linalg::{self, kron};
use crate::ode::{self, OdeOptions};
use crate::system::{self, NonlinearSystem};
use crate::trajectory::{NominalTrajectory, TimeGrid};

/// Permutation `K^c` with `K^c vec(N) = vec(Nᵀ)` for `N` of shape `rows × cols`.
pub fn commutation_matrix(rows: usize, cols: usize) -> DMatrix<f64> {
    let n = rows * cols;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..rows {
        for j in 0..cols {
            k[(j + i * cols, i + j * rows)] = 1.0;
        }
    }
    k
}

/// Coefficients of the vectorized ODE for fixed `(α, λ_w)` and dimensions.
#[derive(Debug, Clone)]
pub struct VectorizedOde {
    pub n_x: usize,
    pub n_u: usize,
    pub alpha: f64,
    pub lambda_w: f64,
    /// Commutation matrix for `n_u × n_x` matrices.
    pub kc: DMatrix<f64>,
}

impl VectorizedOde {
    pub fn new(n_x: usize, n_u: usize, alpha: f64, lambda_w: f64) -> Self {
        Self {
            n_x,
            n_u,
            alpha,
            lambda_w,
            kc: commutation_matrix(n_u, n_x),
        }
    }

    /// `A_q` for a given `A`.
    pub fn a_q(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let id = DMatrix::identity(self.n_x, self.n_x);
        kron(&id, a) + kron(a, &id) + DMatrix::identity(self.n_x * self.n_x, self.n_x * self.n_x) * (self.alpha + self.lambda_w)
    }

    /// `B_q` for a given `B`.
    pub fn b_q(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let id = DMatrix::identity(self.n_x, self.n_x);
        kron(&id, b) + kron(b, &id) * &self.kc
    }

    /// `S_q = I`.
    pub fn s_q(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n_x * self.n_x, self.n_x * self.n_x)
    }

    /// `A_q q + B_q y + z` written directly in matrix form.
    pub fn rhs(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let n = self.n_x;
        let qm = linalg::unvec(q, n, n);
        let ym = linalg::unvec(y, self.n_u, n);
        let aq = a * &qm;
        let by = b * &ym;
        let mut out = aq.transpose() + aq + by.transpose() + by + qm * (self.alpha + self.lambda_w);
        out += linalg::unvec(z, n, n);
        linalg::vec(&out)
    }
}

/// Source of `A(t)`, `B(t)` on each interval, optionally driven by an
/// auxiliary state (the nominal trajectory) integrated alongside.
pub trait LinearizationPath: Sync {
    fn aux_dim(&self) -> usize;
    fn aux_init(&self, k: usize) -> DVector<f64>;
    fn aux_rhs(&self, k: usize, t: f64, aux: &DVector<f64>) -> DVector<f64>;
    fn jacobians(&self, k: usize, t: f64, aux: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);
}

/// Jacobians of a nonlinear system along its nominal trajectory. The nominal
/// state is re-integrated in every interval from the node value.
pub struct NominalPath<'a> {
    pub sys: &'a dyn NonlinearSystem,
    pub traj: &'a NominalTrajectory,
}

impl LinearizationPath for NominalPath<'_> {
    fn aux_dim(&self) -> usize {
        self.sys.dims().n_x
    }

    fn aux_init(&self, k: usize) -> DVector<f64> {
        self.traj.states[k].clone()
    }

    fn aux_rhs(&self, _k: usize, t: f64, aux: &DVector<f64>) -> DVector<f64> {
        let w0 = DVector::zeros(self.sys.dims().n_w);
        self.sys.dynamics(t, aux, &self.traj.input_at(t), &w0)
    }

    fn jacobians(&self, _k: usize, t: f64, aux: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let u = self.traj.input_at(t);
        let j = self
            .sys
            .jacobians(t, aux, &u)
            .unwrap_or_else(|| system::finite_difference_jacobians(self.sys, t, aux, &u));
        (j.a, j.b)
    }
}

/// Explicit `A(t)`, `B(t)` functions with no auxiliary state.
pub struct FnPath<F>(pub F);

impl<F> LinearizationPath for FnPath<F>
where
    F: Fn(f64) -> (DMatrix<f64>, DMatrix<f64>) + Sync,
{
    fn aux_dim(&self) -> usize {
        0
    }
    fn aux_init(&self, _k: usize) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn aux_rhs(&self, _k: usize, _t: f64, _aux: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn jacobians(&self, _k: usize, t: f64, _aux: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.0)(t)
    }
}

/// Jacobians at the nominal state and first-order-hold input at `t`.
pub fn interpolate_a_b(sys: &dyn NonlinearSystem, traj: &NominalTrajectory, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if t < traj.grid.t0 || t > traj.grid.tf {
        return Err(FunnelError::InvalidArgument(format!("t = {t} outside the trajectory horizon")));
    }
    let x = traj.state_at(sys, t)?;
    let j = system::linearize(sys, t, &x, &traj.input_at(t))?;
    Ok((j.a, j.b))
}

/// Multiple-shooting matrices of one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTransition {
    pub a_q: DMatrix<f64>,
    pub b_minus: DMatrix<f64>,
    pub b_plus: DMatrix<f64>,
    pub s_minus: DMatrix<f64>,
    pub s_plus: DMatrix<f64>,
}

impl DiscreteTransition {
    pub fn propagate(&self, q: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, z0: &DVector<f64>, z1: &DVector<f64>) -> DVector<f64> {
        &self.a_q * q + &self.b_minus * y0 + &self.b_plus * y1 + &self.s_minus * z0 + &self.s_plus * z1
    }
}

/// Tolerances used for the sensitivity integration.
pub fn discretization_ode_options() -> OdeOptions {
    OdeOptions {
        rtol: 1e-10,
        atol: 1e-12,
        min_steps: 10,
        ..OdeOptions::default()
    }
}

/// Discretizes interval `k = [t0, t1]` by integrating
/// `Ẋ = A_q X + [0 | B_q λ^m | B_q λ^p | λ^m I | λ^p I]`, `X(t0) = [I | 0 | 0 | 0 | 0]`.
pub fn foh_discretize(ode: &VectorizedOde, path: &dyn LinearizationPath, k: usize, t0: f64, t1: f64, opts: &OdeOptions) -> Result<DiscreteTransition> {
    if !(t1 > t0) {
        return Err(FunnelError::Discretization {
            interval: k,
            reason: format!("empty interval [{t0}, {t1}]"),
        });
    }
    let nq = ode.n_x * ode.n_x;
    let ny = ode.n_x * ode.n_u;
    let cols = nq + 2 * ny + 2 * nq;
    let n_aux = path.aux_dim();
    let mut y0 = DVector::zeros(n_aux + nq * cols);
    y0.rows_mut(0, n_aux).copy_from(&path.aux_init(k));
    for i in 0..nq {
        y0[n_aux + i + i * nq] = 1.0;
    }
    let h = t1 - t0;
    let rhs = |t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
        let aux = y.rows(0, n_aux).into_owned();
        dy.rows_mut(0, n_aux).copy_from(&path.aux_rhs(k, t, &aux));
        let (a, b) = path.jacobians(k, t, &aux);
        let a_q = ode.a_q(&a);
        let b_q = ode.b_q(&b);
        let lp = (t - t0) / h;
        let lm = 1.0 - lp;
        let x = DMatrix::from_column_slice(nq, cols, &y.as_slice()[n_aux..]);
        let mut dx = &a_q * x;
        let mut add = |c0: usize, m: &DMatrix<f64>, s: f64| {
            let mut v = dx.columns_mut(c0, m.ncols());
            v += m * s;
        };
        add(nq, &b_q, lm);
        add(nq + ny, &b_q, lp);
        let id = ode.s_q();
        add(nq + 2 * ny, &id, lm);
        add(nq + 2 * ny + nq, &id, lp);
        dy.rows_mut(n_aux, nq * cols).copy_from_slice(dx.as_slice());
    };
    let y1 = ode::integrate(rhs, t0, t1, y0, opts).map_err(|e| FunnelError::Discretization {
        interval: k,
        reason: e.to_string(),
    })?;
    let x = DMatrix::from_column_slice(nq, cols, &y1.as_slice()[n_aux..]);
    Ok(DiscreteTransition {
        a_q: x.columns(0, nq).into_owned(),
        b_minus: x.columns(nq, ny).into_owned(),
        b_plus: x.columns(nq + ny, ny).into_owned(),
        s_minus: x.columns(nq + 2 * ny, nq).into_owned(),
        s_plus: x.columns(nq + 2 * ny + nq, nq).into_owned(),
    })
}

/// Discretizes every interval of `grid` (in parallel).
pub fn discretize(ode: &VectorizedOde, path: &dyn LinearizationPath, grid: &TimeGrid) -> Result<Vec<DiscreteTransition>> {
    let opts = discretization_ode_options();
    (0..grid.n)
        .into_par_iter()
        .map(|k| foh_discretize(ode, path, k, grid.t(k), grid.t(k + 1), &opts))
        .collect()
}
