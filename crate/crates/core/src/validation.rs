//! Checks of a synthesized funnel.
//!
//! Algebraic checks (DLMI certificate, containment, boundary conditions,
//! multiple-shooting defects, the `c(t)` condition) are evaluated at the nodes
//! and must pass. The Monte-Carlo check propagates the true nonlinear closed
//! loop from the boundaries of the entry funnels under random unit-norm
//! disturbances. The inter-sample scan re-evaluates the certificate on a
//! dense grid and is informational only.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{discretization_ode_options, DiscreteTransition, NominalPath, VectorizedOde};
use crate::error::{FunnelError, Result};
use crate::linalg;
use crate::lmi::{self, ConstraintSet, DlmiPoint, FunnelProblem, Halfspace};
use crate::ode;
use crate::sdp::{self, harmonic_c, FunnelSolution};
use crate::system::{self, NonlinearSystem, OperatingPoint};
use crate::trajectory::TimeGrid;

/// Label recorded in reports for the disturbance model used.
pub const DISTURBANCE_POLICY: &str = "piecewise-constant unit-norm w, resampled every grid interval";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationOptions {
    /// Samples on the boundary of `E(t_0)`.
    pub n_e: usize,
    /// Samples on the boundary of `E_c(t_0)`.
    pub n_ec: usize,
    /// Dense-grid points per interval.
    pub dense_grid: usize,
    pub seed: u64,
    pub mc_tol: f64,
    pub dlmi_tol: f64,
    pub containment_tol: f64,
    pub boundary_tol: f64,
    pub shooting_tol: f64,
    pub c_tol: f64,
    /// Lower bound on `λ_min(Q_k)`.
    pub q_min_eig: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            n_e: 50,
            n_ec: 50,
            dense_grid: 20,
            seed: 0,
            mc_tol: 1e-3,
            dlmi_tol: 1e-6,
            containment_tol: 1e-7,
            boundary_tol: 1e-7,
            shooting_tol: 1e-7,
            c_tol: 1e-9,
            q_min_eig: 1e-9,
        }
    }
}

impl ValidationOptions {
    /// Field names and reasons for every invalid option.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dense_grid < 10 {
            out.push(format!("dense_grid: need at least 10 points per interval (got {})", self.dense_grid));
        }
        for (name, v) in [
            ("mc_tol", self.mc_tol),
            ("dlmi_tol", self.dlmi_tol),
            ("containment_tol", self.containment_tol),
            ("boundary_tol", self.boundary_tol),
            ("shooting_tol", self.shooting_tol),
            ("c_tol", self.c_tol),
        ] {
            if !(v >= 0.0) {
                out.push(format!("{name}: must be >= 0"));
            }
        }
        out
    }
}

/// `λ_max(H_k)` per node with `Q̇_k = M_k + Z¹¹_k`.
pub fn check_dlmi(sys: &dyn NonlinearSystem, sol: &FunnelSolution, points: &[OperatingPoint]) -> Result<Vec<f64>> {
    let dims = sys.dims();
    let n = dims.n_x;
    (0..sol.grid.nodes())
        .map(|k| {
            let jac = &points[k].jac;
            let m = lmi::lyapunov_m(&sol.q[k], &sol.y[k], jac, sol.alpha, sol.lambda_w);
            let q_dot = m + sol.z[k].view((0, 0), (n, n));
            let p = DlmiPoint {
                q: &sol.q[k],
                q_dot: &q_dot,
                y: &sol.y[k],
                nu: sol.nu[k],
                gamma: sol.gamma[k],
            };
            let h = lmi::build_h(&p, sol.alpha, sol.lambda_w, jac, sys.selectors(), dims).map_err(|e| match e {
                FunnelError::ZeroLipschitz { gamma, min, .. } => FunnelError::ZeroLipschitz { node: k, gamma, min },
                other => other,
            })?;
            Ok(linalg::lambda_max(&h))
        })
        .collect()
}

/// Signed containment slack of one halfspace at one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainmentResidual {
    pub family: &'static str,
    pub node: usize,
    pub index: usize,
    /// `margin − support value`; negative means violated.
    pub residual: f64,
}

/// `(b − aᵀx̄) − √(aᵀQa/c)`: distance from the funnel to the boundary.
pub fn state_containment_residual(q: &DMatrix<f64>, c: f64, x_bar: &DVector<f64>, hs: &Halfspace) -> f64 {
    let a = hs.normal();
    hs.margin(x_bar) - (a.dot(&(q * &a)) / c).max(0.0).sqrt()
}

/// `(b − aᵀū) − √(aᵀKQKᵀa/c)`.
pub fn input_containment_residual(q: &DMatrix<f64>, k: &DMatrix<f64>, c: f64, u_bar: &DVector<f64>, hs: &Halfspace) -> f64 {
    let a = hs.normal();
    let kta = k.transpose() * &a;
    hs.margin(u_bar) - (kta.dot(&(q * &kta)) / c).max(0.0).sqrt()
}

pub fn check_containment(sol: &FunnelSolution, problem: &FunnelProblem) -> Vec<ContainmentResidual> {
    let mut out = Vec::new();
    for k in 0..sol.grid.nodes() {
        for (i, hs) in problem.state_constraints[k].iter().enumerate() {
            out.push(ContainmentResidual {
                family: "state",
                node: k,
                index: i,
                residual: state_containment_residual(&sol.q[k], sol.c[k], &sol.nominal.states[k], hs),
            });
        }
        for (i, hs) in problem.input_constraints[k].iter().enumerate() {
            out.push(ContainmentResidual {
                family: "input",
                node: k,
                index: i,
                residual: input_containment_residual(&sol.q[k], &sol.k[k], sol.c[k], &sol.nominal.inputs[k], hs),
            });
        }
    }
    out
}

/// Worst value of `1/c(t) − max(1, e^{−α(t−t_0)}/c_0)` over `m` points per
/// interval of the harmonic interpolation of `c`.
pub fn c_condition_residual(grid: &TimeGrid, c: &[f64], alpha: f64, m: usize) -> f64 {
    grid.dense(m)
        .into_iter()
        .map(|(_, t)| 1.0 / harmonic_c(grid, c, t) - f64::max(1.0, (-alpha * (t - grid.t0)).exp() / c[0]))
        .fold(f64::INFINITY, f64::min)
}

pub fn check_c_condition(sol: &FunnelSolution, m: usize) -> f64 {
    c_condition_residual(&sol.grid, &sol.c, sol.alpha, m)
}

/// Orthogonal projection of `{η : ηᵀQ⁻¹η ≤ 1/c}` onto coordinates `(i, j)`:
/// the ellipse `{ξ : ξᵀ S⁻¹ ξ ≤ 1}` with `S` returned.
pub fn project_funnel_2d(q: &DMatrix<f64>, c: f64, i: usize, j: usize) -> Result<Matrix2<f64>> {
    let n = q.nrows();
    if i == j || i >= n || j >= n {
        return Err(FunnelError::InvalidArgument(format!(
            "invalid coordinate pair ({i}, {j}) for a {n}-dimensional funnel"
        )));
    }
    Ok(Matrix2::new(q[(i, i)], q[(i, j)], q[(j, i)], q[(j, j)]) / c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    /// Boundary of `E(t_0) = {ηᵀQ_0⁻¹η ≤ 1}`.
    Attractive,
    /// Boundary of `E_c(t_0) = {ηᵀQ_0⁻¹η ≤ 1/c_0}`.
    Entry,
}

/// One point of a Lyapunov trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub t: f64,
    pub v: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleResult {
    pub index: usize,
    pub kind: SampleKind,
    pub max_v: f64,
    pub max_cv: f64,
    /// `max_t V(t) − max(e^{−α(t−t_0)} V(t_0), 1)`.
    pub max_attractivity: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub disturbance_policy: &'static str,
    pub seed: u64,
    pub n_passed: usize,
    pub n_total: usize,
    pub worst_v_attractive: f64,
    pub worst_cv_entry: f64,
    pub worst_attractivity: f64,
    pub samples: Vec<SampleResult>,
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let g: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm = g.norm();
        if norm > 1e-12 {
            return g / norm;
        }
    }
}

/// Propagates one deviation through the nonlinear closed loop
/// `ẋ = f(t, x, ū + K(t)(x − x̄), w)` alongside the nominal and `Q(t)`, with
/// `w[k]` held on interval `k`. Returns `V` on `m` points per interval.
pub fn simulate_closed_loop(sys: &dyn NonlinearSystem, sol: &FunnelSolution, eta0: &DVector<f64>, w: &[DVector<f64>], m: usize) -> Result<Vec<TracePoint>> {
    if m == 0 {
        return Err(FunnelError::InvalidArgument("need at least one point per interval".into()));
    }
    if w.len() != sol.grid.n {
        return Err(FunnelError::DimensionMismatch {
            context: "disturbance sequence",
            expected: sol.grid.n,
            got: w.len(),
        });
    }
    let dims = sys.dims();
    let n = dims.n_x;
    let ode_q = VectorizedOde::new(n, dims.n_u, sol.alpha, sol.lambda_w);
    let traj = &sol.nominal;
    let opts = discretization_ode_options();
    let mut state = DVector::zeros(2 * n + n * n);
    state.rows_mut(0, n).copy_from(&traj.states[0]);
    state.rows_mut(n, n).copy_from(&(&traj.states[0] + eta0));
    state.rows_mut(2 * n, n * n).copy_from(&linalg::vec(&sol.q[0]));
    let v_at = |s: &DVector<f64>| -> Option<f64> {
        let q = linalg::unvec(&s.rows(2 * n, n * n).into_owned(), n, n);
        let eta = s.rows(n, n) - s.rows(0, n);
        linalg::inv_quad_form(&q, &eta)
    };
    let mut trace = Vec::with_capacity(sol.grid.n * m + 1);
    trace.push(TracePoint {
        t: sol.grid.t0,
        v: v_at(&state).ok_or_else(|| FunnelError::InvalidArgument("Q_0 is not positive definite".into()))?,
        c: sol.c[0],
    });
    for (k, w_k) in w.iter().enumerate() {
        // Node values are re-imposed on Q and x̄ so errors do not accumulate
        // across intervals; the perturbed state is carried over.
        state.rows_mut(0, n).copy_from(&traj.states[k]);
        let rhs = |t: f64, s: &DVector<f64>, ds: &mut DVector<f64>| {
            let xb = s.rows(0, n).into_owned();
            let x = s.rows(n, n).into_owned();
            let qv = s.rows(2 * n, n * n).into_owned();
            let ub = traj.input_at(t);
            let (y, _, z) = sol.foh_at(t);
            let jac = sys
                .jacobians(t, &xb, &ub)
                .unwrap_or_else(|| system::finite_difference_jacobians(sys, t, &xb, &ub));
            let z11 = z.view((0, 0), (n, n)).into_owned();
            let dq = ode_q.rhs(&jac.a, &jac.b, &qv, &linalg::vec(&y), &linalg::vec(&z11));
            let q = linalg::unvec(&qv, n, n);
            let gain = linalg::solve_right_spd(&y, &q).unwrap_or_else(|| DMatrix::from_element(y.nrows(), n, f64::NAN));
            let u = &ub + gain * (&x - &xb);
            ds.rows_mut(0, n).copy_from(&sys.dynamics(t, &xb, &ub, &DVector::zeros(dims.n_w)));
            ds.rows_mut(n, n).copy_from(&sys.dynamics(t, &x, &u, w_k));
            ds.rows_mut(2 * n, n * n).copy_from(&dq);
        };
        let (a, b) = (sol.grid.t(k), sol.grid.t(k + 1));
        let times: Vec<f64> = (0..=m).map(|j| if j == m { b } else { a + (b - a) * j as f64 / m as f64 }).collect();
        let states = ode::integrate_through(rhs, &times, state.clone(), &opts)?;
        for (t, s) in times.iter().zip(&states).skip(1) {
            let v = v_at(s).ok_or_else(|| FunnelError::InvalidArgument(format!("Q(t) lost positive definiteness at t = {t}")))?;
            trace.push(TracePoint { t: *t, v, c: sol.c_at(*t) });
        }
        state = states.last().expect("non-empty").clone();
        state.rows_mut(2 * n, n * n).copy_from(&linalg::vec(&sol.q[k + 1]));
    }
    Ok(trace)
}

fn summarize(index: usize, kind: SampleKind, trace: Vec<TracePoint>, alpha: f64, t0: f64, tol: f64) -> SampleResult {
    let v0 = trace[0].v;
    let max_v = trace.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max);
    let max_cv = trace.iter().map(|p| p.c * p.v).fold(f64::NEG_INFINITY, f64::max);
    let max_attractivity = trace
        .iter()
        .map(|p| p.v - f64::max((-alpha * (p.t - t0)).exp() * v0, 1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let invariant = match kind {
        SampleKind::Attractive => max_v <= 1.0 + tol,
        SampleKind::Entry => max_cv <= 1.0 + tol,
    };
    SampleResult {
        index,
        kind,
        max_v,
        max_cv,
        max_attractivity,
        passed: invariant && max_attractivity <= tol,
        failure: None,
        trace,
    }
}

/// Samples `n_e` points on `∂E(t_0)` and `n_ec` on `∂E_c(t_0)` and propagates
/// each under its own seeded disturbance sequence.
pub fn monte_carlo_invariance(sys: &dyn NonlinearSystem, sol: &FunnelSolution, opts: &ValidationOptions) -> MonteCarloReport {
    let n = sol.n_x();
    let n_w = sys.dims().n_w;
    let root = linalg::sqrt_psd(&sol.q[0]);
    let jobs: Vec<(usize, SampleKind)> = (0..opts.n_e)
        .map(|i| (i, SampleKind::Attractive))
        .chain((0..opts.n_ec).map(|i| (opts.n_e + i, SampleKind::Entry)))
        .collect();
    let samples: Vec<SampleResult> = jobs
        .par_iter()
        .map(|&(index, kind)| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(opts.seed, index));
            let dir = unit_vector(&mut rng, n);
            let scale = match kind {
                SampleKind::Attractive => 1.0,
                SampleKind::Entry => 1.0 / sol.c[0].sqrt(),
            };
            let eta0 = &root * dir * scale;
            let w: Vec<DVector<f64>> = (0..sol.grid.n)
                .map(|_| if n_w == 0 { DVector::zeros(0) } else { unit_vector(&mut rng, n_w) })
                .collect();
            match simulate_closed_loop(sys, sol, &eta0, &w, opts.dense_grid) {
                Ok(trace) => summarize(index, kind, trace, sol.alpha, sol.grid.t0, opts.mc_tol),
                Err(e) => SampleResult {
                    index,
                    kind,
                    max_v: f64::NAN,
                    max_cv: f64::NAN,
                    max_attractivity: f64::NAN,
                    passed: false,
                    failure: Some(e.to_string()),
                    trace: Vec::new(),
                },
            }
        })
        .collect();
    let worst = |kind: Option<SampleKind>, f: fn(&SampleResult) -> f64| {
        samples
            .iter()
            .filter(|s| kind.is_none_or(|k| s.kind == k))
            .map(f)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    MonteCarloReport {
        disturbance_policy: DISTURBANCE_POLICY,
        seed: opts.seed,
        n_passed: samples.iter().filter(|s| s.passed).count(),
        n_total: samples.len(),
        worst_v_attractive: worst(Some(SampleKind::Attractive), |s| s.max_v),
        worst_cv_entry: worst(Some(SampleKind::Entry), |s| s.max_cv),
        worst_attractivity: worst(None, |s| s.max_attractivity),
        samples,
    }
}

/// A worst value and where it occurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Worst {
    pub t: f64,
    pub value: f64,
}

impl Worst {
    fn max() -> Self {
        Self {
            t: f64::NAN,
            value: f64::NEG_INFINITY,
        }
    }

    fn min() -> Self {
        Self {
            t: f64::NAN,
            value: f64::INFINITY,
        }
    }

    fn raise(&mut self, t: f64, v: f64) {
        if v > self.value {
            *self = Self { t, value: v };
        }
    }

    fn lower(&mut self, t: f64, v: f64) {
        if v < self.value {
            *self = Self { t, value: v };
        }
    }
}

/// Dense-grid diagnostics between nodes. Never part of the pass/fail verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntersampleReport {
    pub points_per_interval: usize,
    /// Largest `λ_max(H(t))` on the dense grid.
    pub worst_dlmi: Worst,
    /// Largest `λ_max(H)` at the nodes, for comparison.
    pub worst_nodal_dlmi: f64,
    pub worst_state_margin: Worst,
    pub worst_input_margin: Worst,
    pub min_q_eigenvalue: Worst,
    pub q_positive_definite: bool,
    /// Every evaluated point, node `t_0` first.
    #[serde(skip)]
    pub points: Vec<IntersamplePoint>,
}

/// Diagnostics at one dense-grid time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntersamplePoint {
    pub t: f64,
    /// `NaN` where `Q(t)` is not positive definite.
    pub dlmi: f64,
    pub state_margin: f64,
    pub input_margin: f64,
    pub min_q_eigenvalue: f64,
}

/// Reconstructs `Q(t)` on a dense grid and re-evaluates the differential LMI
/// and the containment margins there, with `γ(t)` interpolated linearly and
/// obstacles re-linearized at `x̄(t)`.
pub fn check_intersample(sys: &dyn NonlinearSystem, sol: &FunnelSolution, constraints: &ConstraintSet, m: usize, nodal: &[f64]) -> Result<IntersampleReport> {
    let dims = sys.dims();
    let n = dims.n_x;
    let path = NominalPath { sys, traj: &sol.nominal };
    let per_interval: Vec<Vec<sdp::FunnelPoint>> = (0..sol.grid.n)
        .into_par_iter()
        .map(|k| {
            let (a, b) = (sol.grid.t(k), sol.grid.t(k + 1));
            let times: Vec<f64> = (1..=m).map(|j| if j == m { b } else { a + (b - a) * j as f64 / m as f64 }).collect();
            sdp::reconstruct_interval(sol, &path, k, &times)
        })
        .collect::<Result<_>>()?;
    let mut report = IntersampleReport {
        points_per_interval: m,
        worst_dlmi: Worst::max(),
        worst_nodal_dlmi: nodal.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        worst_state_margin: Worst::min(),
        worst_input_margin: Worst::min(),
        min_q_eigenvalue: Worst::min(),
        q_positive_definite: true,
        points: Vec::with_capacity(sol.grid.n * m + 1),
    };
    let start = sdp::FunnelPoint {
        t: sol.grid.t0,
        q: sol.q[0].clone(),
        y: sol.y[0].clone(),
        k: Some(sol.k[0].clone()),
        c: sol.c[0],
        nu: sol.nu[0],
        z: sol.z[0].clone(),
        aux: sol.nominal.states[0].clone(),
    };
    for (k, pts) in std::iter::once((0, vec![start])).chain(per_interval.into_iter().enumerate()) {
        for p in pts {
            let t = p.t;
            let eig = linalg::lambda_min(&p.q);
            report.min_q_eigenvalue.lower(t, eig);
            let mut row = IntersamplePoint {
                t,
                dlmi: f64::NAN,
                state_margin: f64::INFINITY,
                input_margin: f64::INFINITY,
                min_q_eigenvalue: eig,
            };
            if eig <= 0.0 {
                report.q_positive_definite = false;
                report.points.push(row);
                continue;
            }
            let u_bar = sol.nominal.input_at(t);
            let jac = system::linearize(sys, t, &p.aux, &u_bar)?;
            let (lm, lp) = sol.grid.foh_weights(k, t);
            let gamma = sol.gamma[k] * lm + sol.gamma[k + 1] * lp;
            let m_t = lmi::lyapunov_m(&p.q, &p.y, &jac, sol.alpha, sol.lambda_w);
            let q_dot = m_t + p.z.view((0, 0), (n, n));
            let point = DlmiPoint {
                q: &p.q,
                q_dot: &q_dot,
                y: &p.y,
                nu: p.nu,
                gamma,
            };
            let h = lmi::build_h(&point, sol.alpha, sol.lambda_w, &jac, sys.selectors(), dims)?;
            row.dlmi = linalg::lambda_max(&h);
            for hs in constraints.state_at(&p.aux)? {
                row.state_margin = row.state_margin.min(state_containment_residual(&p.q, p.c, &p.aux, &hs));
            }
            if let Some(gain) = &p.k {
                for hs in &constraints.input_halfspaces {
                    row.input_margin = row.input_margin.min(input_containment_residual(&p.q, gain, p.c, &u_bar, hs));
                }
            }
            report.worst_dlmi.raise(t, row.dlmi);
            report.worst_state_margin.lower(t, row.state_margin);
            report.worst_input_margin.lower(t, row.input_margin);
            report.points.push(row);
        }
    }
    Ok(report)
}

/// Everything a validation run needs besides the options.
#[derive(Clone, Copy)]
pub struct ValidationInput<'a> {
    pub sys: &'a dyn NonlinearSystem,
    pub sol: &'a FunnelSolution,
    pub problem: &'a FunnelProblem,
    pub constraints: &'a ConstraintSet,
    /// When given, multiple-shooting defects are checked as well.
    pub transitions: Option<&'a [DiscreteTransition]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value, compared against `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_node: Option<usize>,
}

fn worst_by<F: Fn(f64, f64) -> bool>(values: &[f64], better: F) -> (Option<usize>, f64) {
    values.iter().copied().enumerate().fold((None, f64::NAN), |(bi, bv), (i, v)| {
        if bi.is_none() || !better(v, bv) || v.is_nan() {
            (Some(i), v)
        } else {
            (bi, bv)
        }
    })
}

fn upper_check(name: &'static str, values: &[f64], tol: f64) -> Check {
    let (node, worst) = worst_by(values, |v, b| v <= b);
    Check {
        name,
        passed: values.iter().all(|v| *v <= tol),
        worst,
        tolerance: tol,
        worst_node: node,
    }
}

fn lower_check(name: &'static str, values: &[f64], tol: f64) -> Check {
    let (node, worst) = worst_by(values, |v, b| v >= b);
    Check {
        name,
        passed: values.iter().all(|v| *v >= tol),
        worst,
        tolerance: tol,
        worst_node: node,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub options: ValidationOptions,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub dlmi_residuals: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shooting_residuals: Option<Vec<f64>>,
    pub containment: Vec<ContainmentResidual>,
    pub c_condition_residual: f64,
    pub monte_carlo: MonteCarloReport,
    pub intersample: IntersampleReport,
}

/// Runs every check.
pub fn validate(input: &ValidationInput<'_>, opts: &ValidationOptions) -> Result<ValidationReport> {
    if let Some(p) = opts.problems().first() {
        return Err(FunnelError::InvalidArgument(format!("validation option {p}")));
    }
    let ValidationInput { sys, sol, problem, .. } = *input;
    let points = system::linearize_trajectory(sys, &sol.nominal)?;
    let dlmi = check_dlmi(sys, sol, &points)?;
    let mut checks = vec![upper_check("dlmi_certificate", &dlmi, opts.dlmi_tol)];

    let containment = check_containment(sol, problem);
    let margins: Vec<f64> = containment.iter().map(|c| c.residual).collect();
    let mut cc = lower_check("containment", &margins, -opts.containment_tol);
    cc.worst_node = cc.worst_node.map(|i| containment[i].node);
    checks.push(cc);

    let n_last = sol.grid.n;
    let initial = linalg::lambda_min(&(&sol.q[0] - &problem.q_init * sol.c[0]));
    let fin = linalg::lambda_min(&(&problem.q_final * sol.c[n_last] - &sol.q[n_last]));
    let mut bc = lower_check("boundary_conditions", &[initial, fin], -opts.boundary_tol);
    bc.worst_node = bc.worst_node.map(|i| if i == 0 { 0 } else { n_last });
    checks.push(bc);

    let q_eigs: Vec<f64> = sol.q.iter().map(linalg::lambda_min).collect();
    checks.push(lower_check("q_positive_definite", &q_eigs, opts.q_min_eig));

    let c_bounds: Vec<f64> = sol.c.iter().map(|&c| c.min(1.0 - c)).collect();
    checks.push(lower_check("c_bounds", &c_bounds, -opts.c_tol));
    let c_res = check_c_condition(sol, opts.dense_grid);
    checks.push(lower_check("c_condition_dense", &[c_res], -opts.c_tol));

    let shooting = input.transitions.map(|tr| sol.shooting_residuals(tr));
    if let Some(s) = &shooting {
        checks.push(upper_check("multiple_shooting", s, opts.shooting_tol));
    }

    let mc = monte_carlo_invariance(sys, sol, opts);
    checks.push(Check {
        name: "monte_carlo_invariance",
        passed: mc.n_passed == mc.n_total,
        worst: f64::max(mc.worst_v_attractive, mc.worst_cv_entry) - 1.0,
        tolerance: opts.mc_tol,
        worst_node: None,
    });
    checks.push(Check {
        name: "monte_carlo_attractivity",
        passed: mc.samples.iter().all(|s| s.max_attractivity <= opts.mc_tol),
        worst: mc.worst_attractivity,
        tolerance: opts.mc_tol,
        worst_node: None,
    });

    let intersample = check_intersample(sys, sol, input.constraints, opts.dense_grid, &dlmi)?;
    Ok(ValidationReport {
        options: *opts,
        passed: checks.iter().all(|c| c.passed),
        checks,
        dlmi_residuals: dlmi,
        shooting_residuals: shooting,
        containment,
        c_condition_residual: c_res,
        monte_carlo: mc,
        intersample,
    })
}

impl ValidationReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Plain-text summary, one line per check.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let node = c.worst_node.map(|k| format!(" (node {k})")).unwrap_or_default();
            s.push_str(&format!(
                "{:<26} {}  worst {:+.3e}{}  tol {:.1e}\n",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.worst,
                node,
                c.tolerance
            ));
        }
        let mc = &self.monte_carlo;
        s.push_str(&format!(
            "monte carlo samples        {}/{} passed ({})\n",
            mc.n_passed, mc.n_total, mc.disturbance_policy
        ));
        let is = &self.intersample;
        s.push_str(&format!(
            "inter-sample (info)        max λ_max(H) {:+.3e} at t = {:.4} (nodes {:+.3e}); min state margin {:+.3e}; min input margin {:+.3e}; Q(t) PD: {}\n",
            is.worst_dlmi.value, is.worst_dlmi.t, is.worst_nodal_dlmi, is.worst_state_margin.value, is.worst_input_margin.value, is.q_positive_definite
        ));
        s.push_str(if self.passed { "overall: PASS\n" } else { "overall: FAIL\n" });
        s
    }

    /// `sample,kind,t,V,cV` rows for every Monte-Carlo trace.
    pub fn write_traces_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample", "kind", "t", "V", "cV"])?;
        for s in &self.monte_carlo.samples {
            let kind = match s.kind {
                SampleKind::Attractive => "E",
                SampleKind::Entry => "Ec",
            };
            for p in &s.trace {
                w.write_record([
                    s.index.to_string(),
                    kind.to_string(),
                    format!("{:?}", p.t),
                    format!("{:?}", p.v),
                    format!("{:?}", p.c * p.v),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
