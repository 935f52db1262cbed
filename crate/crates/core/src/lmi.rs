//! Matrix inequalities and cost terms of the funnel synthesis problem.
//!
//! With `V(t, η) = ηᵀ Q(t)⁻¹ η` and feedback `K = Y Q⁻¹`, the Lyapunov decrease
//! `V̇ ≤ −αV` holds for every admissible nonlinearity and disturbance when the
//! block matrix built by [`build_h`] is negative semidefinite. The containment
//! LMIs keep the state funnel `{ηᵀQ⁻¹η ≤ 1/c}` and the induced input funnel
//! inside linearized constraint halfspaces.
//!
//! The containment builders are generic over [`LinearEntry`] so the same code
//! produces numeric matrices and the symbolic matrices handed to the solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};
use crate::expr::{EMat, LinearEntry};
use crate::linalg;
use crate::system::{Dims, Jacobians, LureSelectors};
use crate::trajectory::TimeGrid;

/// Smallest Lipschitz constant accepted by [`build_h`].
pub const GAMMA_MIN: f64 = 1e-9;

/// Linear constraint `aᵀ z ≤ b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Halfspace {
    pub fn new(a: &[f64], b: f64) -> Self {
        Self { a: a.to_vec(), b }
    }

    pub fn normal(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.a)
    }

    /// `b − aᵀ z`; positive when `z` is strictly inside.
    pub fn margin(&self, z: &DVector<f64>) -> f64 {
        self.b - self.normal().dot(z)
    }
}

/// Ellipsoidal keep-out region `{x : ‖S (P x − o)‖ < 1}` where `P` selects the
/// state coordinates listed in `coords`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidalObstacle {
    pub coords: Vec<usize>,
    pub center: Vec<f64>,
    /// Row-major `S`.
    pub shape: Vec<Vec<f64>>,
}

impl EllipsoidalObstacle {
    /// Circle of the given radius in the listed coordinates.
    pub fn ball(coords: &[usize], center: &[f64], radius: f64) -> Self {
        let n = coords.len();
        Self {
            coords: coords.to_vec(),
            center: center.to_vec(),
            shape: (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 / radius } else { 0.0 }).collect()).collect(),
        }
    }

    fn shape_matrix(&self) -> DMatrix<f64> {
        linalg::from_rows(&self.shape).unwrap_or_else(|| DMatrix::zeros(0, 0))
    }

    /// Tangent halfspace at the radial projection of `x_bar` onto the obstacle
    /// boundary. The obstacle lies entirely on the far side of it, so the
    /// halfspace is an inner approximation of the free space.
    pub fn linearize(&self, x_bar: &DVector<f64>) -> Result<Halfspace> {
        let s = self.shape_matrix();
        let m = self.coords.len();
        if s.shape() != (m, m) || self.center.len() != m || self.coords.iter().any(|&i| i >= x_bar.len()) {
            return Err(FunnelError::InvalidArgument("obstacle coordinates, center and shape are inconsistent".into()));
        }
        let o = DVector::from_column_slice(&self.center);
        let pos = DVector::from_fn(m, |i, _| x_bar[self.coords[i]]);
        let rel = &pos - &o;
        let level = (&s * &rel).norm();
        if level == 0.0 {
            return Err(FunnelError::InvalidArgument("nominal point coincides with obstacle center".into()));
        }
        let p = &o + rel / level;
        let n = s.transpose() * &s * (&p - &o);
        let n = &n / n.norm();
        let mut a = vec![0.0; x_bar.len()];
        for (i, &c) in self.coords.iter().enumerate() {
            a[c] = -n[i];
        }
        Ok(Halfspace { a, b: -n.dot(&p) })
    }
}

/// Halfspaces at every node, outer index the node.
pub type NodeHalfspaces = Vec<Vec<Halfspace>>;

/// State obstacles and halfspaces plus input halfspaces, before
/// linearization about a particular nominal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintSet {
    pub obstacles: Vec<EllipsoidalObstacle>,
    pub state_halfspaces: Vec<Halfspace>,
    pub input_halfspaces: Vec<Halfspace>,
}

impl ConstraintSet {
    /// State halfspaces at nominal state `x_bar`: obstacles first, then the
    /// fixed halfspaces.
    pub fn state_at(&self, x_bar: &DVector<f64>) -> Result<Vec<Halfspace>> {
        let mut out = self.obstacles.iter().map(|o| o.linearize(x_bar)).collect::<Result<Vec<_>>>()?;
        out.extend(self.state_halfspaces.iter().cloned());
        Ok(out)
    }

    /// Per-node `(state, input)` halfspaces along a nominal.
    pub fn at_nodes(&self, states: &[DVector<f64>]) -> Result<(NodeHalfspaces, NodeHalfspaces)> {
        let state = states.iter().map(|x| self.state_at(x)).collect::<Result<Vec<_>>>()?;
        Ok((state, vec![self.input_halfspaces.clone(); states.len()]))
    }
}

/// Whether `{u : a_jᵀu ≤ b_j}` is bounded, by maximizing `±u_i` over it.
/// An empty set counts as bounded.
pub fn polytope_is_bounded(hs: &[Halfspace], dim: usize) -> Result<bool> {
    use crate::expr::AffExpr;
    use crate::sdp::{Clarabel, ConicProgram, ConicSolver, SolveStatus, SolverOptions};
    if hs.is_empty() {
        return Ok(dim == 0);
    }
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut p = ConicProgram::new();
            let u: Vec<AffExpr> = (0..dim).map(|_| AffExpr::var(p.var())).collect();
            let rows = hs
                .iter()
                .map(|h| h.a.iter().zip(&u).fold(AffExpr::constant(h.b), |acc, (&a, ui)| acc.sub(&ui.scale(a))))
                .collect();
            p.add_nonneg("polytope", rows);
            p.add_objective(&u[i].scale(-sign));
            match Clarabel.solve(&p, &SolverOptions::default())?.status {
                SolveStatus::Unbounded => return Ok(false),
                SolveStatus::Infeasible => return Ok(true),
                _ => {}
            }
        }
    }
    Ok(true)
}

/// Problem data shared by all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelProblem {
    pub alpha: f64,
    pub lambda_w: f64,
    pub w_c: f64,
    pub w_q0: f64,
    pub w_qbar: f64,
    pub q_init: DMatrix<f64>,
    pub q_final: DMatrix<f64>,
    /// Per-node state halfspaces.
    pub state_constraints: Vec<Vec<Halfspace>>,
    /// Per-node input halfspaces.
    pub input_constraints: Vec<Vec<Halfspace>>,
}

impl FunnelProblem {
    pub fn validate(&self, dims: Dims, nodes: usize) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.alpha > 0.0) {
            errs.push(format!("alpha must be > 0 (got {})", self.alpha));
        }
        if !(self.lambda_w > 0.0) {
            errs.push(format!("lambda_w must be > 0 (got {})", self.lambda_w));
        }
        for (name, w) in [("w_c", self.w_c), ("w_q0", self.w_q0), ("w_qbar", self.w_qbar)] {
            if !(w > 0.0) {
                errs.push(format!("{name} must be > 0 (got {w})"));
            }
        }
        for (name, m) in [("q_init", &self.q_init), ("q_final", &self.q_final)] {
            if m.shape() != (dims.n_x, dims.n_x) {
                errs.push(format!("{name} must be {0}x{0}", dims.n_x));
            } else if m != &m.transpose() || linalg::lambda_min(m) <= 0.0 {
                errs.push(format!("{name} must be symmetric positive definite"));
            }
        }
        for (name, cons, n) in [("state", &self.state_constraints, dims.n_x), ("input", &self.input_constraints, dims.n_u)] {
            if cons.len() != nodes {
                errs.push(format!("{name} constraints given for {} nodes, expected {nodes}", cons.len()));
            }
            if cons.iter().flatten().any(|h| h.a.len() != n) {
                errs.push(format!("{name} halfspace normals must have length {n}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(FunnelError::Config(errs))
        }
    }
}

/// Node values entering the differential LMI.
#[derive(Debug, Clone)]
pub struct DlmiPoint<'a> {
    pub q: &'a DMatrix<f64>,
    pub q_dot: &'a DMatrix<f64>,
    pub y: &'a DMatrix<f64>,
    pub nu: f64,
    pub gamma: f64,
}

/// `M = QAᵀ + YᵀBᵀ + AQ + BY + (α + λ_w) Q`.
pub fn lyapunov_m(q: &DMatrix<f64>, y: &DMatrix<f64>, jac: &Jacobians, alpha: f64, lambda_w: f64) -> DMatrix<f64> {
    let aq = &jac.a * q;
    let by = &jac.b * y;
    aq.transpose() + by.transpose() + aq + by + q * (alpha + lambda_w)
}

/// The symmetric block matrix `H` of the differential LMI, with block rows
/// ordered `(η, δp, w, δq)`:
///
/// ```text
/// [ M − Q̇       *       *        *      ]
/// [ ν Eᵀ      −ν I      *        *      ]
/// [ Fᵀ          0    −λ_w I      *      ]
/// [ CQ + DY     0       G    −(ν/γ²) I  ]
/// ```
///
/// When `n_p = n_q = 0` the second and fourth block rows are empty and `γ` is
/// not used.
pub fn build_h(point: &DlmiPoint<'_>, alpha: f64, lambda_w: f64, jac: &Jacobians, sel: &LureSelectors, dims: Dims) -> Result<DMatrix<f64>> {
    if !(point.nu > 0.0) && !dims.is_linear() {
        return Err(FunnelError::InvalidArgument(format!("nu must be > 0 (got {})", point.nu)));
    }
    if !dims.is_linear() && !(point.gamma >= GAMMA_MIN) {
        return Err(FunnelError::ZeroLipschitz {
            node: 0,
            gamma: point.gamma,
            min: GAMMA_MIN,
        });
    }
    let Dims { n_x, n_p, n_w, n_q, .. } = dims;
    let (o_p, o_w, o_q) = (n_x, n_x + n_p, n_x + n_p + n_w);
    let mut h = DMatrix::zeros(dims.n_z(), dims.n_z());

    let m = lyapunov_m(point.q, point.y, jac, alpha, lambda_w);
    linalg::set_block(&mut h, 0, 0, &(m - point.q_dot));
    linalg::set_block(&mut h, o_w, 0, &jac.f.transpose());
    linalg::set_block(&mut h, o_w, o_w, &DMatrix::from_diagonal_element(n_w, n_w, -lambda_w));
    if !dims.is_linear() {
        linalg::set_block(&mut h, o_p, 0, &(sel.e.transpose() * point.nu));
        linalg::set_block(&mut h, o_p, o_p, &DMatrix::from_diagonal_element(n_p, n_p, -point.nu));
        linalg::set_block(&mut h, o_q, 0, &(&sel.c * point.q + &sel.d * point.y));
        linalg::set_block(&mut h, o_q, o_w, &sel.g);
        let g2 = point.gamma * point.gamma;
        linalg::set_block(&mut h, o_q, o_q, &DMatrix::from_diagonal_element(n_q, n_q, -point.nu / g2));
    }
    // Mirror the lower triangle so the result is exactly symmetric.
    for j in 0..h.ncols() {
        for i in 0..j {
            h[(i, j)] = h[(j, i)];
        }
    }
    Ok(h)
}

fn require_margin(margin: f64, family: &'static str, node: usize, index: usize) -> Result<()> {
    if margin > 0.0 {
        Ok(())
    } else {
        Err(FunnelError::InfeasibleNominal { family, node, index, margin })
    }
}

/// `[[margin² c, aᵀ Q], [Q a, Q]]`, PSD iff `{x̄} ⊕ E_c ⊆ {aᵀx ≤ b}`.
///
/// `node` and `index` only label the error when the nominal is infeasible.
pub fn build_state_containment_lmi<T: LinearEntry>(q: &EMat<T>, c: &T, x_bar: &DVector<f64>, hs: &Halfspace, node: usize, index: usize) -> Result<EMat<T>> {
    let margin = hs.margin(x_bar);
    require_margin(margin, "state", node, index)?;
    let a = DMatrix::from_column_slice(hs.a.len(), 1, &hs.a);
    Ok(containment(q, &q.lmul(&a.transpose()), c, margin))
}

/// `[[margin² c, aᵀ Y], [Yᵀ a, Q]]`, PSD iff `{ū} ⊕ E_u ⊆ {aᵀu ≤ b}` with
/// `K = Y Q⁻¹`.
pub fn build_input_containment_lmi<T: LinearEntry>(
    q: &EMat<T>,
    y: &EMat<T>,
    c: &T,
    u_bar: &DVector<f64>,
    hs: &Halfspace,
    node: usize,
    index: usize,
) -> Result<EMat<T>> {
    let margin = hs.margin(u_bar);
    require_margin(margin, "input", node, index)?;
    let a = DMatrix::from_column_slice(hs.a.len(), 1, &hs.a);
    Ok(containment(q, &y.lmul(&a.transpose()), c, margin))
}

fn containment<T: LinearEntry>(q: &EMat<T>, row: &EMat<T>, c: &T, margin: f64) -> EMat<T> {
    let n = q.rows;
    let mut m = EMat::zeros(n + 1, n + 1);
    m.set(0, 0, c.scale(margin * margin));
    m.set_block(0, 1, row);
    m.set_block(1, 0, &row.transpose());
    m.set_block(1, 1, q);
    m
}

/// One scalar condition on the `c_k` sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CCondition {
    /// `c_k > 0`.
    Positive { k: usize },
    /// `c_k ≤ 1`.
    AtMostOne { k: usize },
    /// `coeff · c_k ≤ c_0` with `coeff = e^{−α(t_k − t_0)}`.
    Envelope { k: usize, coeff: f64 },
}

impl CCondition {
    /// Signed slack; nonnegative when satisfied (`Positive` uses `c_k` itself).
    pub fn slack(&self, c: &[f64]) -> f64 {
        match *self {
            CCondition::Positive { k } => c[k],
            CCondition::AtMostOne { k } => 1.0 - c[k],
            CCondition::Envelope { k, coeff } => c[0] - coeff * c[k],
        }
    }
}

/// `0 < c_k ≤ 1` and `e^{−α(t_k−t_0)} c_k ≤ c_0` for every node.
pub fn build_c_conditions(alpha: f64, grid: &TimeGrid) -> Vec<CCondition> {
    let mut out = Vec::with_capacity(3 * grid.nodes());
    for k in 0..grid.nodes() {
        out.push(CCondition::Positive { k });
        out.push(CCondition::AtMostOne { k });
        out.push(CCondition::Envelope {
            k,
            coeff: (-alpha * (grid.t(k) - grid.t0)).exp(),
        });
    }
    out
}

/// Weights of the discretized cost `w_c c_0 − w_Q0 log det Q_0 + Σ_k w_Q v^Q_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub w_c: f64,
    pub w_q0: f64,
    /// Per-node running weight `w̄_Q (t_f − t_0) / N`.
    pub w_q: f64,
}

impl ObjectiveWeights {
    pub fn new(problem: &FunnelProblem, grid: &TimeGrid) -> Self {
        Self {
            w_c: problem.w_c,
            w_q0: problem.w_q0,
            w_q: problem.w_qbar * (grid.tf - grid.t0) / grid.n as f64,
        }
    }

    pub fn evaluate(&self, c0: f64, logdet_q0: f64, v_q: &[f64]) -> f64 {
        self.w_c * c0 - self.w_q0 * logdet_q0 + self.w_q * v_q.iter().sum::<f64>()
    }
}
