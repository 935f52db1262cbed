//! Transcription of the funnel synthesis problem into a [`ConicProgram`].

use nalgebra::DMatrix;

use super::program::ConicProgram;
use crate::discretization::DiscreteTransition;
use crate::error::{FunnelError, Result};
use crate::expr::{AffExpr, EMat, LinearEntry};
use crate::lmi::{self, CCondition, FunnelProblem, ObjectiveWeights, GAMMA_MIN};
use crate::system::{Dims, LureLinearization, LureSelectors};
use crate::trajectory::NominalTrajectory;

/// Lower bound used for the strict inequalities `ν > 0` and `c > 0`, and the
/// back-off of `c_0 − e^{−α(t_k−t_0)} c_k ≥ 0`. That condition is active along
/// the whole horizon at the optimum, so without a back-off the solver's
/// residual shows up as a small violation of the support-value envelope.
pub const STRICT_EPS: f64 = 1e-9;

/// Decision variables of one node.
#[derive(Debug, Clone)]
pub struct NodeVars {
    pub q: EMat<AffExpr>,
    pub y: EMat<AffExpr>,
    pub z: EMat<AffExpr>,
    pub c: AffExpr,
    /// Constant zero for systems without a nonlinearity channel.
    pub nu: AffExpr,
    pub v_q: AffExpr,
}

/// Auxiliaries of `log det Q_0 ≥ Σ t_i`.
#[derive(Debug, Clone)]
pub struct LogdetEpigraph {
    pub l: EMat<AffExpr>,
    pub t: Vec<AffExpr>,
}

impl LogdetEpigraph {
    /// `Σ t_i`, a lower bound on `log det` of the constrained matrix that is
    /// tight at the optimum.
    pub fn value(&self) -> AffExpr {
        self.t.iter().fold(AffExpr::default(), |acc, t| acc.add(t))
    }
}

/// Adds `[[X, L], [Lᵀ, diag(L)]] ⪰ 0` with `L` lower triangular and
/// `(t_i, 1, L_ii) ∈ K_exp`, so that `Σ t_i ≤ Σ log L_ii ≤ log det X`.
pub fn add_logdet(prog: &mut ConicProgram, x: &EMat<AffExpr>) -> LogdetEpigraph {
    let n = x.rows;
    let l = prog.lower_tri_var(n);
    let mut big = EMat::zeros(2 * n, 2 * n);
    big.set_block(0, 0, x);
    big.set_block(0, n, &l);
    big.set_block(n, 0, &l.transpose());
    for i in 0..n {
        big.set(n + i, n + i, l.get(i, i).clone());
    }
    prog.add_psd("logdet", &big);
    let t: Vec<AffExpr> = (0..n)
        .map(|i| {
            let ti = AffExpr::var(prog.var());
            prog.add_exp("logdet", ti.clone(), AffExpr::constant(1.0), l.get(i, i).clone());
            ti
        })
        .collect();
    LogdetEpigraph { l, t }
}

/// Everything the synthesis program is built from.
#[derive(Clone, Copy)]
pub struct SynthesisData<'a> {
    pub problem: &'a FunnelProblem,
    pub traj: &'a NominalTrajectory,
    pub lin: &'a LureLinearization,
    pub transitions: &'a [DiscreteTransition],
    pub selectors: &'a LureSelectors,
    pub dims: Dims,
}

/// The assembled program with handles to its variables.
#[derive(Debug, Clone)]
pub struct FunnelProgram {
    pub program: ConicProgram,
    pub nodes: Vec<NodeVars>,
    pub logdet: LogdetEpigraph,
    pub weights: ObjectiveWeights,
}

fn new_node(prog: &mut ConicProgram, dims: Dims) -> NodeVars {
    let q = prog.sym_var(dims.n_x);
    let y = prog.mat_var(dims.n_u, dims.n_x);
    let z = prog.sym_var(dims.n_z());
    let c = AffExpr::var(prog.var());
    let nu = if dims.is_linear() { AffExpr::default() } else { AffExpr::var(prog.var()) };
    let v_q = AffExpr::var(prog.var());
    NodeVars { q, y, z, c, nu, v_q }
}

fn const_mat(m: &DMatrix<f64>) -> EMat<AffExpr> {
    EMat::constant(m)
}

fn push_block_eq(rows: &mut Vec<AffExpr>, lhs: &EMat<AffExpr>) {
    rows.extend(lhs.iter_col_major().cloned());
}

/// Rows of `H_k + Z_k = 0` outside the `(1,1)` block, lower triangle only.
fn block_equalities(v: &NodeVars, data: &SynthesisData<'_>, k: usize) -> Vec<AffExpr> {
    let Dims { n_x, n_p, n_w, n_q, .. } = data.dims;
    let (o_p, o_w, o_q) = (n_x, n_x + n_p, n_x + n_p + n_w);
    let jac = &data.lin.points[k].jac;
    let sel = data.selectors;
    let zb = |r, c, nr, nc| v.z.block(r, c, nr, nc);
    let mut rows = Vec::new();
    // F_kᵀ + Z³¹ = 0, −λ_w I + Z³³ = 0
    push_block_eq(&mut rows, &zb(o_w, 0, n_w, n_x).add(&const_mat(&jac.f.transpose())));
    let z33 = zb(o_w, o_w, n_w, n_w).sub(&const_mat(&DMatrix::from_diagonal_element(n_w, n_w, data.problem.lambda_w)));
    push_lower(&mut rows, &z33);
    if data.dims.is_linear() {
        return rows;
    }
    let gamma = data.lin.gamma[k];
    // ν Eᵀ + Z²¹ = 0, −ν I + Z²² = 0
    push_block_eq(&mut rows, &zb(o_p, 0, n_p, n_x).add(&EMat::scalar_times(&v.nu, &sel.e.transpose())));
    push_lower(&mut rows, &zb(o_p, o_p, n_p, n_p).sub(&EMat::scalar_times(&v.nu, &DMatrix::identity(n_p, n_p))));
    // Z³² = 0
    push_block_eq(&mut rows, &zb(o_w, o_p, n_w, n_p));
    // CQ + DY + Z⁴¹ = 0, Z⁴² = 0, G + Z⁴³ = 0
    let cqdy = v.q.lmul(&sel.c).add(&v.y.lmul(&sel.d));
    push_block_eq(&mut rows, &zb(o_q, 0, n_q, n_x).add(&cqdy));
    push_block_eq(&mut rows, &zb(o_q, o_p, n_q, n_p));
    push_block_eq(&mut rows, &zb(o_q, o_w, n_q, n_w).add(&const_mat(&sel.g)));
    // −(ν/γ²) I + Z⁴⁴ = 0
    let inv_g2 = 1.0 / (gamma * gamma);
    push_lower(
        &mut rows,
        &zb(o_q, o_q, n_q, n_q).sub(&EMat::scalar_times(&v.nu.scale(inv_g2), &DMatrix::identity(n_q, n_q))),
    );
    rows
}

fn push_lower(rows: &mut Vec<AffExpr>, m: &EMat<AffExpr>) {
    for j in 0..m.cols {
        for i in j..m.rows {
            rows.push(m.get(i, j).clone());
        }
    }
}

/// `vec Q_{k+1} − (A vec Q_k + B⁻ vec Y_k + B⁺ vec Y_{k+1} + S⁻ vec Z¹¹_k + S⁺ vec Z¹¹_{k+1})`
/// restricted to the upper triangle. The map preserves symmetry, so the two
/// rows of each off-diagonal pair agree and are averaged.
fn shooting_rows(tr: &DiscreteTransition, a: &NodeVars, b: &NodeVars, n_x: usize) -> Vec<AffExpr> {
    let vecs = |m: &EMat<AffExpr>| -> Vec<AffExpr> { m.iter_col_major().cloned().collect() };
    let (q0, q1) = (vecs(&a.q), vecs(&b.q));
    let (y0, y1) = (vecs(&a.y), vecs(&b.y));
    let (z0, z1) = (vecs(&a.z.block(0, 0, n_x, n_x)), vecs(&b.z.block(0, 0, n_x, n_x)));
    let apply = |m: &DMatrix<f64>, v: &[AffExpr], r: usize| -> AffExpr {
        v.iter().enumerate().fold(
            AffExpr::default(),
            |acc, (j, e)| if m[(r, j)] == 0.0 { acc } else { acc.add(&e.scale(m[(r, j)])) },
        )
    };
    let row = |r: usize| -> AffExpr {
        q1[r]
            .sub(&apply(&tr.a_q, &q0, r))
            .sub(&apply(&tr.b_minus, &y0, r))
            .sub(&apply(&tr.b_plus, &y1, r))
            .sub(&apply(&tr.s_minus, &z0, r))
            .sub(&apply(&tr.s_plus, &z1, r))
    };
    let mut out = Vec::with_capacity(n_x * (n_x + 1) / 2);
    for j in 0..n_x {
        for i in 0..=j {
            let e = if i == j {
                row(i + j * n_x)
            } else {
                row(i + j * n_x).add(&row(j + i * n_x)).scale(0.5)
            };
            out.push(e);
        }
    }
    out
}

fn check_inputs(data: &SynthesisData<'_>) -> Result<()> {
    let nodes = data.traj.grid.nodes();
    data.problem.validate(data.dims, nodes)?;
    if data.lin.len() != nodes {
        return Err(FunnelError::DimensionMismatch {
            context: "linearization nodes",
            expected: nodes,
            got: data.lin.len(),
        });
    }
    if data.lin.gamma.len() != nodes {
        return Err(FunnelError::DimensionMismatch {
            context: "lipschitz constants",
            expected: nodes,
            got: data.lin.gamma.len(),
        });
    }
    if data.transitions.len() != data.traj.grid.n {
        return Err(FunnelError::DimensionMismatch {
            context: "discrete transitions",
            expected: data.traj.grid.n,
            got: data.transitions.len(),
        });
    }
    if !data.dims.is_linear() {
        if let Some((node, &gamma)) = data.lin.gamma.iter().enumerate().find(|(_, g)| !(**g >= GAMMA_MIN)) {
            return Err(FunnelError::ZeroLipschitz { node, gamma, min: GAMMA_MIN });
        }
    }
    Ok(())
}

/// Builds the discrete synthesis program.
pub fn assemble(data: &SynthesisData<'_>) -> Result<FunnelProgram> {
    check_inputs(data)?;
    let dims = data.dims;
    let grid = &data.traj.grid;
    let problem = data.problem;
    let mut prog = ConicProgram::new();
    let nodes: Vec<NodeVars> = (0..grid.nodes()).map(|_| new_node(&mut prog, dims)).collect();

    for (k, v) in nodes.iter().enumerate() {
        prog.add_psd("dlmi_slack", &v.z);
        prog.add_zero("dlmi_blocks", block_equalities(v, data, k));
        for (i, hs) in problem.state_constraints[k].iter().enumerate() {
            let m = lmi::build_state_containment_lmi(&v.q, &v.c, &data.traj.states[k], hs, k, i)?;
            prog.add_psd("state_containment", &m);
        }
        for (i, hs) in problem.input_constraints[k].iter().enumerate() {
            let m = lmi::build_input_containment_lmi(&v.q, &v.y, &v.c, &data.traj.inputs[k], hs, k, i)?;
            prog.add_psd("input_containment", &m);
        }
        let vi = EMat::scalar_times(&v.v_q, &DMatrix::identity(dims.n_x, dims.n_x));
        prog.add_psd("eigenvalue_epigraph", &vi.sub(&v.q));
        if !dims.is_linear() {
            prog.add_nonneg("nu_positive", vec![v.nu.sub(&AffExpr::constant(STRICT_EPS))]);
        }
    }

    let c: Vec<&AffExpr> = nodes.iter().map(|v| &v.c).collect();
    let rows: Vec<AffExpr> = lmi::build_c_conditions(problem.alpha, grid)
        .into_iter()
        .filter(|cc| !matches!(cc, CCondition::Envelope { k: 0, .. }))
        .map(|cc| match cc {
            CCondition::Positive { k } => c[k].sub(&AffExpr::constant(STRICT_EPS)),
            CCondition::AtMostOne { k } => AffExpr::constant(1.0).sub(c[k]),
            CCondition::Envelope { k, coeff } => c[0].sub(&c[k].scale(coeff)).sub(&AffExpr::constant(STRICT_EPS)),
        })
        .collect();
    prog.add_nonneg("c_condition", rows);

    for (k, tr) in data.transitions.iter().enumerate() {
        prog.add_zero("multiple_shooting", shooting_rows(tr, &nodes[k], &nodes[k + 1], dims.n_x));
    }

    let first = &nodes[0];
    let last = nodes.last().expect("grid has at least two nodes");
    let qi = EMat::scalar_times(&first.c, &problem.q_init);
    prog.add_psd("boundary_initial", &first.q.sub(&qi));
    let qf = EMat::scalar_times(&last.c, &problem.q_final);
    prog.add_psd("boundary_final", &qf.sub(&last.q));

    let logdet = add_logdet(&mut prog, &first.q);
    let weights = ObjectiveWeights::new(problem, grid);
    prog.add_objective(&first.c.scale(weights.w_c));
    prog.add_objective(&logdet.value().scale(-weights.w_q0));
    for v in &nodes {
        prog.add_objective(&v.v_q.scale(weights.w_q));
    }
    prog.validate().map_err(FunnelError::Solver)?;
    Ok(FunnelProgram {
        program: prog,
        nodes,
        logdet,
        weights,
    })
}

/// Scalar decision variables per node before auxiliaries.
pub fn variables_per_node(dims: Dims) -> usize {
    let tri = |n: usize| n * (n + 1) / 2;
    tri(dims.n_x) + dims.n_u * dims.n_x + tri(dims.n_z()) + 2 + usize::from(!dims.is_linear())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::solver::{Clarabel, ConicSolver, SolverOptions};

    #[test]
    fn node_variable_count() {
        let dims = Dims {
            n_x: 3,
            n_u: 2,
            n_w: 2,
            n_p: 2,
            n_q: 2,
        };
        assert_eq!(variables_per_node(dims), 60);
        let mut p = ConicProgram::new();
        new_node(&mut p, dims);
        assert_eq!(p.n_vars, 60);
    }

    #[test]
    fn logdet_of_fixed_matrix() {
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mut p = ConicProgram::new();
        let epi = add_logdet(&mut p, &EMat::constant(&x));
        p.add_objective(&epi.value().scale(-1.0));
        let r = Clarabel.solve(&p, &SolverOptions::default()).unwrap();
        assert!(r.status.is_optimal());
        let v = epi.value().eval(&r.x);
        assert!((v - (1.75f64).ln()).abs() < 1e-6, "{v}");
    }
}
