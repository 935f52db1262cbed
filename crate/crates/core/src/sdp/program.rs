//! Solver-independent conic program in the form
//!
//! ```text
//! minimize    cᵀx
//! subject to  s_i(x) ∈ K_i    for every cone block i
//! ```
//!
//! where each `s_i` is a vector of affine expressions and `K_i` is the zero
//! cone, the nonnegative orthant, a PSD cone (stored as the scaled upper
//! triangle, column by column) or the exponential cone.

use std::f64::consts::SQRT_2;

use crate::expr::{AffExpr, EMat, LinearEntry, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Zero,
    Nonneg,
    /// Side length of the PSD matrix.
    Psd(usize),
    /// `{(x, y, z) : y e^{x/y} ≤ z, y > 0}`.
    Exp,
}

#[derive(Debug, Clone)]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub rows: Vec<AffExpr>,
    /// Constraint family used to report infeasibility certificates.
    pub family: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub n_vars: usize,
    pub objective: AffExpr,
    pub blocks: Vec<ConeBlock>,
}

/// Number of entries of the triangle of an `n × n` symmetric matrix.
pub fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&mut self) -> Var {
        self.n_vars += 1;
        self.n_vars - 1
    }

    /// Symmetric matrix variable with `n(n+1)/2` free entries.
    pub fn sym_var(&mut self, n: usize) -> EMat<AffExpr> {
        let mut m = EMat::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = AffExpr::var(self.var());
                m.set(i, j, v.clone());
                m.set(j, i, v);
            }
        }
        m
    }

    pub fn mat_var(&mut self, rows: usize, cols: usize) -> EMat<AffExpr> {
        EMat::from_fn(rows, cols, |_, _| AffExpr::var(self.var()))
    }

    /// Lower-triangular matrix variable (zeros above the diagonal).
    pub fn lower_tri_var(&mut self, n: usize) -> EMat<AffExpr> {
        let mut m = EMat::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                m.set(i, j, AffExpr::var(self.var()));
            }
        }
        m
    }

    pub fn add_objective(&mut self, e: &AffExpr) {
        self.objective = self.objective.add(e);
    }

    /// `e = 0` for every expression.
    pub fn add_zero(&mut self, family: &'static str, rows: Vec<AffExpr>) {
        let rows: Vec<AffExpr> = rows
            .into_iter()
            .filter(|r| {
                // Constant rows carry no information; a nonzero one would make
                // the program trivially infeasible, which callers never intend.
                debug_assert!(!r.is_constant() || r.constant.abs() < 1e-12, "inconsistent constant equality in {family}");
                !r.is_constant()
            })
            .collect();
        if !rows.is_empty() {
            self.blocks.push(ConeBlock {
                kind: ConeKind::Zero,
                rows,
                family,
            });
        }
    }

    /// `e ≥ 0` for every expression.
    pub fn add_nonneg(&mut self, family: &'static str, rows: Vec<AffExpr>) {
        if !rows.is_empty() {
            self.blocks.push(ConeBlock {
                kind: ConeKind::Nonneg,
                rows,
                family,
            });
        }
    }

    /// `m ⪰ 0`. The lower and upper triangles are averaged.
    pub fn add_psd(&mut self, family: &'static str, m: &EMat<AffExpr>) {
        assert_eq!(m.rows, m.cols, "PSD constraint needs a square matrix");
        let n = m.rows;
        if n == 0 {
            return;
        }
        let mut rows = Vec::with_capacity(tri(n));
        for j in 0..n {
            for i in 0..=j {
                let e = if i == j {
                    m.get(i, i).clone()
                } else {
                    m.get(i, j).add(m.get(j, i)).scale(0.5 * SQRT_2)
                };
                rows.push(e);
            }
        }
        self.blocks.push(ConeBlock {
            kind: ConeKind::Psd(n),
            rows,
            family,
        });
    }

    /// `(x, y, z) ∈ K_exp`.
    pub fn add_exp(&mut self, family: &'static str, x: AffExpr, y: AffExpr, z: AffExpr) {
        self.blocks.push(ConeBlock {
            kind: ConeKind::Exp,
            rows: vec![x, y, z],
            family,
        });
    }

    pub fn n_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.rows.len()).sum()
    }

    pub fn n_psd_cones(&self) -> usize {
        self.blocks.iter().filter(|b| matches!(b.kind, ConeKind::Psd(_))).count()
    }

    pub fn count_family(&self, family: &str) -> usize {
        self.blocks.iter().filter(|b| b.family == family).count()
    }

    /// Checks that every cone has the row count its kind requires and that all
    /// data are finite.
    pub fn validate(&self) -> Result<(), String> {
        for (i, b) in self.blocks.iter().enumerate() {
            let ok = match b.kind {
                ConeKind::Psd(n) => b.rows.len() == tri(n),
                ConeKind::Exp => b.rows.len() == 3,
                ConeKind::Zero | ConeKind::Nonneg => !b.rows.is_empty(),
            };
            if !ok {
                return Err(format!("cone block {i} ({}) has inconsistent dimension", b.family));
            }
            let finite = b
                .rows
                .iter()
                .all(|r| r.constant.is_finite() && r.terms.iter().all(|&(v, c)| c.is_finite() && v < self.n_vars));
            if !finite {
                return Err(format!("cone block {i} ({}) has non-finite data or unknown variables", b.family));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_var_shares_entries() {
        let mut p = ConicProgram::new();
        let m = p.sym_var(3);
        assert_eq!(p.n_vars, 6);
        assert_eq!(m.get(0, 2), m.get(2, 0));
        let l = p.lower_tri_var(2);
        assert_eq!(p.n_vars, 9);
        assert!(l.get(0, 1).is_constant());
    }

    #[test]
    fn psd_rows_are_scaled_triangle() {
        let mut p = ConicProgram::new();
        let m = p.sym_var(2);
        p.add_psd("test", &m);
        let b = &p.blocks[0];
        assert_eq!(b.kind, ConeKind::Psd(2));
        assert_eq!(b.rows[1].terms, vec![(1, SQRT_2)]);
        assert!(p.validate().is_ok());
    }
}
