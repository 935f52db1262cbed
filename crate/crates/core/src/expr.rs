//! Affine expressions over optimization variables and small dense matrices
//! whose entries are either numbers or such expressions.

use std::fmt::Debug;

use nalgebra::DMatrix;

/// Index of a scalar decision variable.
pub type Var = usize;

/// `Σ coef·x_var + constant`, with terms kept sorted by variable and merged.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffExpr {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl AffExpr {
    pub fn var(v: Var) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn scaled_var(v: Var, coef: f64) -> Self {
        Self {
            terms: vec![(v, coef)],
            constant: 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }

    fn merged(mut terms: Vec<(Var, f64)>) -> Vec<(Var, f64)> {
        terms.sort_by_key(|t| t.0);
        let mut out: Vec<(Var, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        out
    }
}

/// Entry type of an [`EMat`]: anything closed under addition and scaling.
pub trait LinearEntry: Clone + Debug + PartialEq {
    fn zero() -> Self;
    fn add(&self, other: &Self) -> Self;
    fn scale(&self, s: f64) -> Self;

    fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }
}

impl LinearEntry for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn scale(&self, s: f64) -> Self {
        self * s
    }
}

impl LinearEntry for AffExpr {
    fn zero() -> Self {
        AffExpr::default()
    }
    fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        AffExpr {
            terms: AffExpr::merged(terms),
            constant: self.constant + other.constant,
        }
    }
    fn scale(&self, s: f64) -> Self {
        if s == 0.0 {
            return AffExpr::default();
        }
        AffExpr {
            terms: self.terms.iter().map(|&(v, c)| (v, c * s)).collect(),
            constant: self.constant * s,
        }
    }
}

/// Column-major dense matrix of linear entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EMat<T> {
    pub rows: usize,
    pub cols: usize,
    data: Vec<T>,
}

impl<T: LinearEntry> EMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i + j * self.rows]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i + j * self.rows] = v;
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j).add(other.get(i, j)))
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j).sub(other.get(i, j)))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j).scale(s))
    }

    /// `A · self` for a constant `A`.
    pub fn lmul(&self, a: &DMatrix<f64>) -> Self {
        assert_eq!(a.ncols(), self.rows);
        Self::from_fn(a.nrows(), self.cols, |i, j| {
            (0..self.rows).fold(T::zero(), |acc, k| {
                let c = a[(i, k)];
                if c == 0.0 {
                    acc
                } else {
                    acc.add(&self.get(k, j).scale(c))
                }
            })
        })
    }

    /// `self · B` for a constant `B`.
    pub fn rmul(&self, b: &DMatrix<f64>) -> Self {
        assert_eq!(b.nrows(), self.cols);
        Self::from_fn(self.rows, b.ncols(), |i, j| {
            (0..self.cols).fold(T::zero(), |acc, k| {
                let c = b[(k, j)];
                if c == 0.0 {
                    acc
                } else {
                    acc.add(&self.get(i, k).scale(c))
                }
            })
        })
    }

    /// `s · M` for a scalar entry `s` and constant `M`.
    pub fn scalar_times(s: &T, m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| s.scale(m[(i, j)]))
    }

    /// Places `block` with top-left corner at `(r, c)`.
    pub fn set_block(&mut self, r: usize, c: usize, block: &Self) {
        for j in 0..block.cols {
            for i in 0..block.rows {
                self.set(r + i, c + j, block.get(i, j).clone());
            }
        }
    }

    pub fn block(&self, r: usize, c: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| self.get(r + i, c + j).clone())
    }

    pub fn iter_col_major(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }
}

impl EMat<f64> {
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rows, self.cols, &self.data)
    }
}

impl EMat<AffExpr> {
    pub fn constant(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| AffExpr::constant(m[(i, j)]))
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }
}
