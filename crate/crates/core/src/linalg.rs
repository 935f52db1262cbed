//! Dense linear-algebra helpers on top of `nalgebra`.
//!
//! All vectorization is column-major: `vec(A)` stacks the columns of `A`,
//! which is also `nalgebra`'s storage order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Stacks the columns of `m` into a single vector.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec: length mismatch");
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Returns `(m + mᵀ) / 2`. The result is bit-exactly symmetric.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "symmetrize: matrix must be square");
    let mut out = m.clone();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// `log det` of a symmetric positive definite matrix as the sum of the logs of
/// its eigenvalues. Returns `None` when the matrix is not positive definite.
pub fn logdet_spd(m: &DMatrix<f64>) -> Option<f64> {
    let ev = sym_eigenvalues(m);
    if ev.iter().any(|&l| l <= 0.0) {
        return None;
    }
    Some(ev.iter().map(|l| l.ln()).sum())
}

/// Symmetric square root of a PSD matrix. Negative eigenvalues from round-off
/// are clamped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose()))
}

/// 2-norm condition number of a symmetric positive definite matrix.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Solves `X Q = Y` for `X` with `Q` symmetric positive definite, using a
/// Cholesky factorization of `Q` (falls back to LU when `Q` is not PD).
pub fn solve_right_spd(y: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    // X Q = Y  <=>  Q Xᵀ = Yᵀ  (Q symmetric)
    let rhs = y.transpose();
    let q = symmetrize(q);
    let xt = match q.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => q.lu().solve(&rhs)?,
    };
    Some(xt.transpose())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn inverse_spd(q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let ch = symmetrize(q).cholesky()?;
    Some(symmetrize(&ch.inverse()))
}

/// Quadratic form `ηᵀ Q⁻¹ η` without forming the inverse.
pub fn inv_quad_form(q: &DMatrix<f64>, eta: &DVector<f64>) -> Option<f64> {
    let ch = symmetrize(q).cholesky()?;
    let s = ch.solve(eta);
    Some(eta.dot(&s))
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Places `block` into `dst` with its top-left corner at `(r, c)`.
pub fn set_block(dst: &mut DMatrix<f64>, r: usize, c: usize, block: &DMatrix<f64>) {
    dst.view_mut((r, c), (block.nrows(), block.ncols())).copy_from(block);
}

/// Row-major nested representation used in the JSON file formats.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return None;
    }
    Some(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn vec_is_column_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(vec(&m).as_slice(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(unvec(&vec(&m), 2, 3), m);
    }

    #[test]
    fn kron_vec_identity() {
        // vec(A X B) = (Bᵀ ⊗ A) vec(X)
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.3, 4.0]);
        let b = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, -1.0, 1.5, 0.2]);
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn logdet_matches_determinant() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_relative_eq!(logdet_spd(&m).unwrap(), m.determinant().ln(), epsilon = 1e-12);
        assert!(logdet_spd(&DMatrix::from_diagonal_element(2, 2, -1.0)).is_none());
    }

    #[test]
    fn right_solve_residual() {
        let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, -1.0, 1.0, 0.0]);
        let k = solve_right_spd(&y, &q).unwrap();
        assert_relative_eq!(&k * &q, y, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = sqrt_psd(&m);
        assert_relative_eq!(&s * &s, m, epsilon = 1e-12);
    }
}
