//! Small dense helpers on top of nalgebra for the symmetric positive definite
//! matrices that appear everywhere in this crate (D ≤ a few dozen).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest admissible Cholesky pivot.
pub const PIVOT_TOL: f64 = 1e-12;

/// Lower Cholesky factor `L` with `m = L Lᵀ`.
///
/// Fails when a pivot drops below [`PIVOT_TOL`] or is not finite.
pub fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::shape(format!("cholesky of {}x{} matrix", n, m.ncols())));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PIVOT_TOL) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite(format!("pivot {j} = {d:e}")));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// True when `m` admits a Cholesky factorization.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    cholesky(m).is_ok()
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn forward_sub(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn backward_sub_t(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `m x = b` given the lower Cholesky factor of `m`.
pub fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    backward_sub_t(l, &forward_sub(l, b))
}

/// Inverse of an SPD matrix from its Cholesky factor, symmetrized.
pub fn chol_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    let mut e = DVector::<f64>::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = chol_solve(l, &e);
        inv.set_column(j, &col);
    }
    symmetrize(&mut inv);
    inv
}

/// `log |m|` from the Cholesky factor of `m`.
pub fn chol_logdet(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Inverse of a lower-triangular matrix (also lower triangular).
pub fn lower_triangular_inverse(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    for i in 0..n {
        if l[(i, i)] == 0.0 || !l[(i, i)].is_finite() {
            return Err(Error::Singular(format!("zero diagonal at {i}")));
        }
    }
    let mut inv = DMatrix::<f64>::zeros(n, n);
    let mut e = DVector::<f64>::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = forward_sub(l, &e);
        inv.set_column(j, &col);
    }
    Ok(inv)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetric eigen decomposition, eigenvalues in descending order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::<f64>::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}
