//! Dense kernels: smallest generalized eigenpairs of a symmetric pencil,
//! SVD, singular value thresholding and soft shrinkage.

use nalgebra::{DVector, SymmetricEigen};

use crate::data_model::Matrix;
use crate::error::{Error, Result};

/// Relative eigenvalue cutoff used for numerical rank decisions.
pub const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GenEigResult {
    /// `m x k`, columns are generalized eigenvectors normalized so that
    /// `vᵀ (R + ridge I) v = 1`.
    pub vectors: Matrix,
    /// Ascending.
    pub values: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    /// Descending, nonnegative.
    pub s: DVector<f64>,
    pub v: Matrix,
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(format!("{what} has non-finite entries")))
    }
}

fn check_symmetric(m: &Matrix, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::numerical(format!("{what} is {}x{}, not square", m.nrows(), m.ncols())));
    }
    let scale = 1.0 + m.amax();
    let skew = (m - m.transpose()).amax();
    if skew > 1e-10 * scale {
        return Err(Error::numerical(format!("{what} is not symmetric (skew {skew:e})")));
    }
    Ok(())
}

fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn sym_eigen_ascending(m: &Matrix) -> (DVector<f64>, Matrix) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = Matrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    (values, vectors)
}

/// Count of eigenvalues above `RANK_RTOL * max_eigenvalue`.
pub fn numerical_rank_psd(m: &Matrix) -> usize {
    let (w, _) = sym_eigen_ascending(m);
    let top = w.iter().copied().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return 0;
    }
    w.iter().filter(|&&x| x > RANK_RTOL * top).count()
}

/// Flip each column so its first significant component is positive.
/// Returns the applied signs.
pub fn fix_signs(m: &mut Matrix) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let tol = 1e-12 * col.amax();
        let sign = match col.iter().find(|x| x.abs() > tol) {
            Some(&x) if x < 0.0 => -1.0,
            _ => 1.0,
        };
        if sign < 0.0 {
            col.neg_mut();
        }
        signs.push(sign);
    }
    signs
}

/// The `k` smallest generalized eigenpairs of `L v = φ (R + ridge I) v`.
///
/// When `R + ridge I` is singular the null-space components are eliminated
/// through a Schur complement, so only finite eigenvalues are returned; that
/// requires `L` to be positive definite on the null space of `R`.
pub fn gen_eig_smallest(l_matrix: &Matrix, r_matrix: &Matrix, k: usize, ridge: f64) -> Result<GenEigResult> {
    check_symmetric(l_matrix, "l_matrix")?;
    check_symmetric(r_matrix, "r_matrix")?;
    check_finite(l_matrix, "l_matrix")?;
    check_finite(r_matrix, "r_matrix")?;
    let m = l_matrix.nrows();
    if r_matrix.nrows() != m {
        return Err(Error::numerical(format!("pencil sizes differ: {m} vs {}", r_matrix.nrows())));
    }
    if k == 0 || k > m {
        return Err(Error::numerical(format!("k = {k} outside 1..={m}")));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::numerical(format!("ridge {ridge} must be finite and >= 0")));
    }
    let l = symmetrize(l_matrix);
    let r = symmetrize(r_matrix) + Matrix::identity(m, m) * ridge;

    let (w, u) = sym_eigen_ascending(&r);
    let top = w.iter().copied().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return Err(Error::numerical("r_matrix + ridge*I is zero; increase ridge"));
    }
    let tol = RANK_RTOL * top;
    if w[0] < -1e-8 * top {
        return Err(Error::numerical(format!("r_matrix is not positive semidefinite (eigenvalue {:e})", w[0])));
    }
    let range: Vec<usize> = (0..m).filter(|&i| w[i] > tol).collect();
    let null: Vec<usize> = (0..m).filter(|&i| w[i] <= tol).collect();
    let rank = range.len();
    if rank < k {
        return Err(Error::numerical(format!(
            "pencil is numerically singular: only {rank} finite eigenpairs for k = {k}; increase ridge"
        )));
    }
    let ur = u.select_columns(&range);
    let d = DVector::from_iterator(rank, range.iter().map(|&i| 1.0 / w[i].sqrt()));
    let l11 = ur.transpose() * &l * &ur;

    let (s, back): (Matrix, Option<(Matrix, Matrix)>) = if null.is_empty() {
        (l11, None)
    } else {
        let un = u.select_columns(&null);
        let l22 = un.transpose() * &l * &un;
        let l12 = ur.transpose() * &l * &un;
        let chol = symmetrize(&l22).cholesky().ok_or_else(|| {
            Error::numerical("l_matrix is not positive definite on the null space of r_matrix; increase ridge")
        })?;
        // S = L11 - L12 L22^-1 L21, and b = -L22^-1 L21 a
        let l22_inv_l21 = chol.solve(&l12.transpose());
        let s = &l11 - &l12 * &l22_inv_l21;
        (s, Some((un, l22_inv_l21)))
    };

    let c = Matrix::from_fn(rank, rank, |i, j| d[i] * s[(i, j)] * d[j]);
    let (phi, wv) = sym_eigen_ascending(&c);
    let mut a = wv.columns(0, k).into_owned();
    for (i, mut row) in a.row_iter_mut().enumerate() {
        row *= d[i];
    }
    let mut vectors = &ur * &a;
    if let Some((un, l22_inv_l21)) = back {
        vectors -= un * (l22_inv_l21 * &a);
    }
    fix_signs(&mut vectors);
    let values = phi.rows(0, k).into_owned();

    let resid = (&l * &vectors - &r * &vectors * Matrix::from_diagonal(&values)).norm();
    let bound = 1e-8 * (1.0 + l.norm() + r.norm());
    if !(resid <= bound) {
        return Err(Error::numerical(format!(
            "generalized eigen residual {resid:e} exceeds {bound:e}; increase ridge"
        )));
    }
    Ok(GenEigResult { vectors, values })
}

pub fn svd(m_matrix: &Matrix) -> Result<SvdResult> {
    check_finite(m_matrix, "matrix")?;
    let r = m_matrix.nrows().min(m_matrix.ncols());
    if r == 0 {
        return Ok(SvdResult {
            u: Matrix::zeros(m_matrix.nrows(), 0),
            s: DVector::zeros(0),
            v: Matrix::zeros(m_matrix.ncols(), 0),
        });
    }
    let dec = m_matrix.clone().svd(true, true);
    let u = dec.u.expect("requested u");
    let vt = dec.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let s = DVector::from_iterator(r, order.iter().map(|&i| dec.singular_values[i].max(0.0)));
    let mut u = u.select_columns(&order);
    let mut v = vt.transpose().select_columns(&order);
    let signs = fix_signs(&mut u);
    for (mut col, sign) in v.column_iter_mut().zip(signs) {
        col *= sign;
    }
    Ok(SvdResult { u, s, v })
}

/// Singular value thresholding plus the nuclear norm of the result.
pub fn svt_with_norm(m_matrix: &Matrix, tau: f64) -> Result<(Matrix, f64)> {
    if !(tau >= 0.0) {
        return Err(Error::numerical(format!("svt threshold {tau} is negative")));
    }
    check_finite(m_matrix, "matrix")?;
    if m_matrix.is_empty() {
        return Ok((m_matrix.clone(), 0.0));
    }
    let dec = m_matrix.clone().svd(true, true);
    let mut u = dec.u.expect("requested u");
    let vt = dec.v_t.expect("requested v_t");
    let mut nuclear = 0.0;
    for (i, mut col) in u.column_iter_mut().enumerate() {
        let s = (dec.singular_values[i] - tau).max(0.0);
        nuclear += s;
        col *= s;
    }
    Ok((u * vt, nuclear))
}

/// `U max(Σ - τ, 0) Vᵀ`.
pub fn svt(m_matrix: &Matrix, tau: f64) -> Result<Matrix> {
    svt_with_norm(m_matrix, tau).map(|(z, _)| z)
}

/// Elementwise `sign(x) max(|x| - τ, 0)`.
pub fn shrink(m_matrix: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau >= 0.0) {
        return Err(Error::numerical(format!("shrink threshold {tau} is negative")));
    }
    check_finite(m_matrix, "matrix")?;
    Ok(m_matrix.map(|x| x.signum() * (x.abs() - tau).max(0.0)))
}

/// Nuclear norm `Σ σ_i`.
pub fn nuclear_norm(m_matrix: &Matrix) -> f64 {
    if m_matrix.is_empty() {
        return 0.0;
    }
    m_matrix.clone().svd(false, false).singular_values.sum()
}
