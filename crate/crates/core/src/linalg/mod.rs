//! Dense linear-algebra utilities shared by every other module.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. Symmetric matrices get their own
//! newtype so that symmetry is established once, at construction.

pub mod io;

use std::ops::Deref;

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dims, Error, Result};

/// General real matrix, row-major semantics for I/O.
pub type RealMatrix = DMatrix<f64>;

/// A real symmetric matrix. Construction symmetrizes the input, so
/// `S == S^T` holds exactly afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "io::Rows", into = "io::Rows")]
pub struct SymmetricMatrix(RealMatrix);

impl SymmetricMatrix {
    pub fn new(m: RealMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                context: "symmetric matrix",
                expected: "square".into(),
                found: dims(m.nrows(), m.ncols()),
            });
        }
        ensure_finite(&m, "symmetric matrix")?;
        Ok(Self(symmetrize(&m)))
    }

    pub fn identity(n: usize) -> Self {
        Self(RealMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(RealMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(RealMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
    }

    /// Symmetrizes without the finiteness check; for internal results
    /// that are finite by construction.
    pub(crate) fn from_sym(m: RealMatrix) -> Self {
        debug_assert!(m.is_square());
        Self(symmetrize(&m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &RealMatrix {
        &self.0
    }

    pub fn into_inner(self) -> RealMatrix {
        self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Spectral norm, i.e. the largest eigenvalue magnitude.
    pub fn norm2(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

impl Deref for SymmetricMatrix {
    type Target = RealMatrix;

    fn deref(&self) -> &RealMatrix {
        &self.0
    }
}

impl From<SymmetricMatrix> for RealMatrix {
    fn from(s: SymmetricMatrix) -> Self {
        s.0
    }
}

pub fn symmetrize(m: &RealMatrix) -> RealMatrix {
    (m + m.transpose()) * 0.5
}

pub fn ensure_finite(m: &RealMatrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn ensure_shape(
    m: &RealMatrix,
    rows: usize,
    cols: usize,
    context: &'static str,
) -> Result<()> {
    if m.nrows() == rows && m.ncols() == cols {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected: dims(rows, cols),
            found: dims(m.nrows(), m.ncols()),
        })
    }
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &RealMatrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn max_abs(m: &RealMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Singular values, descending.
pub fn singular_values(m: &RealMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn spectral_norm(m: &RealMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Numerical rank with threshold `rank_tol * sigma_max`.
pub fn rank(m: &RealMatrix, rank_tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        Some(&smax) if smax > 0.0 => sv.iter().filter(|&&s| s > rank_tol * smax).count(),
        _ => 0,
    }
}

pub fn vstack(top: &RealMatrix, bottom: &RealMatrix) -> RealMatrix {
    assert_eq!(top.ncols(), bottom.ncols(), "vstack column mismatch");
    let mut out = RealMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub fn hstack(left: &RealMatrix, right: &RealMatrix) -> RealMatrix {
    assert_eq!(left.nrows(), right.nrows(), "hstack row mismatch");
    let mut out = RealMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.columns_mut(0, left.ncols()).copy_from(left);
    out.columns_mut(left.ncols(), right.ncols()).copy_from(right);
    out
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[&RealMatrix]) -> RealMatrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = RealMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Cholesky factor of a symmetric matrix that must be positive definite
/// relative to its own scale.
pub(crate) fn spd_cholesky(m: &RealMatrix, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    let ev = sym_eigenvalues(m);
    let (lo, hi) = match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite { what, min_eig: 0.0 }),
    };
    if !(lo > 1e-14 * hi.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::NotPositiveDefinite { what, min_eig: lo });
    }
    Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite { what, min_eig: lo })
}

pub(crate) fn spd_inverse(m: &RealMatrix, what: &'static str) -> Result<RealMatrix> {
    Ok(spd_cholesky(m, what)?.inverse())
}

/// Basis of the kernel in the orientation used throughout the crate.
///
/// For `A` with at least as many columns as rows the result has
/// orthonormal rows spanning `ker(A)`, so `A * result^T = 0`. Otherwise the
/// result has orthonormal columns spanning `ker(A^T)`, so `result^T * A = 0`.
/// Nullity is decided by singular values below `rank_tol * sigma_max`.
pub fn kernel_basis(a: &RealMatrix, rank_tol: f64) -> Result<RealMatrix> {
    ensure_finite(a, "kernel_basis input")?;
    if !(rank_tol > 0.0) {
        return Err(Error::Precondition("rank_tol must be positive".into()));
    }
    if a.nrows() > a.ncols() {
        return Ok(row_kernel(&a.transpose(), rank_tol).transpose());
    }
    Ok(row_kernel(a, rank_tol))
}

// Orthonormal rows spanning ker(a) for a wide (or square) matrix.
fn row_kernel(a: &RealMatrix, rank_tol: f64) -> RealMatrix {
    let (r, c) = a.shape();
    if c == 0 {
        return RealMatrix::zeros(0, 0);
    }
    // Pad to square so the thin SVD yields a full right basis.
    let mut padded = RealMatrix::zeros(c, c);
    padded.rows_mut(0, r).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().fold(0.0_f64, |acc, s| acc.max(*s));
    let kernel: Vec<usize> = (0..c)
        .filter(|&i| smax == 0.0 || sv[i] <= rank_tol * smax)
        .collect();
    let mut out = RealMatrix::zeros(kernel.len(), c);
    for (k, &i) in kernel.iter().enumerate() {
        out.set_row(k, &v_t.row(i));
    }
    out
}

/// Result of a semidefiniteness test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdCheck {
    pub is_psd: bool,
    /// Smallest eigenvalue.
    pub margin: f64,
}

/// `true` iff `lambda_min(S) >= -tol * max(1, ||S||)`.
pub fn is_psd(s: &SymmetricMatrix, tol: f64) -> Result<PsdCheck> {
    ensure_finite(s, "is_psd input")?;
    Ok(psd_check_eigs(&s.eigenvalues(), tol))
}

pub(crate) fn psd_check_eigs(ev: &[f64], tol: f64) -> PsdCheck {
    let margin = ev.first().copied().unwrap_or(0.0);
    let norm = ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    PsdCheck {
        is_psd: margin >= -tol * norm.max(1.0),
        margin,
    }
}

/// Which diagonal block of a 2x2 partition is eliminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Eliminate S11, returning `S22 - S12^T S11^{-1} S12`.
    Upper,
    /// Eliminate S22, returning `S11 - S12 S22^{-1} S12^T`.
    Lower,
}

/// Schur complement of the designated (positive definite) block. The
/// first `split` rows/columns form S11.
pub fn schur_reduce(s: &SymmetricMatrix, split: usize, which: Block) -> Result<SymmetricMatrix> {
    let n = s.dim();
    if split > n {
        return Err(Error::DimensionMismatch {
            context: "schur_reduce split",
            expected: format!("<= {n}"),
            found: split.to_string(),
        });
    }
    let s11 = s.view((0, 0), (split, split)).into_owned();
    let s12 = s.view((0, split), (split, n - split)).into_owned();
    let s22 = s.view((split, split), (n - split, n - split)).into_owned();
    let (keep, elim, coupling) = match which {
        Block::Lower => (s11, s22, s12.transpose()),
        Block::Upper => (s22, s11, s12),
    };
    if elim.nrows() == 0 {
        return Ok(SymmetricMatrix::from_sym(keep));
    }
    let ev = sym_eigenvalues(&elim);
    let lo = ev[0];
    let scale = ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(s.norm2());
    if !(lo > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularBlock { min_eig: lo });
    }
    let chol = Cholesky::new(elim).ok_or(Error::SingularBlock { min_eig: lo })?;
    // coupling is (elim x keep); result = keep - coupling^T elim^{-1} coupling
    let solved = chol.solve(&coupling);
    Ok(SymmetricMatrix::from_sym(keep - coupling.transpose() * solved))
}

/// Right inverse `G` of `X`, a complementary row space `X~` and its
/// right inverse `G~`, with `[X; X~][G G~] = I` and `G^T R G~ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RightInversePair {
    pub g: RealMatrix,
    pub g_tilde: RealMatrix,
    pub x_tilde: RealMatrix,
}

pub(crate) const RANK_TOL: f64 = 1e-10;

/// Weighted right inverse triple:
/// `G = R^{-1} X^T (X R^{-1} X^T)^{-1}`, `X~ = X_perp R`,
/// `G~ = X_perp^T (X_perp R X_perp^T)^{-1}`.
pub fn right_inverse_pair(x: &RealMatrix, r: &SymmetricMatrix) -> Result<RightInversePair> {
    ensure_finite(x, "regressor X")?;
    let (n, big_n) = x.shape();
    ensure_shape(r, big_n, big_n, "weight R")?;
    if n > big_n {
        return Err(Error::RankDeficient {
            what: "regressor X",
            rank: big_n,
            required: n,
        });
    }
    let rk = rank(x, RANK_TOL);
    if rk < n {
        return Err(Error::RankDeficient {
            what: "regressor X",
            rank: rk,
            required: n,
        });
    }
    let r_chol = spd_cholesky(r, "weight R")?;
    let rinv_xt = r_chol.solve(&x.transpose());
    let gram = x * &rinv_xt;
    let g = rinv_xt * spd_inverse(&gram, "X R^-1 X^T")?;

    let x_perp = kernel_basis(x, RANK_TOL)?;
    let x_perp = if x_perp.nrows() == 0 {
        RealMatrix::zeros(0, big_n)
    } else {
        x_perp
    };
    let x_tilde = &x_perp * r.as_matrix();
    let g_tilde = if x_perp.nrows() == 0 {
        RealMatrix::zeros(big_n, 0)
    } else {
        let inner = &x_tilde * x_perp.transpose();
        x_perp.transpose() * spd_inverse(&inner, "X_perp R X_perp^T")?
    };
    Ok(RightInversePair { g, g_tilde, x_tilde })
}

/// `max |[X; X~][G G~] - I|`.
pub fn block_identity_residual(
    x: &RealMatrix,
    x_tilde: &RealMatrix,
    g: &RealMatrix,
    g_tilde: &RealMatrix,
) -> f64 {
    let lhs = vstack(x, x_tilde);
    let rhs = hstack(g, g_tilde);
    if lhs.ncols() != rhs.nrows() || lhs.nrows() != rhs.ncols() {
        return f64::INFINITY;
    }
    let prod = lhs * rhs;
    let eye = RealMatrix::identity(prod.nrows(), prod.ncols());
    max_abs(&(prod - eye))
}
