//! Dense linear-algebra substrate shared by all synthesis and simulation
//! paths: matrix exponential, symmetric eigendecomposition, minimum-norm
//! least squares and controllability analysis, each with an explicit
//! tolerance policy.
//!
//! Everything here targets small dense problems (n below ~20); there is no
//! sparse path on purpose.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative rank tolerance: singular values below `RANK_TOL * sigma_max`
/// count as zero. Matches double-precision conditioning of the desk-scale
/// problems this crate targets.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Error)]
pub enum NumericsError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {context}")]
    Dimension { context: String },
    #[error("pair (A, B) is not controllable: rank stalled at {achieved_rank} of {dim}")]
    NotControllable { achieved_rank: usize, dim: usize },
    #[error("matrix is not positive definite: min eigenvalue {min_eig:.3e}")]
    NotPositiveDefinite { min_eig: f64 },
}

/// Matrix exponential `exp(s * M)`.
///
/// Backed by scaling-and-squaring with a high-order rational approximant;
/// relative accuracy on well-conditioned inputs is well below 1e-12, which
/// leaves headroom for the norm root-solves that compose many of these.
pub fn expm(m: &DMatrix<f64>, s: f64) -> Result<DMatrix<f64>, NumericsError> {
    if m.nrows() != m.ncols() {
        return Err(NumericsError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok((m * s).exp())
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in ascending
/// order and orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigenReport {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenReport {
    /// Reconstruction `V diag(values) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

/// Symmetric eigendecomposition. The input is symmetrized as `(M + M^T)/2`
/// before decomposing, so mild asymmetry from accumulated rounding is
/// tolerated.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<EigenReport, NumericsError> {
    if m.nrows() != m.ncols() {
        return Err(NumericsError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(EigenReport { values, vectors })
}

/// `(M + M^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a (symmetrized) matrix.
pub fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    sym_eig(m).map(|e| e.values[0]).unwrap_or(f64::NAN)
}

/// Minimum-norm least-squares solution together with the residual norm
/// `||A x - b||`.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub solution: DVector<f64>,
    pub residual: f64,
}

/// Minimum-norm least squares via SVD pseudo-inverse semantics; rank
/// deficiency is handled by truncating singular values below
/// `RANK_TOL * sigma_max`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> LstsqSolution {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { RANK_TOL * smax } else { f64::EPSILON };
    let solution = svd
        .solve(b, eps)
        .expect("SVD solve cannot fail when U and V are computed");
    let residual = (a * &solution - b).norm();
    LstsqSolution { solution, residual }
}

/// Numerical rank: count of singular values above `RANK_TOL * sigma_max`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Smallest `k` such that `[B, AB, ..., A^{k-1} B]` has full row rank.
pub fn controllability_index(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<usize, NumericsError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(NumericsError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if b.nrows() != n {
        return Err(NumericsError::Dimension {
            context: format!("B has {} rows, expected {}", b.nrows(), n),
        });
    }
    let m = b.ncols();
    let mut staircase = DMatrix::<f64>::zeros(n, n * m);
    let mut block = b.clone();
    let mut achieved = 0;
    for k in 1..=n {
        staircase.view_mut((0, (k - 1) * m), (n, m)).copy_from(&block);
        achieved = rank(&staircase.columns(0, k * m).into_owned());
        if achieved == n {
            return Ok(k);
        }
        block = a * &block;
    }
    Err(NumericsError::NotControllable {
        achieved_rank: achieved,
        dim: n,
    })
}

/// Square root and inverse square root of a symmetric positive definite
/// matrix.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), NumericsError> {
    let eig = sym_eig(m)?;
    let min_eig = eig.values[0];
    let scale = eig.values[eig.values.len() - 1].abs().max(1.0);
    if min_eig <= 1e-14 * scale {
        return Err(NumericsError::NotPositiveDefinite { min_eig });
    }
    let sqrt_vals = eig.values.map(|v| v.sqrt());
    let inv_sqrt_vals = eig.values.map(|v| 1.0 / v.sqrt());
    let sqrt = &eig.vectors * DMatrix::from_diagonal(&sqrt_vals) * eig.vectors.transpose();
    let inv_sqrt = &eig.vectors * DMatrix::from_diagonal(&inv_sqrt_vals) * eig.vectors.transpose();
    Ok((sqrt, inv_sqrt))
}

/// Weighted norm `sqrt(x^T P x)`.
pub fn weighted_norm(p: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.dot(&(p * x))).max(0.0).sqrt()
}
