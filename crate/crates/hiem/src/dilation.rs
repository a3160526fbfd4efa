//! Linear dilations `d(s) = exp(s * Gd)` generated by an anti-Hurwitz
//! matrix, together with the strict-monotonicity certificate and the
//! contraction bounds used to bracket norm root-solves.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::numerics::{self, NumericsError};

#[derive(Debug, Clone, Error)]
pub enum DilationError {
    #[error("generator is not anti-Hurwitz: eigenvalue real part {real_part:.3e}")]
    NotAntiHurwitz { real_part: f64 },
    #[error("weight matrix is not positive definite: min eigenvalue {min_eig:.3e}")]
    NotPositiveDefinite { min_eig: f64 },
    #[error("dilation is not strictly monotone in this weight: min eigenvalue of P*Gd + Gd^T*P is {min_eig:.3e}")]
    NotMonotone { min_eig: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// One-parameter group `x -> exp(s * Gd) x`. The generator must be
/// anti-Hurwitz (all eigenvalues in the open right half-plane) so that the
/// group contracts for `s < 0`.
#[derive(Debug, Clone)]
pub struct Dilation {
    /// Generator of the group.
    pub gd: DMatrix<f64>,
    /// Homogeneity degree this dilation was designed for.
    pub mu: f64,
    /// Structure matrix the generator was built from (`Gd = I + mu * G0`),
    /// kept for provenance when available.
    pub g0: Option<DMatrix<f64>>,
}

impl Dilation {
    /// Validates the anti-Hurwitz property of `gd`.
    pub fn new(
        gd: DMatrix<f64>,
        mu: f64,
        g0: Option<DMatrix<f64>>,
    ) -> Result<Self, DilationError> {
        if gd.nrows() != gd.ncols() {
            return Err(NumericsError::NotSquare {
                rows: gd.nrows(),
                cols: gd.ncols(),
            }
            .into());
        }
        let min_re = gd
            .complex_eigenvalues()
            .iter()
            .map(|c| c.re)
            .fold(f64::INFINITY, f64::min);
        if min_re <= 1e-10 {
            return Err(DilationError::NotAntiHurwitz { real_part: min_re });
        }
        Ok(Self { gd, mu, g0 })
    }

    pub fn dim(&self) -> usize {
        self.gd.nrows()
    }

    /// The group element `d(s) = exp(s * Gd)`.
    pub fn dmap(&self, s: f64) -> DMatrix<f64> {
        numerics::expm(&self.gd, s).expect("generator is square by construction")
    }
}

/// Certificate that a dilation is strictly monotone with respect to the
/// weighted norm `||x||_P`: `P > 0` and `P*Gd + Gd^T*P > 0`, plus the
/// contraction exponents
/// `alpha = lambda_max(P^{1/2} Gd P^{-1/2} + transpose)/2` and
/// `beta` the matching minimum. For `s <= 0` the operator norm satisfies
/// `e^{alpha s} <= ||d(s)||_P <= e^{beta s}`.
#[derive(Debug, Clone)]
pub struct MonotonicityCert {
    pub p: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
}

/// Checks strict monotonicity of `d` in the `P`-weighted norm and computes
/// the contraction exponents.
pub fn certify_monotone(
    d: &Dilation,
    p: &DMatrix<f64>,
) -> Result<MonotonicityCert, DilationError> {
    let n = d.dim();
    if p.nrows() != n || p.ncols() != n {
        return Err(NumericsError::Dimension {
            context: format!("weight is {}x{}, dilation is {n}-dimensional", p.nrows(), p.ncols()),
        }
        .into());
    }
    let p = numerics::symmetrize(p);
    let scale = p.trace() / n as f64;
    let p_eig = numerics::sym_eig(&p)?;
    if p_eig.values[0] <= 1e-10 * scale {
        return Err(DilationError::NotPositiveDefinite {
            min_eig: p_eig.values[0],
        });
    }
    let pg = &p * &d.gd;
    let pg_sym = &pg + pg.transpose();
    let min_pg = numerics::min_eig_sym(&pg_sym);
    if min_pg <= 1e-10 * scale {
        return Err(DilationError::NotMonotone { min_eig: min_pg });
    }
    let (p_sqrt, p_inv_sqrt) = numerics::spd_sqrt(&p)?;
    let balanced = &p_sqrt * &d.gd * &p_inv_sqrt;
    let sym = &balanced + balanced.transpose();
    let eig = numerics::sym_eig(&sym)?;
    let beta = 0.5 * eig.values[0];
    let alpha = 0.5 * eig.values[eig.values.len() - 1];
    Ok(MonotonicityCert { p, alpha, beta })
}

/// Interval guaranteed to contain the scale `s_x` solving
/// `||d(-s) x||_P = 1` for a point with `||x||_P = r`.
pub fn norm_bracket(cert: &MonotonicityCert, r: f64) -> (f64, f64) {
    debug_assert!(r > 0.0, "bracket requires a positive radius");
    let ln_r = r.ln();
    if ln_r >= 0.0 {
        (ln_r / cert.alpha, ln_r / cert.beta)
    } else {
        (ln_r / cert.beta, ln_r / cert.alpha)
    }
}

/// Operator norm of `M` in the `P`-weighted metric,
/// `max sigma(P^{1/2} M P^{-1/2})`.
pub fn weighted_operator_norm(p: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    let (p_sqrt, p_inv_sqrt) = numerics::spd_sqrt(p).expect("weight must be positive definite");
    (&p_sqrt * m * &p_inv_sqrt).svd(false, false).singular_values.max()
}
