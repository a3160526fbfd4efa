//! Evaluation of the homogeneous state feedback
//! `u(x) = K0 x + ||x||^{mu+1} K d(-ln ||x||) x` (canonical homogeneous
//! norm throughout) and its linear specialization at degree zero, with a
//! defined, integration-friendly behaviour near the origin.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dilation::{certify_monotone, Dilation, DilationError};
use crate::homnorm::HomNormContext;
use crate::numerics;

/// Default homogeneous-norm floor below which the feedback ramps to zero
/// instead of evaluating the (ill-conditioned) exact formula.
pub const DEFAULT_NORM_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Dilation(#[from] DilationError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
}

/// Homogeneous feedback with recorded norm context.
#[derive(Debug, Clone)]
pub struct HomogeneousController {
    k0: DMatrix<f64>,
    k: DMatrix<f64>,
    mu: f64,
    norm_floor: f64,
    ctx: HomNormContext,
}

impl HomogeneousController {
    pub fn new(
        k0: DMatrix<f64>,
        k: DMatrix<f64>,
        p: DMatrix<f64>,
        d: Dilation,
        mu: f64,
        norm_floor: f64,
    ) -> Result<Self, ControllerError> {
        let n = d.dim();
        if k0.ncols() != n || k.ncols() != n {
            return Err(ControllerError::Dimension(format!(
                "gains must have {n} columns, got {} and {}",
                k0.ncols(),
                k.ncols()
            )));
        }
        if k0.nrows() != k.nrows() {
            return Err(ControllerError::Dimension(
                "K0 and K must have the same number of rows".into(),
            ));
        }
        let cert = certify_monotone(&d, &p)?;
        let ctx = HomNormContext::new(d, cert);
        Ok(Self {
            k0,
            k,
            mu,
            norm_floor,
            ctx,
        })
    }

    pub fn k0(&self) -> &DMatrix<f64> {
        &self.k0
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn norm_floor(&self) -> f64 {
        self.norm_floor
    }

    pub fn p(&self) -> &DMatrix<f64> {
        self.ctx.p()
    }

    pub fn dilation(&self) -> &Dilation {
        self.ctx.dilation()
    }

    pub fn ctx(&self) -> &HomNormContext {
        &self.ctx
    }

    pub fn n(&self) -> usize {
        self.ctx.dim()
    }

    pub fn m(&self) -> usize {
        self.k.nrows()
    }

    /// Feedback value. Above the norm floor this is the exact homogeneous
    /// formula; below it the nonlinear term is ramped linearly (degree
    /// above -1) or evaluated with the norm clamped at the floor (degree
    /// exactly -1, which keeps the magnitude on its bounded sphere). The
    /// origin always maps to zero.
    pub fn eval_u(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = self.m();
        let xp = numerics::weighted_norm(self.ctx.p(), x);
        if xp <= crate::homnorm::ZERO_NORM_TOL {
            return DVector::zeros(m);
        }
        let r = self.ctx.hom_norm(x);
        if r <= 0.0 {
            return DVector::zeros(m);
        }
        let linear_part = &self.k0 * x;
        if r >= self.norm_floor {
            let scaled = self.ctx.dmap_apply(-r.ln(), x);
            return linear_part + (&self.k * scaled) * r.powf(self.mu + 1.0);
        }
        // Below the floor, work with the unit projection pi = d(-ln r) x,
        // which stays bounded while x collapses to the origin.
        let pi = self.ctx.dmap_apply(-r.ln(), x);
        if self.mu > -1.0 {
            // Continuous ramp: the exact value at the floor shell is
            // floor^{mu+1} K pi; scale it linearly to zero with r.
            let gain = self.norm_floor.powf(self.mu + 1.0) * (r / self.norm_floor);
            linear_part + (&self.k * pi) * gain
        } else {
            // Degree -1: the r-power disappears and the value rides the
            // bounded-control sphere; clamping keeps it there.
            linear_part + &self.k * pi
        }
    }

    /// Certified supremum of `||u||` for the bounded configuration
    /// (degree -1 with no linear part): `sqrt(lambda_max(P^{-1/2} K^T K P^{-1/2}))`.
    pub fn sup_u_bound(&self) -> Result<f64, ControllerError> {
        if self.mu != -1.0 {
            return Err(ControllerError::NotApplicable(format!(
                "supremum bound holds only at degree -1, controller has {}",
                self.mu
            )));
        }
        if self.k0.norm() > 1e-9 * (1.0 + self.k.norm()) {
            return Err(ControllerError::NotApplicable(
                "supremum bound requires a zero cancelling gain".into(),
            ));
        }
        let (_, p_inv_sqrt) = numerics::spd_sqrt(self.ctx.p())
            .map_err(|e| ControllerError::NotApplicable(e.to_string()))?;
        let m = &p_inv_sqrt * self.k.transpose() * &self.k * &p_inv_sqrt;
        let eig = numerics::sym_eig(&m).map_err(|e| ControllerError::NotApplicable(e.to_string()))?;
        Ok(eig.values[eig.values.len() - 1].max(0.0).sqrt())
    }
}
