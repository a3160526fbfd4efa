//! Homogeneous design procedure for controllable plants: solve the
//! generator equations `A G0 - G0 A + B Y0 = A`, `G0 B = 0`, build the
//! dilation generator `Gd = I + mu G0` and the cancelling gain
//! `K0 = Y0 (G0 - I)^{-1}`, and solve the prescribed-decay stabilizing
//! system for a shape/gain pair `(X, Y)`.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use thiserror::Error;

use crate::dilation::{Dilation, DilationError};
use crate::numerics::{self, NumericsError};
use crate::sdp::{SdpProblem, SdpStatus, SolveOptions};

/// Relative residual accepted for a generator-equation solution.
pub const GENERATOR_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("generator equations admit no solution at this accuracy: relative residual {residual:.3e}")]
    NoSolution { residual: f64 },
    #[error("G0 - I stayed numerically singular after {retries} perturbed re-solves")]
    DegenerateSolution { retries: usize },
    #[error("degree {mu} outside the admissible range [-1, {hi}]")]
    MuOutOfRange { mu: f64, hi: f64 },
    #[error("generator is inconsistent: {0}")]
    InconsistentGenerator(String),
    #[error("stabilizing system reported infeasible by the conic backend: {0}")]
    Infeasible(String),
    #[error("invalid argument: {0}")]
    BadInput(String),
}

/// Solution of the generator equations together with the derived design
/// quantities.
#[derive(Debug, Clone)]
pub struct GeneratorSolution {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g0: DMatrix<f64>,
    pub y0: DMatrix<f64>,
    /// Worst relative residual over the two generator equations.
    pub residual: f64,
    /// Cancelling gain `Y0 (G0 - I)^{-1}`.
    pub k0: DMatrix<f64>,
    /// Homogenized drift `A + B K0`.
    pub a0: DMatrix<f64>,
    /// Controllability index of `(A, B)`.
    pub ctrl_index: usize,
    /// Whether `A` itself is (numerically) nilpotent. The design equations
    /// are attempted either way; callers may want to surface a warning.
    pub a_nilpotent: bool,
}

impl GeneratorSolution {
    /// Builds a solution from externally supplied `(G0, Y0)`, validating
    /// the equation residuals against `residual_tol` (pass infinity to
    /// evaluate reference data without enforcing the bound).
    pub fn from_parts(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        g0: DMatrix<f64>,
        y0: DMatrix<f64>,
        residual_tol: f64,
    ) -> Result<Self, SynthesisError> {
        let ctrl_index = numerics::controllability_index(&a, &b)?;
        let residual = generator_residual(&a, &b, &g0, &y0);
        if residual > residual_tol {
            return Err(SynthesisError::NoSolution { residual });
        }
        Self::finish(a, b, g0, y0, residual, ctrl_index)
    }

    fn finish(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        g0: DMatrix<f64>,
        y0: DMatrix<f64>,
        residual: f64,
        ctrl_index: usize,
    ) -> Result<Self, SynthesisError> {
        let n = a.nrows();
        let g0_minus_i = &g0 - DMatrix::<f64>::identity(n, n);
        let sv = g0_minus_i.clone().svd(false, false).singular_values;
        if sv.min() <= 1e-9 * sv.max() {
            return Err(SynthesisError::DegenerateSolution { retries: 0 });
        }
        let inv = g0_minus_i
            .try_inverse()
            .ok_or(SynthesisError::DegenerateSolution { retries: 0 })?;
        let k0 = &y0 * inv;
        let a0 = &a + &b * &k0;
        let a_nilpotent = is_nilpotent(&a);
        Ok(Self {
            a,
            b,
            g0,
            y0,
            residual,
            k0,
            a0,
            ctrl_index,
            a_nilpotent,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Admissible degree range `[-1, 1/ctrl_index]`.
    pub fn mu_range(&self) -> (f64, f64) {
        (-1.0, 1.0 / self.ctrl_index as f64)
    }
}

/// Worst relative residual of the two generator equations for a candidate
/// `(G0, Y0)`.
pub fn generator_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    g0: &DMatrix<f64>,
    y0: &DMatrix<f64>,
) -> f64 {
    let res1 = (a * g0 - g0 * a + b * y0 - a).norm() / (1.0 + a.norm());
    let res2 = (g0 * b).norm() / (1.0 + b.norm());
    res1.max(res2)
}

/// Power test: `A^n` must vanish relative to `||A||^n`. More robust than
/// eigenvalues, whose perturbation for defective matrices scales like
/// `eps^{1/n}`.
pub fn is_nilpotent(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let norm = a.norm();
    if norm == 0.0 {
        return true;
    }
    let mut power = a.clone();
    for _ in 1..n {
        power = &power * a;
    }
    power.norm() <= 1e-9 * norm.powi(n as i32)
}

/// Solves the generator equations by minimum-norm least squares over the
/// vectorized unknowns `(G0, Y0)`.
///
/// If the minimum-norm solution leaves `G0 - I` singular, a seeded random
/// element of the homogeneous solution space is mixed in and the solve is
/// retried a few times before giving up.
pub fn solve_generator(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<GeneratorSolution, SynthesisError> {
    let ctrl_index = numerics::controllability_index(a, b)?;
    let n = a.nrows();
    let m = b.ncols();
    let eye_n = DMatrix::<f64>::identity(n, n);

    // vec (column-major) of the two equations:
    //   (I (x) A - A^T (x) I) vec(G0) + (I (x) B) vec(Y0) = vec(A)
    //   (B^T (x) I) vec(G0) = 0
    let rows = n * n + n * m;
    let cols = n * n + m * n;
    let mut sys = DMatrix::<f64>::zeros(rows, cols);
    sys.view_mut((0, 0), (n * n, n * n))
        .copy_from(&(eye_n.kronecker(a) - a.transpose().kronecker(&eye_n)));
    sys.view_mut((0, n * n), (n * n, m * n))
        .copy_from(&eye_n.kronecker(b));
    sys.view_mut((n * n, 0), (n * m, n * n))
        .copy_from(&b.transpose().kronecker(&eye_n));
    let mut rhs = DVector::<f64>::zeros(rows);
    for j in 0..n {
        for i in 0..n {
            rhs[j * n + i] = a[(i, j)];
        }
    }

    let base = numerics::lstsq(&sys, &rhs);
    let unpack = |v: &DVector<f64>| -> (DMatrix<f64>, DMatrix<f64>) {
        let g0 = DMatrix::from_fn(n, n, |i, j| v[j * n + i]);
        let y0 = DMatrix::from_fn(m, n, |i, j| v[n * n + j * m + i]);
        (g0, y0)
    };

    let (g0, y0) = unpack(&base.solution);
    let residual = generator_residual(a, b, &g0, &y0);
    if residual > GENERATOR_RESIDUAL_TOL {
        return Err(SynthesisError::NoSolution { residual });
    }
    match GeneratorSolution::finish(a.clone(), b.clone(), g0, y0, residual, ctrl_index) {
        Err(SynthesisError::DegenerateSolution { .. }) => {}
        other => return other,
    }

    // Mix in homogeneous-space directions until G0 - I leaves the singular
    // set.
    let svd = sys.svd(false, true);
    let v_t = svd.v_t.expect("V requested");
    let smax = svd.singular_values.max();
    let null_rows: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] <= numerics::RANK_TOL * smax)
        .collect();
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed);
    for _retry in 0..5 {
        let mut candidate = base.solution.clone();
        for &row in &null_rows {
            let w: f64 = rng.random_range(-1.0..1.0);
            for k in 0..cols {
                candidate[k] += 1e-2 * w * v_t[(row, k)];
            }
        }
        let (g0, y0) = unpack(&candidate);
        let residual = generator_residual(a, b, &g0, &y0);
        if residual > GENERATOR_RESIDUAL_TOL {
            continue;
        }
        match GeneratorSolution::finish(a.clone(), b.clone(), g0, y0, residual, ctrl_index) {
            Err(SynthesisError::DegenerateSolution { .. }) => continue,
            Err(other) => return Err(other),
            Ok(sol) => return Ok(sol),
        }
    }
    Err(SynthesisError::DegenerateSolution { retries: 5 })
}

/// Builds the dilation `Gd = I + mu G0` for a degree in the admissible
/// range `[-1, 1/ctrl_index]` and re-verifies the homogeneity identities.
pub fn make_dilation(gs: &GeneratorSolution, mu: f64) -> Result<Dilation, SynthesisError> {
    let (lo, hi) = gs.mu_range();
    if !(lo..=hi).contains(&mu) {
        return Err(SynthesisError::MuOutOfRange { mu, hi });
    }
    let n = gs.n();
    let gd = DMatrix::<f64>::identity(n, n) + &gs.g0 * mu;
    let d = Dilation::new(gd, mu, Some(gs.g0.clone())).map_err(|e| match e {
        DilationError::NotAntiHurwitz { real_part } => SynthesisError::InconsistentGenerator(
            format!("Gd = I + mu G0 is not anti-Hurwitz (eigenvalue real part {real_part:.3e})"),
        ),
        other => SynthesisError::InconsistentGenerator(other.to_string()),
    })?;
    // A0 Gd = (Gd + mu I) A0 and Gd B = B.
    let lhs = &gs.a0 * &d.gd;
    let rhs = (&d.gd + DMatrix::<f64>::identity(n, n) * mu) * &gs.a0;
    let scale = (1.0 + gs.a0.norm()) * (1.0 + d.gd.norm());
    if (lhs - rhs).norm() > 1e-7 * scale {
        return Err(SynthesisError::InconsistentGenerator(
            "homogeneity identity A0 Gd = (Gd + mu I) A0 violated".into(),
        ));
    }
    if (&d.gd * &gs.b - &gs.b).norm() > 1e-7 * (1.0 + gs.b.norm()) {
        return Err(SynthesisError::InconsistentGenerator(
            "dilation does not fix the input directions (Gd B != B)".into(),
        ));
    }
    Ok(d)
}

/// Shape/gain pair solving the prescribed-decay stabilizing system
/// `A0 X + X A0^T + B Y + Y^T B^T + rho (Gd X + X Gd^T) = 0` with
/// `X > 0` and `Gd X + X Gd^T > 0` (trace of `X` normalized to `n`).
#[derive(Debug, Clone)]
pub struct StabilizingPair {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub rho: f64,
}

pub fn solve_stabilizing(
    gs: &GeneratorSolution,
    d: &Dilation,
    rho: f64,
) -> Result<StabilizingPair, SynthesisError> {
    if !(rho > 0.0) {
        return Err(SynthesisError::BadInput(format!(
            "decay rate must be positive, got {rho}"
        )));
    }
    let n = gs.n();
    let m = gs.m();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut p = SdpProblem::new();
    let x = p.add_sym(n);
    let y = p.add_rect(m, n);

    let mut equation = p.expr(n);
    equation.add_product(&p, &gs.a0, x, false, &eye, 1.0, 0, 0);
    equation.add_product(&p, &eye, x, false, &gs.a0.transpose(), 1.0, 0, 0);
    equation.add_product(&p, &gs.b, y, false, &eye, 1.0, 0, 0);
    equation.add_product(&p, &eye, y, true, &gs.b.transpose(), 1.0, 0, 0);
    equation.add_product(&p, &d.gd, x, false, &eye, rho, 0, 0);
    equation.add_product(&p, &eye, x, false, &d.gd.transpose(), rho, 0, 0);
    p.add_equality_expr_zero(&equation);
    p.add_equality_trace(x, n as f64);

    // Strict cones shifted by a small margin; trace(X) = n keeps the scale
    // at one so the margin is meaningful.
    let eps = 1e-6;
    let mut x_cone = p.expr(n);
    x_cone.add_var(&p, x, 1.0, 0, 0);
    x_cone.add_const(&(-&eye * eps), 0, 0);
    p.add_psd(x_cone);
    let mut mono_cone = p.expr(n);
    mono_cone.add_product(&p, &d.gd, x, false, &eye, 1.0, 0, 0);
    mono_cone.add_product(&p, &eye, x, false, &d.gd.transpose(), 1.0, 0, 0);
    mono_cone.add_const(&(-&eye * eps), 0, 0);
    p.add_psd(mono_cone);

    let sol = p
        .solve(&SolveOptions::default())
        .map_err(|e| SynthesisError::Infeasible(e.to_string()))?;
    if sol.status != SdpStatus::Optimal {
        return Err(SynthesisError::Infeasible(format!(
            "status {:?}: {}",
            sol.status, sol.message
        )));
    }
    let x_val = numerics::symmetrize(&sol.values[0]);
    let y_val = sol.values[1].clone();

    // Re-verify the invariants outside the backend.
    let eq_res = (&gs.a0 * &x_val
        + &x_val * gs.a0.transpose()
        + &gs.b * &y_val
        + y_val.transpose() * gs.b.transpose()
        + (&d.gd * &x_val + &x_val * d.gd.transpose()) * rho)
        .norm();
    let scale = 1.0 + x_val.norm();
    if eq_res > 1e-6 * scale {
        return Err(SynthesisError::Infeasible(format!(
            "stabilizing equation residual {eq_res:.3e} exceeds tolerance"
        )));
    }
    Ok(StabilizingPair {
        x: x_val,
        y: y_val,
        rho,
    })
}
