//! Canonical homogeneous norm induced by a strictly monotone dilation: the
//! implicit root-solve `||d(-s) x||_P = 1`, its closed-form gradient, and
//! the projection onto the unit `P`-sphere.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::dilation::{norm_bracket, Dilation, MonotonicityCert};
use crate::numerics;

/// Default relative tolerance of the norm root-solve.
pub const DEFAULT_ROOT_TOL: f64 = 1e-12;

/// Below this `P`-norm a point is treated as the origin: the norm is 0 and
/// gradient/projection are undefined.
pub const ZERO_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Error)]
pub enum HomNormError {
    #[error("input is numerically zero (||x||_P = {norm:.3e}); gradient and projection are undefined at the origin")]
    DegenerateInput { norm: f64 },
}

/// Diagonalization `Gd = V diag(values) V^{-1}` used to evaluate the group
/// action in O(n^2) per root iteration instead of one matrix exponential.
#[derive(Debug, Clone)]
struct EigBasis {
    values: Vec<Complex<f64>>,
    v: DMatrix<Complex<f64>>,
    v_inv: DMatrix<Complex<f64>>,
}

impl EigBasis {
    /// Attempts to diagonalize. Returns `None` when the generator is
    /// defective or too ill-conditioned (condition number above 1e6), in
    /// which case callers fall back to a matrix exponential per evaluation.
    fn build(gd: &DMatrix<f64>) -> Option<Self> {
        let n = gd.nrows();
        let gdc = gd.map(|x| Complex::new(x, 0.0));
        let values: Vec<Complex<f64>> = gd.complex_eigenvalues().iter().copied().collect();
        let mut v = DMatrix::<Complex<f64>>::zeros(n, n);
        for (j, lam) in values.iter().enumerate() {
            let shifted = &gdc - DMatrix::<Complex<f64>>::identity(n, n) * *lam;
            let svd = shifted.svd(false, true);
            let vt = svd.v_t?;
            // Null direction: right singular vector of the smallest singular value.
            let row = vt.row(n - 1);
            for i in 0..n {
                v[(i, j)] = row[i].conj();
            }
        }
        let sv = v.clone().svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 0.0) || smax / smin > 1e6 {
            return None;
        }
        let v_inv = v.clone().try_inverse()?;
        let basis = Self { values, v, v_inv };
        // Accept only if the diagonalized exponential agrees with the
        // reference matrix exponential.
        let reference = numerics::expm(gd, 1.0).ok()?;
        let diff = (basis.dmap_matrix(1.0) - &reference).norm();
        if diff > 1e-11 * (1.0 + reference.norm()) {
            return None;
        }
        Some(basis)
    }

    fn dmap_apply(&self, s: f64, x: &DVector<f64>) -> DVector<f64> {
        let xc = x.map(|v| Complex::new(v, 0.0));
        let mut c = &self.v_inv * xc;
        for (i, lam) in self.values.iter().enumerate() {
            c[i] *= (lam * s).exp();
        }
        let y = &self.v * c;
        y.map(|z| z.re)
    }

    fn dmap_matrix(&self, s: f64) -> DMatrix<f64> {
        let mut scaled = self.v.clone();
        for (j, lam) in self.values.iter().enumerate() {
            let e = (lam * s).exp();
            for i in 0..scaled.nrows() {
                scaled[(i, j)] *= e;
            }
        }
        (scaled * &self.v_inv).map(|z| z.re)
    }
}

/// Immutable evaluation context for one `(d, P)` pair. Construction caches
/// the diagonalization of the generator (when available) and the symmetric
/// form `P Gd + Gd^T P` used by the Newton step.
#[derive(Debug, Clone)]
pub struct HomNormContext {
    d: Dilation,
    cert: MonotonicityCert,
    tol: f64,
    pg_sym: DMatrix<f64>,
    basis: Option<EigBasis>,
}

impl HomNormContext {
    pub fn new(d: Dilation, cert: MonotonicityCert) -> Self {
        Self::with_tol(d, cert, DEFAULT_ROOT_TOL)
    }

    pub fn with_tol(d: Dilation, cert: MonotonicityCert, tol: f64) -> Self {
        let pg = &cert.p * &d.gd;
        let pg_sym = &pg + pg.transpose();
        let basis = EigBasis::build(&d.gd);
        Self { d, cert, tol, pg_sym, basis }
    }

    pub fn dilation(&self) -> &Dilation {
        &self.d
    }

    pub fn cert(&self) -> &MonotonicityCert {
        &self.cert
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.cert.p
    }

    pub fn dim(&self) -> usize {
        self.d.dim()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// `d(s) x` through the cached diagonalization when available.
    pub fn dmap_apply(&self, s: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Some(b) => b.dmap_apply(s, x),
            None => self.d.dmap(s) * x,
        }
    }

    /// The full matrix `d(s)`.
    pub fn dmap_matrix(&self, s: f64) -> DMatrix<f64> {
        match &self.basis {
            Some(b) => b.dmap_matrix(s),
            None => self.d.dmap(s),
        }
    }

    /// Canonical homogeneous norm: `e^{s_x}` with `||d(-s_x) x||_P = 1`,
    /// and 0 at the origin.
    ///
    /// The root is enclosed by the monotonicity bracket, narrowed by
    /// bisection until the bracket is short, then polished by Newton steps
    /// that fall back to bisection whenever they leave the bracket.
    pub fn hom_norm(&self, x: &DVector<f64>) -> f64 {
        let r = numerics::weighted_norm(&self.cert.p, x);
        if r <= ZERO_NORM_TOL {
            return 0.0;
        }
        let (mut lo, mut hi) = norm_bracket(&self.cert, r);
        // Pad against rounding at the bracket endpoints.
        let pad = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        lo -= pad;
        hi += pad;

        let g_at = |s: f64| -> (f64, DVector<f64>) {
            let w = self.dmap_apply(-s, x);
            (numerics::weighted_norm(&self.cert.p, &w), w)
        };

        // Bisection until the bracket is short enough for Newton.
        while hi - lo >= 0.5 {
            let mid = 0.5 * (lo + hi);
            let (nw, _) = g_at(mid);
            if nw - 1.0 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }

        let mut s = 0.5 * (lo + hi);
        for _ in 0..100 {
            let (nw, w) = g_at(s);
            let g = nw - 1.0;
            if g.abs() <= self.tol {
                return s.exp();
            }
            if g > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            // g'(s) = -w^T (P Gd + Gd^T P) w / (2 ||w||_P) < 0
            let gp = -w.dot(&(&self.pg_sym * &w)) / (2.0 * nw);
            let newton = s - g / gp;
            s = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        s.exp()
    }

    /// Gradient of the homogeneous norm at `x != 0` (column vector).
    pub fn hom_norm_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, HomNormError> {
        let xp = numerics::weighted_norm(&self.cert.p, x);
        if xp <= ZERO_NORM_TOL {
            return Err(HomNormError::DegenerateInput { norm: xp });
        }
        let r = self.hom_norm(x);
        let ds = self.dmap_matrix(-r.ln());
        let pi = &ds * x;
        let p_pi = &self.cert.p * &pi;
        let numerator = ds.transpose() * &p_pi;
        let denominator = pi.dot(&(&self.cert.p * (&self.d.gd * &pi)));
        Ok(numerator * (r / denominator))
    }

    /// Projection `pi = d(-ln ||x||) x` onto the unit `P`-sphere.
    pub fn hom_project(&self, x: &DVector<f64>) -> Result<DVector<f64>, HomNormError> {
        let xp = numerics::weighted_norm(&self.cert.p, x);
        if xp <= ZERO_NORM_TOL {
            return Err(HomNormError::DegenerateInput { norm: xp });
        }
        let r = self.hom_norm(x);
        let pi = self.dmap_apply(-r.ln(), x);
        debug_assert!(
            (numerics::weighted_norm(&self.cert.p, &pi) - 1.0).abs() <= 10.0 * self.tol.max(1e-12),
            "projection left the unit sphere"
        );
        Ok(pi)
    }
}

/// Solves `P Gd + Gd^T P = R` for the weight `P` of a strictly monotone
/// norm; for an anti-Hurwitz generator and `R > 0` the solution is positive
/// definite.
pub fn lyapunov_weight(gd: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gd.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(P Gd + Gd^T P) = (Gd^T kron I + I kron Gd^T) vec(P)
    let big = gd.transpose().kronecker(&eye) + eye.kronecker(&gd.transpose());
    let rhs_vec = DVector::from_fn(n * n, |k, _| rhs[(k % n, k / n)]);
    let sol = numerics::lstsq(&big, &rhs_vec);
    numerics::symmetrize(&DMatrix::from_fn(n, n, |i, j| sol.solution[j * n + i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dilation::certify_monotone;
    use rand::{RngExt, SeedableRng};

    fn seeded_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_context(n: usize, seed: u64) -> HomNormContext {
        let gd = DMatrix::<f64>::identity(n, n) + seeded_matrix(n, seed) * 0.35;
        let d = Dilation::new(gd.clone(), -0.5, None).unwrap();
        let r = {
            let m = seeded_matrix(n, seed + 500);
            numerics::symmetrize(&(&m * m.transpose())) + DMatrix::identity(n, n)
        };
        let p = lyapunov_weight(&gd, &r);
        let cert = certify_monotone(&d, &p).unwrap();
        HomNormContext::new(d, cert)
    }

    fn euclidean_context(n: usize) -> HomNormContext {
        let d = Dilation::new(DMatrix::identity(n, n), 0.0, None).unwrap();
        let cert = certify_monotone(&d, &DMatrix::identity(n, n)).unwrap();
        HomNormContext::new(d, cert)
    }

    #[test]
    fn unit_sphere_points_have_unit_norm() {
        let ctx = random_context(4, 1);
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        for _ in 0..50 {
            let raw = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let scale = numerics::weighted_norm(ctx.p(), &raw);
            if scale < 1e-6 {
                continue;
            }
            let x = raw / scale;
            assert!((ctx.hom_norm(&x) - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn degree_zero_is_the_euclidean_norm() {
        let ctx = euclidean_context(3);
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-4.0..4.0));
            assert!((ctx.hom_norm(&x) - x.norm()).abs() <= 1e-10 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let ctx = random_context(4, 5);
        assert_eq!(ctx.hom_norm(&DVector::zeros(4)), 0.0);
    }

    #[test]
    fn scaling_law() {
        let ctx = random_context(4, 7);
        let mut rng = rand::rngs::StdRng::seed_from_u64(8);
        for _ in 0..200 {
            let x = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            if x.norm() < 1e-6 {
                continue;
            }
            let s: f64 = rng.random_range(-2.0..2.0);
            let lhs = ctx.hom_norm(&ctx.dmap_apply(s, &x));
            let rhs = s.exp() * ctx.hom_norm(&x);
            assert!(
                (lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1e-12),
                "lhs {lhs:.12e} rhs {rhs:.12e}"
            );
        }
    }

    #[test]
    fn norm_is_symmetric() {
        let ctx = random_context(5, 9);
        let mut rng = rand::rngs::StdRng::seed_from_u64(10);
        for _ in 0..50 {
            let x = DVector::from_fn(5, |_, _| rng.random_range(-3.0..3.0));
            assert!((ctx.hom_norm(&x) - ctx.hom_norm(&(-&x))).abs() <= 1e-12);
        }
    }

    #[test]
    fn continuity_at_the_origin() {
        let ctx = random_context(4, 11);
        let v = DVector::from_vec(vec![0.3, -0.7, 0.5, 0.1]);
        for eps in [1e-3, 1e-6] {
            let x = &v * eps;
            let r = numerics::weighted_norm(ctx.p(), &x);
            // Bracket bound: hom_norm <= r^{1/alpha} for r < 1.
            let delta = r.powf(1.0 / ctx.cert().alpha);
            let norm = ctx.hom_norm(&x);
            assert!(norm <= delta * (1.0 + 1e-9), "eps {eps}: {norm:.3e} > {delta:.3e}");
        }
    }

    #[test]
    fn unit_ball_consistency() {
        let ctx = random_context(4, 13);
        let mut rng = rand::rngs::StdRng::seed_from_u64(14);
        for _ in 0..10_000 {
            let x = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            let hom = ctx.hom_norm(&x);
            // Skip points numerically on the boundary.
            if (hom - 1.0).abs() < 1e-9 {
                continue;
            }
            let inside_hom = hom <= 1.0;
            let inside_p = numerics::weighted_norm(ctx.p(), &x) <= 1.0;
            assert_eq!(inside_hom, inside_p);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(15);
        for trial in 0..100 {
            let ctx = random_context(4, 100 + (trial % 7) as u64);
            let x = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            if x.norm() < 0.1 {
                continue;
            }
            let grad = ctx.hom_norm_gradient(&x).unwrap();
            let h = 1e-6 * (1.0 + x.norm());
            let mut fd = DVector::zeros(4);
            for i in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                fd[i] = (ctx.hom_norm(&xp) - ctx.hom_norm(&xm)) / (2.0 * h);
            }
            let rel = (&grad - &fd).norm() / fd.norm();
            assert!(rel < 1e-5, "trial {trial}: gradient mismatch {rel:.3e}");
        }
    }

    #[test]
    fn gradient_euclidean_case() {
        let ctx = euclidean_context(4);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let grad = ctx.hom_norm_gradient(&x).unwrap();
        let expected = &x / x.norm();
        assert!((grad - expected).norm() < 1e-10);
    }

    #[test]
    fn gradient_euler_identity() {
        // Homogeneity of degree 1 along the dilation flow:
        // grad(x)^T (Gd x) = hom_norm(x).
        let ctx = random_context(4, 17);
        let mut rng = rand::rngs::StdRng::seed_from_u64(18);
        for _ in 0..50 {
            let x = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            if x.norm() < 0.1 {
                continue;
            }
            let grad = ctx.hom_norm_gradient(&x).unwrap();
            let lhs = grad.dot(&(&ctx.dilation().gd * &x));
            let rhs = ctx.hom_norm(&x);
            assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs(), "lhs {lhs:.10e} rhs {rhs:.10e}");
        }
    }

    #[test]
    fn gradient_rejects_origin() {
        let ctx = random_context(3, 19);
        assert!(matches!(
            ctx.hom_norm_gradient(&DVector::zeros(3)),
            Err(HomNormError::DegenerateInput { .. })
        ));
    }

    #[test]
    fn projection_lands_on_unit_sphere() {
        let ctx = random_context(4, 21);
        let mut rng = rand::rngs::StdRng::seed_from_u64(22);
        for _ in 0..100 {
            let x = DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
            if x.norm() < 0.05 {
                continue;
            }
            let pi = ctx.hom_project(&x).unwrap();
            assert!((numerics::weighted_norm(ctx.p(), &pi) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_fixes_unit_sphere_points() {
        let ctx = random_context(4, 23);
        let raw = DVector::from_vec(vec![0.4, 0.8, -0.3, 0.2]);
        let x = &raw / numerics::weighted_norm(ctx.p(), &raw);
        let pi = ctx.hom_project(&x).unwrap();
        assert!((pi - &x).norm() < 1e-9);
    }

    #[test]
    fn projection_euclidean_case() {
        let ctx = euclidean_context(3);
        let x = DVector::from_vec(vec![3.0, 4.0, 0.0]);
        let pi = ctx.hom_project(&x).unwrap();
        assert!((pi - &x / 5.0).norm() < 1e-10);
    }

    #[test]
    fn fallback_path_matches_fast_path() {
        // A defective generator (Jordan block shifted to be anti-Hurwitz)
        // must fall back to the exponential and still satisfy the scaling law.
        let gd = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let d = Dilation::new(gd.clone(), -0.5, None).unwrap();
        let p = lyapunov_weight(&gd, &DMatrix::identity(2, 2));
        let cert = certify_monotone(&d, &p).unwrap();
        let ctx = HomNormContext::new(d, cert);
        let x = DVector::from_vec(vec![0.7, -1.3]);
        let lhs = ctx.hom_norm(&ctx.dmap_apply(0.8, &x));
        let rhs = 0.8f64.exp() * ctx.hom_norm(&x);
        assert!((lhs - rhs).abs() < 1e-9 * rhs);
    }
}
