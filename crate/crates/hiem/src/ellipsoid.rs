//! Invariant/attractive ellipsoid synthesis and verification: the block
//! invariance inequality and its scalar-parameter family, trace-minimal
//! linear and homogeneous designs, the linear-to-homogeneous upgrade, the
//! fixed-gain refit, the bounded-control block, admissible-degree ranges
//! for the disturbance channel, and the boundary-derivative oracle used to
//! cross-check every emitted certificate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use thiserror::Error;

use crate::controller::{ControllerError, HomogeneousController, DEFAULT_NORM_FLOOR};
use crate::dilation::Dilation;
use crate::numerics::{self, NumericsError};
use crate::plant::LinearPlant;
use crate::sdp::{
    beta_search, MatExpr, SdpError, SdpProblem, SolveOptions, VarId, DEFAULT_BETA_BUDGET,
    DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_REFINE_STEPS,
};
use crate::synthesis::{make_dilation, GeneratorSolution, SynthesisError};

#[derive(Debug, Clone, Error)]
pub enum EllipsoidError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("no disturbance generator: the system G0 D = D G0w has residual {residual:.3e}")]
    NoG0Omega { residual: f64 },
    #[error("degree {mu} is not admissible: {range}")]
    MuNotAdmissible { mu: f64, range: String },
    #[error("upgrade infeasible: min eigenvalue of Gd X + X Gd^T is {min_eig:.3e}")]
    UpgradeInfeasible { min_eig: f64 },
    #[error("fixed-gain refit infeasible down to decay {rho_floor:.3e}: {message}")]
    RefitInfeasible { rho_floor: f64, message: String },
    #[error("scalar family infeasible; tried {0:?}")]
    InfeasibleFamily(Vec<f64>),
    #[error("certificate failed post-hoc verification: worst margin {worst:.3e}")]
    CertificateVerification { worst: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("conic backend: {0}")]
    Backend(String),
}

impl From<SdpError> for EllipsoidError {
    fn from(e: SdpError) -> Self {
        match e {
            SdpError::InfeasibleFamily(tried) => EllipsoidError::InfeasibleFamily(tried),
            other => EllipsoidError::Backend(other.to_string()),
        }
    }
}

/// Disturbance geometry: bound shape `Q`, input matrix `D` and, when they
/// exist, the induced generators on the disturbance channel.
#[derive(Debug, Clone)]
pub struct DisturbanceShape {
    pub q: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub g0w: Option<DMatrix<f64>>,
    pub gdw: Option<DMatrix<f64>>,
}

impl DisturbanceShape {
    pub fn new(q: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self, EllipsoidError> {
        let p = d.ncols();
        if q.nrows() != p || q.ncols() != p {
            return Err(EllipsoidError::Precondition(format!(
                "Q must be {p}x{p} to match D, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        let q = numerics::symmetrize(&q);
        let min_eig = numerics::min_eig_sym(&q);
        if min_eig <= 0.0 {
            return Err(EllipsoidError::Precondition(format!(
                "Q must be positive definite (min eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self {
            q,
            d,
            g0w: None,
            gdw: None,
        })
    }

    /// Solves for the disturbance generator and records both `G0w` and the
    /// dilation generator `I + mu (I + G0w)` for the chosen degree.
    pub fn with_generators(
        mut self,
        gs: &GeneratorSolution,
        mu: f64,
    ) -> Result<Self, EllipsoidError> {
        let g0w = solve_g0_omega(gs, &self.d)?;
        self.gdw = Some(dw_generator(&g0w, mu));
        self.g0w = Some(g0w);
        Ok(self)
    }
}

/// Disturbance-channel dilation generator `I + mu (I + G0w)`.
pub fn dw_generator(g0w: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    let p = g0w.nrows();
    let eye = DMatrix::<f64>::identity(p, p);
    &eye + (&eye + g0w) * mu
}

/// Solves `G0 D = D G0w` for the disturbance generator by minimum-norm
/// least squares. This solvability is the one structural restriction the
/// homogeneous method puts on `D`.
pub fn solve_g0_omega(
    gs: &GeneratorSolution,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>, EllipsoidError> {
    if d.norm() == 0.0 {
        return Err(EllipsoidError::Precondition(
            "disturbance matrix D must be nonzero".into(),
        ));
    }
    if d.nrows() != gs.n() {
        return Err(EllipsoidError::Precondition(format!(
            "D has {} rows, plant has {} states",
            d.nrows(),
            gs.n()
        )));
    }
    let p = d.ncols();
    let eye_p = DMatrix::<f64>::identity(p, p);
    // vec(D G0w) = (I_p (x) D) vec(G0w) must equal vec(G0 D).
    let sys = eye_p.kronecker(d);
    let target = &gs.g0 * d;
    let rhs = DVector::from_fn(gs.n() * p, |k, _| target[(k % gs.n(), k / gs.n())]);
    let sol = numerics::lstsq(&sys, &rhs);
    let g0w = DMatrix::from_fn(p, p, |i, j| sol.solution[j * p + i]);
    let residual = (&gs.g0 * d - d * &g0w).norm();
    if residual > 1e-8 * (1.0 + d.norm()) {
        return Err(EllipsoidError::NoG0Omega { residual });
    }
    Ok(g0w)
}

/// Possibly half-open interval of admissible degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuInterval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl MuInterval {
    fn all() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            lo_closed: false,
            hi_closed: false,
        }
    }

    fn clip_lo(&mut self, lo: f64, closed: bool) {
        if lo > self.lo || (lo == self.lo && self.lo_closed && !closed) {
            self.lo = lo;
            self.lo_closed = closed;
        }
    }

    fn clip_hi(&mut self, hi: f64, closed: bool) {
        if hi < self.hi || (hi == self.hi && self.hi_closed && !closed) {
            self.hi = hi;
            self.hi_closed = closed;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    pub fn contains(&self, mu: f64) -> bool {
        let above = if self.lo_closed { mu >= self.lo } else { mu > self.lo };
        let below = if self.hi_closed { mu <= self.hi } else { mu < self.hi };
        above && below
    }
}

impl std::fmt::Display for MuInterval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}{}, {}{}",
            if self.lo_closed { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

/// Clips an interval by the strict constraints `1 + mu (1 + r_i) > 0`.
fn clip_by_rates(interval: &mut MuInterval, rates: impl Iterator<Item = f64>) {
    for r in rates {
        let c = 1.0 + r;
        if c.abs() <= 1e-14 {
            continue;
        }
        let bound = -1.0 / c;
        if c > 0.0 {
            interval.clip_lo(bound, false);
        } else {
            interval.clip_hi(bound, false);
        }
    }
}

/// Degrees for which the closed loop with disturbance stays homogeneous
/// (the disturbance dilation is anti-Hurwitz), intersected with the design
/// range `[-1, 1/ctrl_index]`.
pub fn mu_range_invariance(gs: &GeneratorSolution, g0w: &DMatrix<f64>) -> MuInterval {
    let mut interval = MuInterval {
        lo: -1.0,
        hi: 1.0 / gs.ctrl_index as f64,
        lo_closed: true,
        hi_closed: true,
    };
    clip_by_rates(
        &mut interval,
        g0w.complex_eigenvalues().iter().map(|c| c.re),
    );
    interval
}

/// Degrees for which the disturbance dilation is strictly monotone in the
/// `Q`-weighted norm (attractiveness). Not intersected with the design
/// range; callers combine it with [`mu_range_invariance`].
pub fn mu_range_attractiveness(
    g0w: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<MuInterval, EllipsoidError> {
    let (q_sqrt, q_inv_sqrt) = numerics::spd_sqrt(q)?;
    let balanced = &q_sqrt * g0w * &q_inv_sqrt;
    let sym = &balanced + balanced.transpose();
    let eig = numerics::sym_eig(&sym)?;
    let mut interval = MuInterval::all();
    clip_by_rates(&mut interval, eig.values.iter().map(|lam| lam / 2.0));
    Ok(interval)
}

/// Smallest eigenvalue of `Q Gdw + Gdw^T Q`; positive means the invariant
/// ellipsoid is also attractive.
pub fn attractiveness_condition(q: &DMatrix<f64>, gdw: &DMatrix<f64>) -> f64 {
    let m = q * gdw;
    numerics::min_eig_sym(&(&m + m.transpose()))
}

/// Eigenvalue slack of each inequality of a certificate family; positive
/// values mean the inequality holds with that margin.
#[derive(Debug, Clone, Copy)]
pub struct InvarianceMargins {
    /// Smallest eigenvalue of the negated invariance block.
    pub w_block: f64,
    /// Smallest eigenvalue of `X`.
    pub x_pd: f64,
    /// Smallest eigenvalue of `Gd X + X Gd^T` (homogeneous families only).
    pub gd_mono: Option<f64>,
    /// Smallest eigenvalue of the bounded-control block (when a bound was
    /// requested).
    pub control_bound: Option<f64>,
}

impl InvarianceMargins {
    pub fn worst(&self) -> f64 {
        let mut w = self.w_block.min(self.x_pd);
        if let Some(g) = self.gd_mono {
            w = w.min(g);
        }
        if let Some(c) = self.control_bound {
            w = w.min(c);
        }
        w
    }
}

/// Assembles the invariance block
/// `[[A0 X + X A0^T + B Y + Y^T B^T + beta X, D], [D^T, -beta Q]]`
/// and reports the eigenvalue margins of `(-block, X, Gd X + X Gd^T)`.
/// Margins may be negative; the caller decides what to do with them.
pub fn lmi_invariance(
    plant: &LinearPlant,
    a0: &DMatrix<f64>,
    dil: Option<&Dilation>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: f64,
) -> InvarianceMargins {
    let n = plant.n();
    let p = plant.p();
    let mut w = DMatrix::<f64>::zeros(n + p, n + p);
    let top = a0 * x
        + x * a0.transpose()
        + &plant.b * y
        + y.transpose() * plant.b.transpose()
        + x * beta;
    w.view_mut((0, 0), (n, n)).copy_from(&top);
    w.view_mut((0, n), (n, p)).copy_from(&plant.d);
    w.view_mut((n, 0), (p, n)).copy_from(&plant.d.transpose());
    w.view_mut((n, n), (p, p)).copy_from(&(-&plant.q * beta));
    let w_block = numerics::min_eig_sym(&(-w));
    let x_pd = numerics::min_eig_sym(x);
    let gd_mono = dil.map(|d| {
        let m = &d.gd * x + x * d.gd.transpose();
        numerics::min_eig_sym(&m)
    });
    InvarianceMargins {
        w_block,
        x_pd,
        gd_mono,
        control_bound: None,
    }
}

/// Margin of the bounded-control block `[[X, Y^T], [Y, u_bar^2 I]]`.
pub fn control_bound_margin(x: &DMatrix<f64>, y: &DMatrix<f64>, u_bar: f64) -> f64 {
    let n = x.nrows();
    let m = y.nrows();
    let mut blk = DMatrix::<f64>::zeros(n + m, n + m);
    blk.view_mut((0, 0), (n, n)).copy_from(x);
    blk.view_mut((0, n), (n, m)).copy_from(&y.transpose());
    blk.view_mut((n, 0), (m, n)).copy_from(y);
    blk.view_mut((n, n), (m, m))
        .copy_from(&(DMatrix::<f64>::identity(m, m) * u_bar * u_bar));
    numerics::min_eig_sym(&blk)
}

/// Emits the bounded-control block `[[X, Y^T], [Y, u_bar^2 I]] >= 0` for
/// inclusion in a trace-minimization problem. Downstream, a degree -1
/// controller with zero cancelling gain then satisfies `u^T u <= u_bar^2`
/// everywhere.
pub fn bounded_control_constraint(
    problem: &SdpProblem,
    x: VarId,
    y: VarId,
    n: usize,
    m: usize,
    u_bar: f64,
) -> MatExpr {
    let mut e = problem.expr(n + m);
    e.add_var(problem, x, 1.0, 0, 0);
    let id_m = DMatrix::<f64>::identity(m, m);
    let id_n = DMatrix::<f64>::identity(n, n);
    e.add_product(problem, &id_n, y, true, &id_m, 1.0, 0, n);
    e.add_product(problem, &id_m, y, false, &id_n, 1.0, n, 0);
    e.add_const(&(DMatrix::<f64>::identity(m, m) * u_bar * u_bar), n, n);
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertFamily {
    Linear,
    Homogeneous,
    BoundedControl,
}

impl CertFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            CertFamily::Linear => "linear",
            CertFamily::Homogeneous => "homogeneous",
            CertFamily::BoundedControl => "bounded-control",
        }
    }
}

/// Solution tuple of one of the invariance families together with its
/// recomputable margins.
#[derive(Debug, Clone)]
pub struct EllipsoidCertificate {
    pub family: CertFamily,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub beta: f64,
    pub mu: f64,
    pub margins: InvarianceMargins,
    pub u_bar: Option<f64>,
    /// Decay weight used by the fixed-gain refit (requested, effective).
    pub rho_requested: Option<f64>,
    pub rho_effective: Option<f64>,
}

impl EllipsoidCertificate {
    /// Feedback gain `K = Y X^{-1}`.
    pub fn gain(&self) -> Result<DMatrix<f64>, EllipsoidError> {
        let x_inv = self.x.clone().try_inverse().ok_or_else(|| {
            EllipsoidError::Precondition("certificate shape X is singular".into())
        })?;
        Ok(&self.y * x_inv)
    }

    /// Ellipsoid weight `P = X^{-1}`.
    pub fn shape_weight(&self) -> Result<DMatrix<f64>, EllipsoidError> {
        let x_inv = self.x.clone().try_inverse().ok_or_else(|| {
            EllipsoidError::Precondition("certificate shape X is singular".into())
        })?;
        Ok(numerics::symmetrize(&x_inv))
    }
}

/// Default weight of the gain-magnitude tie-breaker `tr(X) + w ||Y||_F^2`,
/// which keeps the barrier subproblems bounded along objective-neutral
/// gain directions and picks the smallest-norm gain on the optimal face.
pub const DEFAULT_GAIN_WEIGHT: f64 = 1e-6;

/// Default relative flatness floor `X >= floor * (tr X / n) I`.
///
/// The pure trace minimum flattens the ellipsoid along directions where
/// ever-larger gains reject the disturbance ever better; at that corner
/// `X^{-1}` (and with it the feedback gain) blows up and the inequality
/// can no longer be certified in floating point. The floor is scale-free
/// (both sides are homogeneous of degree one in `X`) and caps the
/// condition number of the ellipsoid at `n / floor`.
pub const DEFAULT_SHAPE_FLOOR: f64 = 1e-3;

/// Knobs of the trace-minimization solves.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub beta_min: f64,
    pub beta_max: f64,
    pub budget: usize,
    pub refine_steps: usize,
    /// Include the bounded-control block at this bound.
    pub u_bar: Option<f64>,
    /// Relative gain box `|Y_ij| <= cap * X_jj`.
    pub gain_cap: Option<f64>,
    /// Weight of the `||Y||_F^2` term in the objective.
    pub gain_weight: f64,
    /// Relative flatness floor `X >= floor * (tr X / n) I`; zero disables.
    pub shape_floor: f64,
    pub solver: SolveOptions,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            budget: DEFAULT_BETA_BUDGET,
            refine_steps: DEFAULT_REFINE_STEPS,
            u_bar: None,
            gain_cap: None,
            gain_weight: DEFAULT_GAIN_WEIGHT,
            shape_floor: DEFAULT_SHAPE_FLOOR,
            solver: SolveOptions::default(),
        }
    }
}

/// Builds one member of the invariance family at a fixed `beta`.
///
/// With `k_fixed` present the gain variable is substituted by `Y = K X`
/// (the problem stays linear in `X`), and `rho` adds the decay term
/// `rho (Gd X + X Gd^T)` inside the negated block.
fn family_member(
    plant: &LinearPlant,
    a0: &DMatrix<f64>,
    dil: Option<&Dilation>,
    k_fixed: Option<&DMatrix<f64>>,
    rho: f64,
    opts: &SynthOptions,
    beta: f64,
) -> SdpProblem {
    let n = plant.n();
    let m = plant.m();
    let p = plant.p();
    let eye_n = DMatrix::<f64>::identity(n, n);

    let mut prob = SdpProblem::new();
    let x = prob.add_sym(n);
    let y = if k_fixed.is_none() {
        Some(prob.add_rect(m, n))
    } else {
        None
    };
    let y_bound = if k_fixed.is_none() {
        Some(prob.add_sym(1))
    } else {
        None
    };

    // Negated invariance block.
    let mut neg_w = prob.expr(n + p);
    neg_w.add_product(&prob, a0, x, false, &eye_n, -1.0, 0, 0);
    neg_w.add_product(&prob, &eye_n, x, false, &a0.transpose(), -1.0, 0, 0);
    neg_w.add_var(&prob, x, -beta, 0, 0);
    match (k_fixed, y) {
        (Some(k), _) => {
            let bk = &plant.b * k;
            neg_w.add_product(&prob, &bk, x, false, &eye_n, -1.0, 0, 0);
            neg_w.add_product(&prob, &eye_n, x, false, &bk.transpose(), -1.0, 0, 0);
        }
        (None, Some(yv)) => {
            neg_w.add_product(&prob, &plant.b, yv, false, &eye_n, -1.0, 0, 0);
            neg_w.add_product(&prob, &eye_n, yv, true, &plant.b.transpose(), -1.0, 0, 0);
        }
        (None, None) => unreachable!(),
    }
    if rho != 0.0 {
        let d = dil.expect("a decay term needs a dilation");
        neg_w.add_product(&prob, &d.gd, x, false, &eye_n, -rho, 0, 0);
        neg_w.add_product(&prob, &eye_n, x, false, &d.gd.transpose(), -rho, 0, 0);
    }
    neg_w.add_const(&(-&plant.d), 0, n);
    neg_w.add_const(&(-plant.d.transpose()), n, 0);
    neg_w.add_const(&(&plant.q * beta), n, n);
    prob.add_psd(neg_w);

    // X in the positive cone, with the relative flatness floor when
    // enabled: X - floor * (tr X / n) I >= 0.
    let mut x_cone = prob.expr(n);
    x_cone.add_var(&prob, x, 1.0, 0, 0);
    if opts.shape_floor > 0.0 {
        x_cone.add_trace_times_identity(&prob, x, -opts.shape_floor / n as f64);
    }
    prob.add_psd(x_cone);

    // Monotonicity cone for homogeneous designs, with a small relative
    // margin so the returned weight certifies strict monotonicity instead
    // of landing exactly on the cone boundary.
    if let Some(d) = dil {
        const MONO_FLOOR: f64 = 1e-5;
        let mut mono = prob.expr(n);
        mono.add_product(&prob, &d.gd, x, false, &eye_n, 1.0, 0, 0);
        mono.add_product(&prob, &eye_n, x, false, &d.gd.transpose(), 1.0, 0, 0);
        mono.add_trace_times_identity(&prob, x, -MONO_FLOOR / n as f64);
        prob.add_psd(mono);
    }

    if let (Some(u_bar), Some(yv)) = (opts.u_bar, y) {
        prob.add_psd(bounded_control_constraint(&prob, x, yv, n, m, u_bar));
    }
    if let (Some(cap), Some(yv)) = (opts.gain_cap, y) {
        // Entrywise gain box relative to the shape diagonal:
        // |Y_ij| <= cap * X_jj, a linear restriction that caps the gain
        // without breaking the family's scale structure.
        for i in 0..m {
            for j in 0..n {
                let mut sel_r = DMatrix::<f64>::zeros(1, m);
                sel_r[(0, i)] = 1.0;
                let mut sel_c = DMatrix::<f64>::zeros(n, 1);
                sel_c[(j, 0)] = 1.0;
                let mut sel_xj = DMatrix::<f64>::zeros(1, n);
                sel_xj[(0, j)] = 1.0;
                for sign in [-1.0, 1.0] {
                    let mut cone = prob.expr(1);
                    cone.add_product(&prob, &sel_r, yv, false, &sel_c, sign, 0, 0);
                    cone.add_product(&prob, &sel_xj, x, false, &sel_xj.transpose(), cap, 0, 0);
                    prob.add_psd(cone);
                }
            }
        }
    }
    if let (Some(yv), Some(tau)) = (y, y_bound) {
        // Arrow block [[tau, vec(Y)^T], [vec(Y), I]] >= 0, i.e.
        // tau >= ||Y||_F^2, with a small objective weight on tau.
        let mn = m * n;
        let mut arrow = prob.expr(1 + mn);
        arrow.add_var(&prob, tau, 1.0, 0, 0);
        arrow.add_const(&DMatrix::<f64>::identity(mn, mn), 1, 1);
        for i in 0..m {
            for j in 0..n {
                let idx = i * n + j;
                let mut sel_r = DMatrix::<f64>::zeros(1, m);
                sel_r[(0, i)] = 1.0;
                let mut sel_c = DMatrix::<f64>::zeros(n, 1);
                sel_c[(j, 0)] = 1.0;
                arrow.add_product(&prob, &sel_r, yv, false, &sel_c, 1.0, 0, 1 + idx);
                arrow.add_product(&prob, &sel_r, yv, false, &sel_c, 1.0, 1 + idx, 0);
            }
        }
        prob.add_psd(arrow);
        prob.add_objective_trace(tau, opts.gain_weight.max(1e-12));
    }

    prob.add_objective_trace(x, 1.0);
    prob
}

fn finish_certificate(
    plant: &LinearPlant,
    gs: &GeneratorSolution,
    dil: Option<&Dilation>,
    family: CertFamily,
    beta: f64,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    opts: &SynthOptions,
    rho: Option<(f64, f64)>,
) -> Result<EllipsoidCertificate, EllipsoidError> {
    let x = numerics::symmetrize(&x);
    let mut margins = lmi_invariance(plant, &gs.a0, dil, &x, &y, beta);
    if let Some(u_bar) = opts.u_bar {
        margins.control_bound = Some(control_bound_margin(&x, &y, u_bar));
    }
    // Margins are meaningful only relative to the size of the terms they
    // came from, gain included.
    let scale = 1.0 + x.norm().max(plant.q.norm()).max(y.norm());
    if margins.worst() < -1e-7 * scale {
        return Err(EllipsoidError::CertificateVerification {
            worst: margins.worst(),
        });
    }
    Ok(EllipsoidCertificate {
        family,
        x,
        y,
        beta,
        mu: dil.map_or(0.0, |d| d.mu),
        margins,
        u_bar: opts.u_bar,
        rho_requested: rho.map(|r| r.0),
        rho_effective: rho.map(|r| r.1),
    })
}

/// Trace-minimal linear design: scalar search over the family
/// `A0 X + X A0^T + beta X + B Y + Y^T B^T + (1/beta) D Q^{-1} D^T <= 0`
/// posed in its equivalent block form.
pub fn min_trace_linear(
    plant: &LinearPlant,
    gs: &GeneratorSolution,
    opts: &SynthOptions,
) -> Result<EllipsoidCertificate, EllipsoidError> {
    let family = |beta: f64| family_member(plant, &gs.a0, None, None, 0.0, opts, beta);
    let (beta, sol) = beta_search(
        family,
        (opts.beta_min, opts.beta_max),
        opts.budget,
        opts.refine_steps,
        &opts.solver,
    )?;
    let cert_family = if opts.u_bar.is_some() {
        CertFamily::BoundedControl
    } else {
        CertFamily::Linear
    };
    finish_certificate(
        plant,
        gs,
        None,
        cert_family,
        beta,
        sol.values[0].clone(),
        sol.values[1].clone(),
        opts,
        None,
    )
}

/// Trace-minimal homogeneous design at the dilation's degree. For nonzero
/// degree the disturbance generator must exist and the degree must lie in
/// the admissible invariance range.
pub fn min_trace_homogeneous(
    plant: &LinearPlant,
    gs: &GeneratorSolution,
    dil: &Dilation,
    shape: &DisturbanceShape,
    opts: &SynthOptions,
) -> Result<EllipsoidCertificate, EllipsoidError> {
    if dil.mu != 0.0 {
        let g0w = shape.g0w.as_ref().ok_or_else(|| {
            EllipsoidError::Precondition(
                "homogeneous design at nonzero degree needs the disturbance generator".into(),
            )
        })?;
        let range = mu_range_invariance(gs, g0w);
        if !range.contains(dil.mu) {
            return Err(EllipsoidError::MuNotAdmissible {
                mu: dil.mu,
                range: range.to_string(),
            });
        }
    }
    let family = |beta: f64| family_member(plant, &gs.a0, Some(dil), None, 0.0, opts, beta);
    let (beta, sol) = beta_search(
        family,
        (opts.beta_min, opts.beta_max),
        opts.budget,
        opts.refine_steps,
        &opts.solver,
    )?;
    let cert_family = if opts.u_bar.is_some() {
        CertFamily::BoundedControl
    } else {
        CertFamily::Homogeneous
    };
    finish_certificate(
        plant,
        gs,
        Some(dil),
        cert_family,
        beta,
        sol.values[0].clone(),
        sol.values[1].clone(),
        opts,
        None,
    )
}

/// Relabels a linear optimum as a homogeneous certificate at degree `mu`
/// without changing `(X, Y, beta)`. Feasible exactly when
/// `Gd X + X Gd^T > 0` for `Gd = I + mu G0`.
pub fn upgrade_linear(
    plant: &LinearPlant,
    gs: &GeneratorSolution,
    cert: &EllipsoidCertificate,
    mu: f64,
) -> Result<EllipsoidCertificate, EllipsoidError> {
    let dil = make_dilation(gs, mu)?;
    let mono = &dil.gd * &cert.x + &cert.x * dil.gd.transpose();
    let min_eig = numerics::min_eig_sym(&mono);
    if min_eig <= 0.0 {
        return Err(EllipsoidError::UpgradeInfeasible { min_eig });
    }
    let mut margins = lmi_invariance(plant, &gs.a0, Some(&dil), &cert.x, &cert.y, cert.beta);
    margins.control_bound = cert.margins.control_bound;
    Ok(EllipsoidCertificate {
        family: CertFamily::Homogeneous,
        x: cert.x.clone(),
        y: cert.y.clone(),
        beta: cert.beta,
        mu,
        margins,
        u_bar: cert.u_bar,
        rho_requested: None,
        rho_effective: None,
    })
}

/// Re-fits the ellipsoid shape for a fixed gain `K` (gain variable
/// substituted by `Y = K X`), minimizing the trace under the invariance
/// block augmented with the decay term `rho (Gd X + X Gd^T)`.
///
/// A decay weight beyond what the fixed gain can deliver makes the family
/// infeasible, so the requested `rho` backs off geometrically until a
/// feasible member appears; both the requested and the effective value are
/// recorded on the certificate.
pub fn refit_x_fixed_k(
    plant: &LinearPlant,
    gs: &GeneratorSolution,
    dil: &Dilation,
    k: &DMatrix<f64>,
    rho: f64,
    opts: &SynthOptions,
) -> Result<EllipsoidCertificate, EllipsoidError> {
    if !(rho > 0.0) {
        return Err(EllipsoidError::Precondition(format!(
            "decay weight must be positive, got {rho}"
        )));
    }
    let mut rho_eff = rho;
    let rho_floor = rho * 1e-3;
    loop {
        let family =
            |beta: f64| family_member(plant, &gs.a0, Some(dil), Some(k), rho_eff, opts, beta);
        match beta_search(
            family,
            (opts.beta_min, opts.beta_max),
            opts.budget,
            opts.refine_steps,
            &opts.solver,
        ) {
            Ok((beta, sol)) => {
                let x = sol.values[0].clone();
                let y = k * &x;
                return finish_certificate(
                    plant,
                    gs,
                    Some(dil),
                    CertFamily::Homogeneous,
                    beta,
                    x,
                    y,
                    opts,
                    Some((rho, rho_eff)),
                );
            }
            Err(e) => {
                rho_eff *= 0.5;
                if rho_eff < rho_floor {
                    return Err(EllipsoidError::RefitInfeasible {
                        rho_floor,
                        message: EllipsoidError::from(e).to_string(),
                    });
                }
            }
        }
    }
}

/// Builds the homogeneous feedback recorded by a certificate:
/// `K = Y X^{-1}`, weight `P = X^{-1}` and dilation `I + mu G0`.
pub fn controller_from_certificate(
    gs: &GeneratorSolution,
    cert: &EllipsoidCertificate,
    norm_floor: Option<f64>,
) -> Result<HomogeneousController, EllipsoidError> {
    let dil = make_dilation(gs, cert.mu)?;
    let k = cert.gain()?;
    let p = cert.shape_weight()?;
    Ok(HomogeneousController::new(
        gs.k0.clone(),
        k,
        p,
        dil,
        cert.mu,
        norm_floor.unwrap_or(DEFAULT_NORM_FLOOR),
    )?)
}

/// Boundary-derivative oracle: for `||x||_P = 1` and an admissible `w`,
/// returns `x^T P f(x, w)` with `f` the closed-loop right-hand side. A
/// non-positive sign certifies the invariance flow at that boundary point.
pub fn boundary_derivative(
    ctrl: &HomogeneousController,
    plant: &LinearPlant,
    x: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64, EllipsoidError> {
    let p = ctrl.p();
    let norm = numerics::weighted_norm(p, x);
    if (norm - 1.0).abs() > 1e-8 {
        return Err(EllipsoidError::Precondition(format!(
            "x must lie on the unit P-sphere, ||x||_P = {norm}"
        )));
    }
    let wq = w.dot(&(&plant.q * w));
    if wq > 1.0 + 1e-9 {
        return Err(EllipsoidError::Precondition(format!(
            "disturbance is not admissible, w^T Q w = {wq}"
        )));
    }
    let f = &plant.a * x + &plant.b * ctrl.eval_u(x) + &plant.d * w;
    Ok(x.dot(&(p * f)))
}

/// Time derivative of the homogeneous norm along the closed loop at `x`
/// (well-defined away from the origin). Negative values certify decay.
pub fn hom_norm_time_derivative(
    ctrl: &HomogeneousController,
    plant: &LinearPlant,
    x: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64, EllipsoidError> {
    let grad = ctrl
        .ctx()
        .hom_norm_gradient(x)
        .map_err(|e| EllipsoidError::Precondition(e.to_string()))?;
    let f = &plant.a * x + &plant.b * ctrl.eval_u(x) + &plant.d * w;
    Ok(grad.dot(&f))
}

/// Uniform sample from the admissible disturbance ball
/// `{w : w^T Q w <= 1}`: `w = Q^{-1/2} v r^{1/p}` with `v` uniform on the
/// unit sphere and `r` uniform on `[0, 1]`.
pub fn sample_admissible(q_inv_sqrt: &DMatrix<f64>, rng: &mut impl Rng) -> DVector<f64> {
    let p = q_inv_sqrt.nrows();
    let v = sample_unit_sphere(p, rng);
    let r: f64 = rng.random_range(0.0..1.0);
    q_inv_sqrt * v * r.powf(1.0 / p as f64)
}

/// Uniform sample from the unit `P`-sphere: `x = P^{-1/2} v`.
pub fn sample_boundary(p_inv_sqrt: &DMatrix<f64>, rng: &mut impl Rng) -> DVector<f64> {
    let n = p_inv_sqrt.nrows();
    p_inv_sqrt * sample_unit_sphere(n, rng)
}

/// Uniform direction on the Euclidean unit sphere (Box-Muller Gaussians,
/// normalized).
pub fn sample_unit_sphere(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| {
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Monte-Carlo sweep of the boundary-derivative oracle.
#[derive(Debug, Clone)]
pub struct BoundarySweep {
    pub samples: usize,
    pub worst: f64,
    pub counterexample: Option<(DVector<f64>, DVector<f64>)>,
}

/// Samples admissible `(x, w)` pairs on the certificate boundary and
/// records the worst boundary derivative; `tol` is the accepted slack
/// above zero before a pair counts as a counterexample.
pub fn sweep_boundary_derivative(
    ctrl: &HomogeneousController,
    plant: &LinearPlant,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<BoundarySweep, EllipsoidError> {
    use rand::SeedableRng;
    let (_, p_inv_sqrt) = numerics::spd_sqrt(ctrl.p())?;
    let (_, q_inv_sqrt) = numerics::spd_sqrt(&plant.q)?;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut counterexample = None;
    for _ in 0..samples {
        let x = sample_boundary(&p_inv_sqrt, &mut rng);
        let w = sample_admissible(&q_inv_sqrt, &mut rng);
        let value = boundary_derivative(ctrl, plant, &x, &w)?;
        if value > worst {
            worst = value;
            if value > tol && counterexample.is_none() {
                counterexample = Some((x.clone(), w.clone()));
            }
        }
        if value > tol && counterexample.is_none() {
            counterexample = Some((x, w));
        }
    }
    Ok(BoundarySweep {
        samples,
        worst,
        counterexample,
    })
}
