//! Small dense semidefinite-programming backend.
//!
//! Problems are posed over symmetric and rectangular matrix variable
//! blocks with a linear objective, affine equality constraints and affine
//! semidefinite cone constraints. The solver eliminates equalities by an
//! orthogonal null-space parametrization and then follows the central path
//! of the log-det barrier with damped Newton steps (phase 1 minimizes a
//! uniform slack to find a strictly feasible point, phase 2 minimizes the
//! objective).
//!
//! Every solve is deterministic: identical input produces an identical
//! iterate sequence. Solutions are re-verified after extraction by
//! assembling each cone expression and checking its spectrum.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numerics;

pub const DEFAULT_BETA_MIN: f64 = 1e-3;
pub const DEFAULT_BETA_MAX: f64 = 1e3;
pub const DEFAULT_BETA_BUDGET: usize = 40;
pub const DEFAULT_REFINE_STEPS: usize = 25;

/// Accepted post-hoc cone violation for an `Optimal` status, relative to
/// the problem scale.
pub const VIOLATION_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Error)]
pub enum SdpError {
    #[error("malformed problem: {0}")]
    BadProblem(String),
    #[error("no feasible member in the scalar family; tried {0:?}")]
    InfeasibleFamily(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarBlock {
    Sym { dim: usize },
    Rect { rows: usize, cols: usize },
}

impl VarBlock {
    /// Number of scalar unknowns backing the block.
    pub fn len(&self) -> usize {
        match *self {
            VarBlock::Sym { dim } => dim * (dim + 1) / 2,
            VarBlock::Rect { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn shape(&self) -> (usize, usize) {
        match *self {
            VarBlock::Sym { dim } => (dim, dim),
            VarBlock::Rect { rows, cols } => (rows, cols),
        }
    }

    /// Entries of the basis matrix for the `k`-th scalar of this block.
    fn basis(&self, k: usize) -> Vec<(usize, usize, f64)> {
        match *self {
            VarBlock::Sym { dim } => {
                let (i, j) = sym_index(dim, k);
                if i == j {
                    vec![(i, i, 1.0)]
                } else {
                    vec![(i, j, 1.0), (j, i, 1.0)]
                }
            }
            VarBlock::Rect { cols, .. } => {
                let (i, j) = (k / cols, k % cols);
                vec![(i, j, 1.0)]
            }
        }
    }
}

/// Lower-triangle enumeration of a symmetric block: k -> (i, j), i >= j.
fn sym_index(dim: usize, k: usize) -> (usize, usize) {
    let mut k = k;
    for j in 0..dim {
        let col_len = dim - j;
        if k < col_len {
            return (j + k, j);
        }
        k -= col_len;
    }
    unreachable!("scalar index out of range");
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// Affine symmetric-matrix expression over the problem's stacked scalar
/// variables. Build all variables before creating expressions.
#[derive(Debug, Clone)]
pub struct MatExpr {
    dim: usize,
    constant: DMatrix<f64>,
    coeffs: Vec<DMatrix<f64>>,
}

impl MatExpr {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds a constant block at offset `(r0, c0)`.
    pub fn add_const(&mut self, m: &DMatrix<f64>, r0: usize, c0: usize) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.constant[(r0 + i, c0 + j)] += m[(i, j)];
            }
        }
    }

    /// Adds `w * L V R` (or `w * L V^T R`) at offset `(r0, c0)` where `V`
    /// is the matrix variable `v`.
    #[allow(clippy::too_many_arguments)]
    pub fn add_product(
        &mut self,
        p: &SdpProblem,
        l: &DMatrix<f64>,
        v: VarId,
        transpose_var: bool,
        r: &DMatrix<f64>,
        w: f64,
        r0: usize,
        c0: usize,
    ) {
        let block = p.blocks[v.0];
        let offset = p.offsets[v.0];
        let (vr, vc) = block.shape();
        let (er, ec) = if transpose_var { (vc, vr) } else { (vr, vc) };
        assert_eq!(l.ncols(), er, "left factor width must match the variable");
        assert_eq!(r.nrows(), ec, "right factor height must match the variable");
        for k in 0..block.len() {
            let target = &mut self.coeffs[offset + k];
            for &(bi, bj, bw) in &block.basis(k) {
                let (ei, ej) = if transpose_var { (bj, bi) } else { (bi, bj) };
                for li in 0..l.nrows() {
                    let lv = l[(li, ei)];
                    if lv == 0.0 {
                        continue;
                    }
                    for rj in 0..r.ncols() {
                        target[(r0 + li, c0 + rj)] += w * bw * lv * r[(ej, rj)];
                    }
                }
            }
        }
    }

    /// Adds `w * V` at offset (identity factors on both sides).
    pub fn add_var(&mut self, p: &SdpProblem, v: VarId, w: f64, r0: usize, c0: usize) {
        let block = p.blocks[v.0];
        let offset = p.offsets[v.0];
        for k in 0..block.len() {
            let target = &mut self.coeffs[offset + k];
            for &(bi, bj, bw) in &block.basis(k) {
                target[(r0 + bi, c0 + bj)] += w * bw;
            }
        }
    }

    /// Adds `w * tr(V) * I` over the whole expression (square V).
    pub fn add_trace_times_identity(&mut self, p: &SdpProblem, v: VarId, w: f64) {
        let block = p.blocks[v.0];
        let offset = p.offsets[v.0];
        let dim = self.dim;
        for k in 0..block.len() {
            for &(bi, bj, bw) in &block.basis(k) {
                if bi == bj {
                    let target = &mut self.coeffs[offset + k];
                    for i in 0..dim {
                        target[(i, i)] += w * bw;
                    }
                }
            }
        }
    }

    /// Value of the expression at a stacked solution vector.
    fn evaluate(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, c) in self.coeffs.iter().enumerate() {
            if x[k] != 0.0 {
                out += c * x[k];
            }
        }
        out
    }

    fn symmetrized(mut self) -> Self {
        self.constant = numerics::symmetrize(&self.constant);
        for c in &mut self.coeffs {
            *c = numerics::symmetrize(c);
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// One value matrix per declared variable block.
    pub values: Vec<DMatrix<f64>>,
    pub objective: f64,
    /// Largest post-hoc negative eigenvalue across all cones (0 when all
    /// cones verify as positive semidefinite).
    pub worst_violation: f64,
    /// Scale the violation threshold was measured against.
    pub scale: f64,
    pub newton_iters: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Relative duality-gap target of the barrier path.
    pub gap_tol: f64,
    pub max_outer: usize,
    pub max_newton: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            max_outer: 48,
            max_newton: 120,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    blocks: Vec<VarBlock>,
    offsets: Vec<usize>,
    total: usize,
    objective: Vec<f64>,
    equalities: Vec<(Vec<f64>, f64)>,
    cones: Vec<MatExpr>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_sym(&mut self, dim: usize) -> VarId {
        self.add_block(VarBlock::Sym { dim })
    }

    pub fn add_rect(&mut self, rows: usize, cols: usize) -> VarId {
        self.add_block(VarBlock::Rect { rows, cols })
    }

    fn add_block(&mut self, b: VarBlock) -> VarId {
        assert!(
            self.cones.is_empty() && self.equalities.is_empty(),
            "declare all variables before constraints"
        );
        let id = VarId(self.blocks.len());
        self.offsets.push(self.total);
        self.total += b.len();
        self.blocks.push(b);
        self.objective.resize(self.total, 0.0);
        id
    }

    pub fn num_scalars(&self) -> usize {
        self.total
    }

    /// Fresh zero expression of the given matrix dimension.
    pub fn expr(&self, dim: usize) -> MatExpr {
        MatExpr {
            dim,
            constant: DMatrix::zeros(dim, dim),
            coeffs: vec![DMatrix::zeros(dim, dim); self.total],
        }
    }

    /// Constrains the (symmetrized) expression to the positive semidefinite
    /// cone.
    pub fn add_psd(&mut self, e: MatExpr) {
        self.cones.push(e.symmetrized());
    }

    /// Adds `weight * tr(V)` to the objective (minimized).
    pub fn add_objective_trace(&mut self, v: VarId, weight: f64) {
        let block = self.blocks[v.0];
        let offset = self.offsets[v.0];
        let (rows, cols) = block.shape();
        assert_eq!(rows, cols, "trace objective needs a square block");
        for k in 0..block.len() {
            for &(i, j, w) in &block.basis(k) {
                if i == j {
                    self.objective[offset + k] += weight * w;
                }
            }
        }
    }

    /// Equality `tr(V) = rhs`.
    pub fn add_equality_trace(&mut self, v: VarId, rhs: f64) {
        let block = self.blocks[v.0];
        let offset = self.offsets[v.0];
        let mut row = vec![0.0; self.total];
        for k in 0..block.len() {
            for &(i, j, w) in &block.basis(k) {
                if i == j {
                    row[offset + k] += w;
                }
            }
        }
        self.equalities.push((row, rhs));
    }

    /// Constrains every entry of the (symmetric) expression to zero; one
    /// scalar equality per upper-triangle entry.
    pub fn add_equality_expr_zero(&mut self, e: &MatExpr) {
        let e = e.clone().symmetrized();
        for i in 0..e.dim {
            for j in i..e.dim {
                let row: Vec<f64> = e.coeffs.iter().map(|c| c[(i, j)]).collect();
                self.equalities.push((row, -e.constant[(i, j)]));
            }
        }
    }

    /// Reconstructs per-block matrices from a stacked scalar vector.
    fn unstack(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .zip(&self.offsets)
            .map(|(b, &off)| {
                let (rows, cols) = b.shape();
                let mut m = DMatrix::zeros(rows, cols);
                for k in 0..b.len() {
                    for &(i, j, w) in &b.basis(k) {
                        m[(i, j)] = w * x[off + k];
                    }
                }
                m
            })
            .collect()
    }

    fn cone_scale(&self) -> f64 {
        1.0 + self
            .cones
            .iter()
            .map(|c| c.constant.amax())
            .fold(0.0, f64::max)
    }

    pub fn solve(&self, opts: &SolveOptions) -> Result<SdpSolution, SdpError> {
        if self.cones.is_empty() {
            return Err(SdpError::BadProblem("no cone constraints".into()));
        }
        for c in &self.cones {
            if c.coeffs.len() != self.total {
                return Err(SdpError::BadProblem(
                    "expression built before all variables were declared".into(),
                ));
            }
        }
        let scale = self.cone_scale();

        // Equality elimination: x = x_p + Z z with Z an orthonormal basis of
        // the null space.
        let (x_p, z_basis) = match self.reduce_equalities() {
            Ok(pair) => pair,
            Err(msg) => {
                return Ok(self.finish(
                    SdpStatus::Infeasible,
                    &DVector::zeros(self.total),
                    scale,
                    0,
                    msg,
                ))
            }
        };
        let nz = z_basis.ncols();

        // Reduced cones and objective.
        let cones: Vec<ReducedCone> = self
            .cones
            .iter()
            .map(|c| ReducedCone::build(c, &x_p, &z_basis))
            .collect();
        let c_full = DVector::from_vec(self.objective.clone());
        let c_red = z_basis.transpose() * &c_full;
        let obj_offset = c_full.dot(&x_p);

        if nz == 0 {
            // Fully determined by the equalities; just verify the cones.
            return Ok(self.finish(SdpStatus::Optimal, &x_p, scale, 0, String::new()));
        }

        let mut iters = 0usize;

        // Phase 1: minimize a uniform slack s with cones F_i(z) + s I >= 0.
        let z0 = DVector::zeros(nz);
        let worst = cones
            .iter()
            .map(|c| -numerics::min_eig_sym(&c.at(&z0)))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut phase1 = PhasePoint {
            z: z0.clone(),
            s: worst + 1.0 + 0.1 * scale,
        };
        let feas_exit = -1e-6 * scale;
        let m_total: f64 = cones.iter().map(|c| c.dim as f64).sum::<f64>() + 1.0;
        let mut t = 1.0;
        let mut decided = None;
        for _ in 0..opts.max_outer {
            let pass = center_phase1(&cones, &mut phase1, t, feas_exit, opts);
            iters += pass.iters;
            let gap = m_total / t;
            if std::env::var_os("HIEM_SDP_DEBUG").is_some() {
                eprintln!(
                    "phase1: t={t:.1e} s={:.6e} |z|={:.3e} iters={} stalled={}",
                    phase1.s,
                    phase1.z.norm(),
                    pass.iters,
                    pass.stalled
                );
            }
            // A strictly negative slack is itself the feasibility proof.
            if phase1.s < feas_exit {
                decided = Some(true);
                break;
            }
            // Certified positive minimum: infeasible.
            if phase1.s - gap > 1e-9 * scale && gap <= 0.1 * phase1.s.abs() {
                decided = Some(false);
                break;
            }
            if gap < 1e-12 * scale {
                decided = Some(phase1.s < 0.0);
                break;
            }
            // A stalled pass is not a verdict; a larger barrier weight
            // re-centers the slack-dominated objective.
            t *= 10.0;
        }
        let feasible = match decided {
            Some(f) => f,
            None => phase1.s < 0.0,
        };
        if !feasible {
            let x = &x_p + &z_basis * &phase1.z;
            return Ok(self.finish(
                SdpStatus::Infeasible,
                &x,
                scale,
                iters,
                format!("phase-1 slack stalled at {:.3e}", phase1.s),
            ));
        }

        // Phase 2: barrier path for the objective from the strictly
        // feasible phase-1 point.
        let mut z = phase1.z;
        if c_red.amax() == 0.0 {
            // Pure feasibility: return the analytic center.
            let pass = center_phase2(&cones, &mut z, &c_red, 0.0, opts);
            iters += pass.iters;
            let x = &x_p + &z_basis * &z;
            return Ok(self.finish(SdpStatus::Optimal, &x, scale, iters, String::new()));
        }

        let m_cones: f64 = cones.iter().map(|c| c.dim as f64).sum();
        let mut t = 1.0;
        let mut message = String::new();
        for _ in 0..opts.max_outer {
            let pass = center_phase2(&cones, &mut z, &c_red, t, opts);
            iters += pass.iters;
            let obj = c_red.dot(&z) + obj_offset;
            let gap = m_cones / t;
            if std::env::var_os("HIEM_SDP_DEBUG").is_some() {
                eprintln!(
                    "phase2: t={t:.1e} obj={obj:.9e} gap={gap:.1e} iters={} stalled={}",
                    pass.iters, pass.stalled
                );
            }
            if gap <= opts.gap_tol * (1.0 + obj.abs()) {
                break;
            }
            if pass.stalled {
                message = format!("barrier stalled at duality gap {gap:.3e}");
                break;
            }
            t *= 10.0;
        }
        let x = &x_p + &z_basis * &z;
        Ok(self.finish(SdpStatus::Optimal, &x, scale, iters, message))
    }

    fn reduce_equalities(&self) -> Result<(DVector<f64>, DMatrix<f64>), String> {
        let n = self.total;
        if self.equalities.is_empty() {
            return Ok((DVector::zeros(n), DMatrix::identity(n, n)));
        }
        let rows = self.equalities.len();
        let mut e = DMatrix::zeros(rows, n);
        let mut rhs = DVector::zeros(rows);
        for (r, (row, b)) in self.equalities.iter().enumerate() {
            // Normalize rows so the rank decision is scale-free.
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 1e-250 {
                if b.abs() > 1e-12 {
                    return Err(format!("equality row {r} is zero with rhs {b:.3e}"));
                }
                continue;
            }
            for (c, v) in row.iter().enumerate() {
                e[(r, c)] = v / norm;
            }
            rhs[r] = b / norm;
        }
        let sol = numerics::lstsq(&e, &rhs);
        if sol.residual > 1e-8 * (1.0 + rhs.norm()) {
            return Err(format!(
                "inconsistent equality constraints (residual {:.3e})",
                sol.residual
            ));
        }
        // Null space of E from the spectral decomposition of E^T E.
        let gram = e.transpose() * &e;
        let eig = numerics::sym_eig(&gram).map_err(|err| err.to_string())?;
        let lam_max = eig.values[eig.values.len() - 1].max(1.0);
        let null_cols: Vec<usize> = (0..n)
            .filter(|&k| eig.values[k] <= 1e-12 * lam_max)
            .collect();
        let mut z = DMatrix::zeros(n, null_cols.len());
        for (c, &k) in null_cols.iter().enumerate() {
            z.set_column(c, &eig.vectors.column(k));
        }
        Ok((sol.solution, z))
    }

    fn finish(
        &self,
        status: SdpStatus,
        x: &DVector<f64>,
        scale: f64,
        iters: usize,
        message: String,
    ) -> SdpSolution {
        let mut worst = 0.0f64;
        for cone in &self.cones {
            let value = cone.evaluate(x);
            let min_eig = numerics::min_eig_sym(&value);
            worst = worst.max(-min_eig);
        }
        let status = match status {
            SdpStatus::Optimal if worst > VIOLATION_TOL * scale => SdpStatus::NumericalFailure,
            s => s,
        };
        let objective = DVector::from_vec(self.objective.clone()).dot(x);
        SdpSolution {
            status,
            values: self.unstack(x),
            objective,
            worst_violation: worst,
            scale,
            newton_iters: iters,
            message,
        }
    }
}

/// Cone expression restricted to the equality null space.
struct ReducedCone {
    dim: usize,
    constant: DMatrix<f64>,
    coeffs: Vec<DMatrix<f64>>,
}

impl ReducedCone {
    fn build(c: &MatExpr, x_p: &DVector<f64>, z: &DMatrix<f64>) -> Self {
        let mut constant = c.constant.clone();
        for (k, m) in c.coeffs.iter().enumerate() {
            if x_p[k] != 0.0 {
                constant += m * x_p[k];
            }
        }
        let coeffs = (0..z.ncols())
            .map(|col| {
                let mut out = DMatrix::zeros(c.dim, c.dim);
                for (k, m) in c.coeffs.iter().enumerate() {
                    let w = z[(k, col)];
                    if w != 0.0 {
                        out += m * w;
                    }
                }
                out
            })
            .collect();
        Self {
            dim: c.dim,
            constant,
            coeffs,
        }
    }

    fn at(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, m) in self.coeffs.iter().enumerate() {
            if z[k] != 0.0 {
                out += m * z[k];
            }
        }
        out
    }

    fn at_with_slack(&self, z: &DVector<f64>, s: f64) -> DMatrix<f64> {
        let mut out = self.at(z);
        for i in 0..self.dim {
            out[(i, i)] += s;
        }
        out
    }
}

struct PhasePoint {
    z: DVector<f64>,
    s: f64,
}

/// Inverse and log-determinant of a positive definite cone value, or `None`
/// when the value is not positive definite.
fn chol_inspect(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let chol = m.clone().cholesky()?;
    let logdet: f64 = (0..m.nrows()).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
    Some((chol.inverse(), logdet))
}

/// Outcome of one Newton centering pass.
struct Centering {
    iters: usize,
    /// Set when progress stopped for numerical reasons (boundary rounding,
    /// unusable Newton system) rather than by the decrement criterion; the
    /// caller stops tightening the barrier and keeps the last iterate.
    stalled: bool,
}

/// Newton centering for phase 1 over (z, s). Stops as soon as the slack
/// drops below `stop_below`: phase 1 only needs strict feasibility, and
/// chasing the exact minimizer can inflate unbounded feasible directions
/// without limit.
fn center_phase1(
    cones: &[ReducedCone],
    point: &mut PhasePoint,
    t: f64,
    stop_below: f64,
    opts: &SolveOptions,
) -> Centering {
    let nz = point.z.len();
    let nv = nz + 1;
    let mut iters = 0;
    let growth_cap = 100.0 * (1.0 + point.z.norm()) + 1e3;
    for _ in 0..opts.max_newton {
        if point.s < stop_below {
            return Centering { iters, stalled: false };
        }
        iters += 1;
        let mut grad = DVector::zeros(nv);
        grad[nz] = t;
        let mut hess = DMatrix::zeros(nv, nv);
        let mut interior = true;
        for cone in cones {
            let f = cone.at_with_slack(&point.z, point.s);
            let Some((w, _)) = chol_inspect(&f) else {
                interior = false;
                break;
            };
            let mut gmats: Vec<DMatrix<f64>> = Vec::with_capacity(nv);
            for c in &cone.coeffs {
                gmats.push(&w * c);
            }
            gmats.push(w.clone());
            for (k, g) in gmats.iter().enumerate() {
                grad[k] -= g.trace();
            }
            for k in 0..nv {
                for l in k..nv {
                    let v = trace_product(&gmats[k], &gmats[l]);
                    hess[(k, l)] += v;
                    if l != k {
                        hess[(l, k)] += v;
                    }
                }
            }
        }
        if !interior {
            return Centering { iters, stalled: true };
        }
        let Some(step) = newton_step(&hess, &grad) else {
            return Centering { iters, stalled: true };
        };
        let decrement = -grad.dot(&step);
        if decrement <= 1e-13 {
            return Centering { iters, stalled: false };
        }
        let phi = |z: &DVector<f64>, s: f64| -> Option<f64> {
            let mut val = t * s;
            for cone in cones {
                let (_, logdet) = chol_inspect(&cone.at_with_slack(z, s))?;
                val -= logdet;
            }
            Some(val)
        };
        let Some(current) = phi(&point.z, point.s) else {
            return Centering { iters, stalled: true };
        };
        // Cap the step: the slack should land just beyond the exit
        // threshold, and the free variables must not race down an
        // unbounded feasible ray.
        let mut alpha = 1.0f64;
        if step[nv - 1] < 0.0 {
            let target = 4.0 * stop_below.min(-1e-9) - 1.0;
            let cap = (target - point.s) / step[nv - 1];
            if cap > 0.0 {
                alpha = alpha.min(cap);
            }
        }
        let step_z_norm = step.rows(0, nz).norm();
        if step_z_norm > 0.0 {
            alpha = alpha.min(10.0 * (1.0 + point.z.norm()) / step_z_norm);
        }
        let mut accepted = false;
        for _ in 0..60 {
            let z_try = &point.z + step.rows(0, nz) * alpha;
            let s_try = point.s + alpha * step[nz];
            if let Some(val) = phi(&z_try, s_try) {
                if val <= current - 0.25 * alpha * decrement {
                    point.z = z_try;
                    point.s = s_try;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted || point.z.norm() > growth_cap {
            return Centering { iters, stalled: true };
        }
    }
    Centering { iters, stalled: false }
}

/// Newton centering for phase 2 at barrier weight `t` (a zero objective
/// yields the analytic center).
fn center_phase2(
    cones: &[ReducedCone],
    z: &mut DVector<f64>,
    c: &DVector<f64>,
    t: f64,
    opts: &SolveOptions,
) -> Centering {
    let nz = z.len();
    let mut iters = 0;
    for _ in 0..opts.max_newton {
        iters += 1;
        let mut grad = c * t;
        let mut hess = DMatrix::zeros(nz, nz);
        let mut interior = true;
        for cone in cones {
            let f = cone.at(z);
            let Some((w, _)) = chol_inspect(&f) else {
                interior = false;
                break;
            };
            let gmats: Vec<DMatrix<f64>> = cone.coeffs.iter().map(|cm| &w * cm).collect();
            for (k, g) in gmats.iter().enumerate() {
                grad[k] -= g.trace();
            }
            for k in 0..nz {
                for l in k..nz {
                    let v = trace_product(&gmats[k], &gmats[l]);
                    hess[(k, l)] += v;
                    if l != k {
                        hess[(l, k)] += v;
                    }
                }
            }
        }
        if !interior {
            return Centering { iters, stalled: true };
        }
        let Some(step) = newton_step(&hess, &grad) else {
            return Centering { iters, stalled: true };
        };
        let decrement = -grad.dot(&step);
        if decrement <= 1e-13 {
            return Centering { iters, stalled: false };
        }
        let phi = |zv: &DVector<f64>| -> Option<f64> {
            let mut val = t * c.dot(zv);
            for cone in cones {
                let (_, logdet) = chol_inspect(&cone.at(zv))?;
                val -= logdet;
            }
            Some(val)
        };
        let Some(current) = phi(z) else {
            return Centering { iters, stalled: true };
        };
        let mut alpha = 1.0f64;
        let step_norm = step.norm();
        if step_norm > 0.0 {
            alpha = alpha.min(10.0 * (1.0 + z.norm()) / step_norm);
        }
        let mut accepted = false;
        for _ in 0..60 {
            let z_try = &*z + &step * alpha;
            if let Some(val) = phi(&z_try) {
                if val <= current - 0.25 * alpha * decrement {
                    *z = z_try;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if std::env::var_os("HIEM_SDP_DEBUG").is_some() {
            eprintln!(
                "  newton: dec={decrement:.3e} |step|={step_norm:.3e} alpha={alpha:.3e} accepted={accepted} phi={current:.9e}"
            );
        }
        if !accepted || z.norm() > 1e9 {
            return Centering { iters, stalled: true };
        }
    }
    Centering { iters, stalled: false }
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            sum += a[(i, j)] * b[(j, i)];
        }
    }
    sum
}

fn newton_step(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = hess.nrows();
    let mut ridge = 0.0;
    let scale = hess.trace().abs().max(1.0) / n as f64;
    for _ in 0..8 {
        let mut h = hess.clone();
        for i in 0..n {
            h[(i, i)] += ridge;
        }
        if let Some(chol) = h.cholesky() {
            return Some(chol.solve(&(-grad)));
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
    }
    None
}

/// Scalar line search over a one-parameter family of problems: evaluates a
/// logarithmic grid, then golden-section refines in log space around the
/// best feasible grid point. Returns the best `(beta, solution)` seen.
pub fn beta_search<F>(
    family: F,
    range: (f64, f64),
    budget: usize,
    refine_steps: usize,
    opts: &SolveOptions,
) -> Result<(f64, SdpSolution), SdpError>
where
    F: Fn(f64) -> SdpProblem,
{
    let (beta_min, beta_max) = range;
    if !(beta_min > 0.0) || !(beta_max > beta_min) {
        return Err(SdpError::BadProblem(format!(
            "invalid beta range [{beta_min}, {beta_max}]"
        )));
    }
    let budget = budget.max(2);
    let mut tried = Vec::with_capacity(budget);
    let mut best: Option<(f64, SdpSolution)> = None;
    let (ln_min, ln_max) = (beta_min.ln(), beta_max.ln());
    let mut best_idx = None;
    for i in 0..budget {
        let ln_beta = ln_min + (ln_max - ln_min) * i as f64 / (budget - 1) as f64;
        let beta = ln_beta.exp();
        tried.push(beta);
        let sol = family(beta).solve(opts)?;
        if sol.status == SdpStatus::Optimal
            && best.as_ref().map_or(true, |(_, b)| sol.objective < b.objective)
        {
            best = Some((beta, sol));
            best_idx = Some(i);
        }
    }
    let Some(idx) = best_idx else {
        return Err(SdpError::InfeasibleFamily(tried));
    };

    // Golden-section refinement between the neighbours of the best grid
    // point, treating infeasible members as +inf.
    let step = (ln_max - ln_min) / (budget - 1) as f64;
    let mut a = ln_min + step * idx.saturating_sub(1) as f64;
    let mut b = (ln_min + step * (idx + 1) as f64).min(ln_max);
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let eval = |ln_beta: f64, best: &mut Option<(f64, SdpSolution)>| -> f64 {
        let beta = ln_beta.exp();
        match family(beta).solve(opts) {
            Ok(sol) if sol.status == SdpStatus::Optimal => {
                let obj = sol.objective;
                if best.as_ref().map_or(true, |(_, bs)| obj < bs.objective) {
                    *best = Some((beta, sol));
                }
                obj
            }
            _ => f64::INFINITY,
        }
    };
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c, &mut best);
    let mut fd = eval(d, &mut best);
    for _ in 0..refine_steps {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d, &mut best);
        }
    }
    Ok(best.expect("a feasible member was recorded"))
}
