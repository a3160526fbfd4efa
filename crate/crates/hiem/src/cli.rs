//! File-driven front end: problem files in, controller/certificate JSON,
//! trajectory CSV, metrics and a reproducibility manifest out.
//!
//! Exit-code contract of the binary: 0 success, 1 input error,
//! 2 infeasible, 3 divergence, 4 verification failure.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::HomogeneousController;
use crate::dilation::Dilation;
use crate::ellipsoid::{
    self, controller_from_certificate, lmi_invariance, min_trace_homogeneous, min_trace_linear,
    refit_x_fixed_k, upgrade_linear, DisturbanceShape, EllipsoidCertificate, EllipsoidError,
    InvarianceMargins, SynthOptions,
};
use crate::homnorm::DEFAULT_ROOT_TOL;
use crate::plant::LinearPlant;
use crate::simulate::{self, Disturbance, PendulumParams, Trajectory};
use crate::synthesis::{make_dilation, solve_generator, SynthesisError, GENERATOR_RESIDUAL_TOL};

/// Accepted post-hoc margin slack of a verified certificate, scaled by the
/// certificate size.
pub const MARGIN_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("verification failure: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SynthesisError> for CliError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Numerics(n) => CliError::Input(n.to_string()),
            SynthesisError::BadInput(m) => CliError::Input(m),
            SynthesisError::MuOutOfRange { .. } => CliError::Input(e.to_string()),
            other => CliError::Infeasible(other.to_string()),
        }
    }
}

impl From<EllipsoidError> for CliError {
    fn from(e: EllipsoidError) -> Self {
        match e {
            EllipsoidError::Numerics(n) => CliError::Input(n.to_string()),
            EllipsoidError::Synthesis(s) => s.into(),
            EllipsoidError::Precondition(m) => CliError::Input(m),
            other => CliError::Infeasible(other.to_string()),
        }
    }
}

impl From<simulate::SimError> for CliError {
    fn from(e: simulate::SimError) -> Self {
        match e {
            simulate::SimError::Divergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// File schemas
// ---------------------------------------------------------------------------

fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_mat(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() {
        return Err(CliError::Input(format!("matrix {name} is empty")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Input(format!(
            "matrix {name} has ragged or empty rows"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Input(format!("matrix {name} has non-finite entries")));
    }
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub beta_min: f64,
    pub beta_max: f64,
    pub budget: usize,
    pub refine_steps: usize,
    pub gain_cap: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let o = SynthOptions::default();
        Self {
            beta_min: o.beta_min,
            beta_max: o.beta_max,
            budget: o.budget,
            refine_steps: o.refine_steps,
            gain_cap: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DisturbanceSpec {
    Zero,
    Sinusoid { amplitude: Vec<f64>, frequency: f64 },
    SeededRandomAdmissible {
        seed: u64,
        #[serde(default = "default_hold")]
        hold: f64,
    },
}

fn default_hold() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSettings {
    pub t_final: f64,
    pub dt: f64,
    pub x0: Option<Vec<f64>>,
    /// Fraction of the horizon (from the end) used as the steady window.
    pub steady_fraction: f64,
    pub disturbance: Option<DisturbanceSpec>,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            t_final: 30.0,
            dt: 1e-3,
            x0: None,
            steady_fraction: 1.0 / 3.0,
            disturbance: None,
        }
    }
}

/// The problem file: plant matrices plus design and simulation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub u_bar: Option<f64>,
    /// Fixed gain for the refit mode; when absent, the linear optimum is
    /// refitted.
    #[serde(default)]
    pub k_fixed: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub simulation: SimulationSettings,
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn plant(&self) -> Result<LinearPlant, CliError> {
        let a = rows_mat(&self.a, "a")?;
        let b = rows_mat(&self.b, "b")?;
        let d = rows_mat(&self.d, "d")?;
        let q = rows_mat(&self.q, "q")?;
        LinearPlant::new(a, b, d, q).map_err(|e| CliError::Input(e.to_string()))
    }

    pub fn synth_options(&self) -> SynthOptions {
        SynthOptions {
            beta_min: self.solver.beta_min,
            beta_max: self.solver.beta_max,
            budget: self.solver.budget,
            refine_steps: self.solver.refine_steps,
            u_bar: self.u_bar,
            gain_cap: self.solver.gain_cap,
            ..Default::default()
        }
    }

    pub fn default_x0(&self, n: usize) -> DVector<f64> {
        match &self.simulation.x0 {
            Some(v) => DVector::from_vec(v.clone()),
            None => DVector::from_fn(n, |i, _| if i < 2 { 0.1 } else { 0.0 }),
        }
    }

    pub fn disturbance(&self, plant: &LinearPlant) -> Result<Disturbance, CliError> {
        match &self.simulation.disturbance {
            None | Some(DisturbanceSpec::Zero) => Ok(Disturbance::Zero { dim: plant.p() }),
            Some(DisturbanceSpec::Sinusoid { amplitude, frequency }) => {
                if amplitude.len() != plant.p() {
                    return Err(CliError::Input(format!(
                        "disturbance amplitude has dimension {}, plant expects {}",
                        amplitude.len(),
                        plant.p()
                    )));
                }
                Ok(Disturbance::Sinusoid {
                    amplitude: DVector::from_vec(amplitude.clone()),
                    frequency: *frequency,
                })
            }
            Some(DisturbanceSpec::SeededRandomAdmissible { seed, hold }) => {
                Disturbance::seeded_admissible(*seed, *hold, &plant.q)
                    .map_err(|e| CliError::Input(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerFile {
    pub k0: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub gd: Vec<Vec<f64>>,
    pub mu: f64,
    pub norm_floor: f64,
}

impl ControllerFile {
    pub fn from_controller(c: &HomogeneousController) -> Self {
        Self {
            k0: mat_rows(c.k0()),
            k: mat_rows(c.k()),
            p: mat_rows(c.p()),
            gd: mat_rows(&c.dilation().gd),
            mu: c.mu(),
            norm_floor: c.norm_floor(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn build(&self) -> Result<HomogeneousController, CliError> {
        let gd = rows_mat(&self.gd, "gd")?;
        let dil = Dilation::new(gd, self.mu, None)
            .map_err(|e| CliError::Input(format!("controller dilation invalid: {e}")))?;
        HomogeneousController::new(
            rows_mat(&self.k0, "k0")?,
            rows_mat(&self.k, "k")?,
            rows_mat(&self.p, "p")?,
            dil,
            self.mu,
            self.norm_floor,
        )
        .map_err(|e| CliError::Input(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginsFile {
    pub w_block: f64,
    pub x_pd: f64,
    pub gd_mono: Option<f64>,
    pub control_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateFile {
    pub family: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub beta: f64,
    pub mu: f64,
    pub margins: MarginsFile,
    pub u_bar: Option<f64>,
    pub rho_requested: Option<f64>,
    pub rho_effective: Option<f64>,
    pub plant: PlantFile,
}

impl CertificateFile {
    fn from_certificate(cert: &EllipsoidCertificate, plant: &LinearPlant) -> Self {
        Self {
            family: cert.family.as_str().to_string(),
            x: mat_rows(&cert.x),
            y: mat_rows(&cert.y),
            beta: cert.beta,
            mu: cert.mu,
            margins: MarginsFile {
                w_block: cert.margins.w_block,
                x_pd: cert.margins.x_pd,
                gd_mono: cert.margins.gd_mono,
                control_bound: cert.margins.control_bound,
            },
            u_bar: cert.u_bar,
            rho_requested: cert.rho_requested,
            rho_effective: cert.rho_effective,
            plant: PlantFile {
                a: mat_rows(&plant.a),
                b: mat_rows(&plant.b),
                d: mat_rows(&plant.d),
                q: mat_rows(&plant.q),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn plant(&self) -> Result<LinearPlant, CliError> {
        LinearPlant::new(
            rows_mat(&self.plant.a, "a")?,
            rows_mat(&self.plant.b, "b")?,
            rows_mat(&self.plant.d, "d")?,
            rows_mat(&self.plant.q, "q")?,
        )
        .map_err(|e| CliError::Input(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
struct ManifestSeeds {
    disturbance: Option<u64>,
    verify: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
struct ManifestTolerances {
    generator_residual: f64,
    margin_check: f64,
    norm_root: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    mode: Option<String>,
    seeds: ManifestSeeds,
    tolerances: ManifestTolerances,
}

impl Manifest {
    fn new(command: &'static str, mode: Option<String>, disturbance: Option<u64>, verify: Option<u64>) -> Self {
        Self {
            tool: "hiem",
            version: env!("CARGO_PKG_VERSION"),
            command,
            mode,
            seeds: ManifestSeeds {
                disturbance,
                verify,
            },
            tolerances: ManifestTolerances {
                generator_residual: GENERATOR_RESIDUAL_TOL,
                margin_check: MARGIN_TOL,
                norm_root: DEFAULT_ROOT_TOL,
            },
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignMode {
    Linear,
    Homogeneous,
    Upgrade,
    Refit,
}

impl std::str::FromStr for DesignMode {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "homogeneous" => Ok(Self::Homogeneous),
            "upgrade" => Ok(Self::Upgrade),
            "refit" => Ok(Self::Refit),
            other => Err(CliError::Input(format!(
                "unknown mode '{other}' (expected linear | homogeneous | upgrade | refit)"
            ))),
        }
    }
}

impl DesignMode {
    fn as_str(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Homogeneous => "homogeneous",
            Self::Upgrade => "upgrade",
            Self::Refit => "refit",
        }
    }
}

fn required_mu(problem: &ProblemFile) -> Result<f64, CliError> {
    problem
        .mu
        .ok_or_else(|| CliError::Input("this mode needs a 'mu' value in the problem file".into()))
}

/// In-memory result of one design run.
#[derive(Debug, Clone)]
pub struct DesignArtifacts {
    pub controller: ControllerFile,
    pub certificate: CertificateFile,
    pub log: String,
}

/// Full design pipeline without any file IO: generator equations,
/// trace-minimal synthesis in the requested mode, controller assembly.
pub fn run_design(problem: &ProblemFile, mode: DesignMode) -> Result<DesignArtifacts, CliError> {
    let plant = problem.plant()?;
    let opts = problem.synth_options();
    let mut log = String::new();

    let gs = solve_generator(&plant.a, &plant.b)?;
    log.push_str(&format!(
        "generator: residual {:.3e}, controllability index {}\n",
        gs.residual, gs.ctrl_index
    ));
    if !gs.a_nilpotent {
        log.push_str("warning: plant drift A is not nilpotent; residual check accepted the design equations anyway\n");
    }

    let cert = match mode {
        DesignMode::Linear => min_trace_linear(&plant, &gs, &opts)?,
        DesignMode::Homogeneous => {
            let mu = required_mu(problem)?;
            let dil = make_dilation(&gs, mu)?;
            let shape = if mu == 0.0 {
                DisturbanceShape::new(plant.q.clone(), plant.d.clone())?
            } else {
                DisturbanceShape::new(plant.q.clone(), plant.d.clone())?
                    .with_generators(&gs, mu)?
            };
            min_trace_homogeneous(&plant, &gs, &dil, &shape, &opts)?
        }
        DesignMode::Upgrade => {
            let mu = required_mu(problem)?;
            let lin = min_trace_linear(&plant, &gs, &opts)?;
            log.push_str(&format!(
                "linear stage: beta {:.6e}, trace {:.6e}\n",
                lin.beta,
                lin.x.trace()
            ));
            upgrade_linear(&plant, &gs, &lin, mu)?
        }
        DesignMode::Refit => {
            let mu = required_mu(problem)?;
            let rho = problem.rho.unwrap_or(1.0);
            let dil = make_dilation(&gs, mu)?;
            let k = match &problem.k_fixed {
                Some(rows) => rows_mat(rows, "k_fixed")?,
                None => {
                    let lin = min_trace_linear(&plant, &gs, &opts)?;
                    log.push_str(&format!(
                        "linear stage: beta {:.6e}, trace {:.6e}\n",
                        lin.beta,
                        lin.x.trace()
                    ));
                    lin.gain()?
                }
            };
            let cert = refit_x_fixed_k(&plant, &gs, &dil, &k, rho, &opts)?;
            if let (Some(req), Some(eff)) = (cert.rho_requested, cert.rho_effective) {
                if eff < req {
                    log.push_str(&format!(
                        "warning: decay weight backed off from {req:.3e} to {eff:.3e} to stay feasible with the fixed gain\n"
                    ));
                }
            }
            cert
        }
    };

    log.push_str(&format!(
        "certificate: family {}, beta {:.6e}, trace {:.6e}, worst margin {:.3e}\n",
        cert.family.as_str(),
        cert.beta,
        cert.x.trace(),
        cert.margins.worst()
    ));

    let ctrl = controller_from_certificate(&gs, &cert, None)?;
    Ok(DesignArtifacts {
        controller: ControllerFile::from_controller(&ctrl),
        certificate: CertificateFile::from_certificate(&cert, &plant),
        log,
    })
}

/// `run_design` on a problem file, writing controller.json,
/// certificate.json, manifest.json and design.log into `out_dir`.
pub fn cmd_design(problem_path: &Path, mode: DesignMode, out_dir: &Path) -> Result<(), CliError> {
    let problem = ProblemFile::load(problem_path)?;
    let artifacts = run_design(&problem, mode)?;
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("controller.json"), &artifacts.controller)?;
    write_json(&out_dir.join("certificate.json"), &artifacts.certificate)?;
    let seed = match &problem.simulation.disturbance {
        Some(DisturbanceSpec::SeededRandomAdmissible { seed, .. }) => Some(*seed),
        _ => None,
    };
    write_json(
        &out_dir.join("manifest.json"),
        &Manifest::new("design", Some(mode.as_str().to_string()), seed, None),
    )?;
    fs::write(out_dir.join("design.log"), &artifacts.log)?;
    let trace: f64 = artifacts
        .certificate
        .x
        .iter()
        .enumerate()
        .map(|(i, row)| row[i])
        .sum();
    println!(
        "design ok: family {}, trace {:.6e}, outputs in {}",
        artifacts.certificate.family,
        trace,
        out_dir.display()
    );
    Ok(())
}

fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_trajectory_csv(path: &Path, tr: &Trajectory) -> Result<(), CliError> {
    let n = tr.x[0].len();
    let m = tr.u[0].len();
    let p = tr.w[0].len();
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",x{i}"));
    }
    for i in 1..=m {
        out.push_str(&format!(",u{i}"));
    }
    for i in 1..=p {
        out.push_str(&format!(",w{i}"));
    }
    out.push_str(",homnorm\n");
    for k in 0..tr.t.len() {
        out.push_str(&format_float(tr.t[k]));
        for i in 0..n {
            out.push(',');
            out.push_str(&format_float(tr.x[k][i]));
        }
        for i in 0..m {
            out.push(',');
            out.push_str(&format_float(tr.u[k][i]));
        }
        for i in 0..p {
            out.push(',');
            out.push_str(&format_float(tr.w[k][i]));
        }
        out.push(',');
        out.push_str(&format_float(tr.hom_norm[k]));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_metrics_txt(
    path: &Path,
    metrics: &simulate::MetricSet,
    extra: &[(String, f64)],
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!("window.start = {}\n", format_float(metrics.window.0)));
    out.push_str(&format!("window.end = {}\n", format_float(metrics.window.1)));
    for (i, ch) in metrics.states.iter().enumerate() {
        out.push_str(&format!("x{}.linf = {}\n", i + 1, format_float(ch.linf)));
        out.push_str(&format!("x{}.l2 = {}\n", i + 1, format_float(ch.l2)));
    }
    for (i, ch) in metrics.controls.iter().enumerate() {
        out.push_str(&format!("u{}.linf = {}\n", i + 1, format_float(ch.linf)));
        out.push_str(&format!("u{}.l2 = {}\n", i + 1, format_float(ch.l2)));
    }
    for (k, v) in extra {
        out.push_str(&format!("{k} = {}\n", format_float(*v)));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Simulates a stored controller against a problem file's plant and
/// disturbance, writing the trajectory CSV and the metrics document.
pub fn cmd_simulate(
    problem_path: &Path,
    controller_path: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let problem = ProblemFile::load(problem_path)?;
    let plant = problem.plant()?;
    let ctrl = ControllerFile::load(controller_path)?.build()?;
    if ctrl.n() != plant.n() {
        return Err(CliError::Input(format!(
            "controller dimension {} does not match plant dimension {}",
            ctrl.n(),
            plant.n()
        )));
    }
    let disturbance = problem.disturbance(&plant)?;
    let sim = &problem.simulation;
    let x0 = problem.default_x0(plant.n());
    if x0.len() != plant.n() {
        return Err(CliError::Input(format!(
            "x0 has dimension {}, plant has {}",
            x0.len(),
            plant.n()
        )));
    }
    fs::create_dir_all(out_dir)?;
    let tr = simulate::simulate(&plant, &ctrl, &disturbance, sim.t_final, sim.dt, &x0)?;
    let window_start = sim.t_final * (1.0 - sim.steady_fraction);
    let m = simulate::metrics(&tr, (window_start, sim.t_final))?;
    let peak_norm = tr.hom_norm.iter().cloned().fold(0.0f64, f64::max);
    write_trajectory_csv(&out_dir.join("trajectory.csv"), &tr)?;
    write_metrics_txt(
        &out_dir.join("metrics.txt"),
        &m,
        &[("homnorm.peak".to_string(), peak_norm)],
    )?;
    let seed = match &problem.simulation.disturbance {
        Some(DisturbanceSpec::SeededRandomAdmissible { seed, .. }) => Some(*seed),
        _ => None,
    };
    write_json(
        &out_dir.join("manifest.json"),
        &Manifest::new("simulate", None, seed, None),
    )?;
    println!(
        "simulate ok: {} steps, steady max|x1| {:.6e}, outputs in {}",
        tr.t.len(),
        m.states[0].linf,
        out_dir.display()
    );
    Ok(())
}

/// Re-verifies a stored certificate: recomputes the family margins and
/// runs the boundary-derivative Monte-Carlo sweep.
pub fn cmd_verify(
    controller_path: &Path,
    certificate_path: &Path,
    samples: usize,
    seed: u64,
) -> Result<(), CliError> {
    if samples == 0 {
        return Err(CliError::Input("samples must be positive".into()));
    }
    let ctrl_file = ControllerFile::load(controller_path)?;
    let ctrl = ctrl_file.build()?;
    let cert_file = CertificateFile::load(certificate_path)?;
    let plant = cert_file.plant()?;
    let x = rows_mat(&cert_file.x, "x")?;
    let y = rows_mat(&cert_file.y, "y")?;
    let k0 = rows_mat(&ctrl_file.k0, "k0")?;
    let a0 = &plant.a + &plant.b * &k0;

    let dil_opt = if cert_file.family == "linear" {
        None
    } else {
        Some(ctrl.dilation().clone())
    };
    let mut margins: InvarianceMargins =
        lmi_invariance(&plant, &a0, dil_opt.as_ref(), &x, &y, cert_file.beta);
    if let Some(u_bar) = cert_file.u_bar {
        margins.control_bound = Some(ellipsoid::control_bound_margin(&x, &y, u_bar));
    }
    let scale = 1.0 + x.norm().max(plant.q.norm());
    println!(
        "margins: block {:.3e}, X {:.3e}, monotone {:?}, control {:?}",
        margins.w_block, margins.x_pd, margins.gd_mono, margins.control_bound
    );
    if margins.worst() < -MARGIN_TOL * scale {
        return Err(CliError::Verification(format!(
            "worst recomputed margin {:.3e} below tolerance",
            margins.worst()
        )));
    }

    let sweep = ellipsoid::sweep_boundary_derivative(&ctrl, &plant, samples, seed, MARGIN_TOL)
        .map_err(|e| CliError::Input(e.to_string()))?;
    println!(
        "boundary sweep: {} samples, worst derivative {:.3e}",
        sweep.samples, sweep.worst
    );
    if let Some((x_bad, w_bad)) = sweep.counterexample {
        let xs: Vec<String> = x_bad.iter().map(|v| format!("{v:.6e}")).collect();
        let ws: Vec<String> = w_bad.iter().map(|v| format!("{v:.6e}")).collect();
        return Err(CliError::Verification(format!(
            "positive boundary derivative at x = [{}], w = [{}]",
            xs.join(", "),
            ws.join(", ")
        )));
    }
    println!("verify ok");
    Ok(())
}

/// One-shot homogeneous-norm evaluation for debugging.
pub fn cmd_norm(controller_path: &Path, x_csv: &str) -> Result<(), CliError> {
    let ctrl = ControllerFile::load(controller_path)?.build()?;
    let parts: Result<Vec<f64>, _> = x_csv
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect();
    let values = parts.map_err(|e| CliError::Input(format!("cannot parse state vector: {e}")))?;
    if values.len() != ctrl.n() {
        return Err(CliError::Input(format!(
            "state has dimension {}, controller expects {}",
            values.len(),
            ctrl.n()
        )));
    }
    let x = DVector::from_vec(values);
    let norm = ctrl.ctx().hom_norm(&x);
    println!("homnorm = {}", format_float(norm));
    if norm > 0.0 {
        if let Ok(grad) = ctrl.ctx().hom_norm_gradient(&x) {
            let gs: Vec<String> = grad.iter().map(|v| format_float(*v)).collect();
            println!("gradient = [{}]", gs.join(", "));
        }
    }
    Ok(())
}

/// Emits a ready-to-run problem file for the rotary pendulum demo
/// (simulation fixture) or the hardware-rig variant (`experiment`).
pub fn cmd_pendulum(out_path: &Path, experiment: bool, jt: Option<f64>) -> Result<(), CliError> {
    let mut params = PendulumParams::default();
    if let Some(jt) = jt {
        params.jt = jt;
    }
    params.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let (a, b) = simulate::build_pendulum(&params);
    let problem = if experiment {
        ProblemFile {
            a: mat_rows(&a),
            b: mat_rows(&b),
            d: vec![vec![0.0], vec![0.0], vec![2.53], vec![2.50]],
            q: vec![vec![1.0]],
            mu: Some(-0.7),
            rho: None,
            u_bar: None,
            k_fixed: Some(vec![vec![2.0, -35.0, 1.5, -3.0]]),
            solver: SolverSettings::default(),
            simulation: SimulationSettings::default(),
        }
    } else {
        ProblemFile {
            a: mat_rows(&a),
            b: mat_rows(&b),
            d: mat_rows(&DMatrix::<f64>::identity(4, 4)),
            q: vec![
                vec![2.0, 0.0, 0.0, 0.0],
                vec![0.0, 2.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 2.0],
            ],
            mu: Some(-0.7),
            rho: Some(1.0),
            u_bar: None,
            k_fixed: None,
            solver: SolverSettings::default(),
            simulation: SimulationSettings {
                disturbance: Some(DisturbanceSpec::Sinusoid {
                    amplitude: vec![0.2, 0.3, 0.3, 0.4],
                    frequency: 0.5,
                }),
                ..Default::default()
            },
        }
    };
    if let Some(dir) = out_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    write_json(out_path, &problem)?;
    println!("wrote {}", out_path.display());
    Ok(())
}
