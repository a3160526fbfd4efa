//! Closed-loop simulation: rotary-pendulum plant assembly, fixed-step RK4
//! integration with pure time-function disturbances, steady-window metrics
//! and the linear-vs-homogeneous comparison report.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use thiserror::Error;

use crate::controller::HomogeneousController;
use crate::ellipsoid::sample_unit_sphere;
use crate::numerics;
use crate::plant::LinearPlant;

#[derive(Debug, Clone, Error)]
pub enum SimError {
    #[error("state diverged at t = {t:.4} s (norm {norm:.3e})")]
    Divergence { t: f64, norm: f64 },
    #[error("invalid simulation setup: {0}")]
    BadInput(String),
    #[error("metrics window [{0}, {1}] selects no samples")]
    EmptyWindow(f64, f64),
}

/// Physical parameters of the rotary inverted pendulum (Quanser Qube
/// Servo-2 class). `jt` is the total-inertia determinant
/// `Jp Jr + mp l^2 Jr + Jp mp r^2`; the convention is overridable because
/// vendor documentation varies.
#[derive(Debug, Clone)]
pub struct PendulumParams {
    /// Motor resistance (ohm).
    pub rm: f64,
    /// Back-emf constant (V s/rad).
    pub km: f64,
    /// Rotary arm mass (kg).
    pub mr: f64,
    /// Rotary arm length (m).
    pub r: f64,
    /// Rotary arm inertia (kg m^2).
    pub jr: f64,
    /// Rotary damping (N m s/rad).
    pub br: f64,
    /// Pendulum link mass (kg).
    pub mp: f64,
    /// Pendulum link length (m).
    pub lp: f64,
    /// Pendulum centre of mass (m).
    pub l: f64,
    /// Pendulum inertia (kg m^2).
    pub jp: f64,
    /// Pendulum damping (N m s/rad).
    pub bp: f64,
    /// Gravity (m/s^2).
    pub g: f64,
    /// Total-inertia determinant (kg^2 m^4).
    pub jt: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        let mr = 0.095;
        let r = 0.085;
        let jr = r * r * mr / 3.0;
        let mp = 0.024;
        let lp = 0.129;
        let l = lp / 2.0;
        let jp = mp * lp * lp / 3.0;
        let jt = jp * jr + mp * l * l * jr + jp * mp * r * r;
        Self {
            rm: 8.4,
            km: 0.042,
            mr,
            r,
            jr,
            br: 1e-3,
            mp,
            lp,
            l,
            jp,
            bp: 5e-5,
            g: 9.81,
            jt,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("rm", self.rm),
            ("km", self.km),
            ("mr", self.mr),
            ("r", self.r),
            ("jr", self.jr),
            ("mp", self.mp),
            ("lp", self.lp),
            ("l", self.l),
            ("jp", self.jp),
            ("g", self.g),
            ("jt", self.jt),
        ] {
            if !(v > 0.0) {
                return Err(SimError::BadInput(format!("parameter {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// State-space matrices of the pendulum linearized in the upright
/// position, state ordering `(theta, alpha, theta', alpha')`.
pub fn build_pendulum(p: &PendulumParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let jt = p.jt;
    let k2r = p.km * p.km / p.rm;
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0,
            0.0,
            1.0,
            0.0,
            //
            0.0,
            0.0,
            0.0,
            1.0,
            //
            0.0,
            p.l * p.l * p.r * p.g * p.mp * p.mp / jt,
            -p.br * p.jp / jt - k2r * p.jp / jt,
            -p.l * p.r * p.mp * p.bp / jt,
            //
            0.0,
            p.g * p.l * p.mp * p.jr / jt,
            -p.l * p.r * p.mp * p.br / jt - k2r * p.l * p.r * p.mp / jt,
            -p.jr * p.bp / jt,
        ],
    );
    let b = DMatrix::from_row_slice(
        4,
        1,
        &[
            0.0,
            0.0,
            p.km / p.rm * p.jp / jt,
            p.km / p.rm * p.l * p.r * p.mp / jt,
        ],
    );
    (a, b)
}

/// Pure time-function disturbances; replays are deterministic by
/// construction.
#[derive(Debug, Clone)]
pub enum Disturbance {
    Zero { dim: usize },
    /// `amplitude * sin(frequency * t)`.
    Sinusoid { amplitude: DVector<f64>, frequency: f64 },
    /// Piecewise-constant samples drawn uniformly from the admissible
    /// ball `w^T Q w <= 1`, re-drawn every `hold` seconds from a stream
    /// seeded per hold interval.
    SeededAdmissible {
        seed: u64,
        hold: f64,
        q_inv_sqrt: DMatrix<f64>,
    },
}

impl Disturbance {
    pub fn seeded_admissible(seed: u64, hold: f64, q: &DMatrix<f64>) -> Result<Self, SimError> {
        let (_, q_inv_sqrt) =
            numerics::spd_sqrt(q).map_err(|e| SimError::BadInput(e.to_string()))?;
        Ok(Self::SeededAdmissible {
            seed,
            hold,
            q_inv_sqrt,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Disturbance::Zero { dim } => *dim,
            Disturbance::Sinusoid { amplitude, .. } => amplitude.len(),
            Disturbance::SeededAdmissible { q_inv_sqrt, .. } => q_inv_sqrt.nrows(),
        }
    }

    /// Sample at an arbitrary time; pure in `t`.
    pub fn sample(&self, t: f64) -> DVector<f64> {
        match self {
            Disturbance::Zero { dim } => DVector::zeros(*dim),
            Disturbance::Sinusoid { amplitude, frequency } => amplitude * (frequency * t).sin(),
            Disturbance::SeededAdmissible {
                seed,
                hold,
                q_inv_sqrt,
            } => {
                let bucket = (t / hold).floor().max(0.0) as u64;
                let mut rng = rand::rngs::StdRng::seed_from_u64(
                    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(bucket),
                );
                let p = q_inv_sqrt.nrows();
                let v = sample_unit_sphere(p, &mut rng);
                let r: f64 = rand::RngExt::random_range(&mut rng, 0.0..1.0);
                q_inv_sqrt * v * r.powf(1.0 / p as f64)
            }
        }
    }
}

/// Fixed-step closed-loop record.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub hom_norm: Vec<f64>,
}

impl Trajectory {
    pub fn dt(&self) -> f64 {
        if self.t.len() >= 2 {
            self.t[1] - self.t[0]
        } else {
            0.0
        }
    }
}

/// Classical RK4 on `x' = A x + B u(x) + D w(t)` with the disturbance
/// sampled at the stage times. The homogeneous-norm history is evaluated
/// at every stored step.
pub fn simulate(
    plant: &LinearPlant,
    ctrl: &HomogeneousController,
    disturbance: &Disturbance,
    t_final: f64,
    dt: f64,
    x0: &DVector<f64>,
) -> Result<Trajectory, SimError> {
    if !(dt > 0.0) || t_final < dt {
        return Err(SimError::BadInput(format!(
            "need dt > 0 and t_final >= dt, got dt = {dt}, t_final = {t_final}"
        )));
    }
    if x0.len() != plant.n() {
        return Err(SimError::BadInput(format!(
            "initial state has dimension {}, plant has {}",
            x0.len(),
            plant.n()
        )));
    }
    if disturbance.dim() != plant.p() {
        return Err(SimError::BadInput(format!(
            "disturbance has dimension {}, plant expects {}",
            disturbance.dim(),
            plant.p()
        )));
    }
    let steps = (t_final / dt).round() as usize;
    let mut t = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut us = Vec::with_capacity(steps + 1);
    let mut ws = Vec::with_capacity(steps + 1);
    let mut norms = Vec::with_capacity(steps + 1);

    let field = |time: f64, x: &DVector<f64>| -> DVector<f64> {
        &plant.a * x + &plant.b * ctrl.eval_u(x) + &plant.d * disturbance.sample(time)
    };

    let mut x = x0.clone();
    for k in 0..=steps {
        let time = k as f64 * dt;
        let norm = x.norm();
        if norm > 1e9 {
            return Err(SimError::Divergence { t: time, norm });
        }
        t.push(time);
        xs.push(x.clone());
        us.push(ctrl.eval_u(&x));
        ws.push(disturbance.sample(time));
        norms.push(ctrl.ctx().hom_norm(&x));
        if k == steps {
            break;
        }
        let half = 0.5 * dt;
        let k1 = field(time, &x);
        let k2 = field(time + half, &(&x + &k1 * half));
        let k3 = field(time + half, &(&x + &k2 * half));
        let k4 = field(time + dt, &(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    Ok(Trajectory {
        t,
        x: xs,
        u: us,
        w: ws,
        hom_norm: norms,
    })
}

/// Peak magnitude and energy of one channel over a window.
#[derive(Debug, Clone, Copy)]
pub struct ChannelMetrics {
    pub linf: f64,
    pub l2: f64,
}

#[derive(Debug, Clone)]
pub struct MetricSet {
    pub window: (f64, f64),
    pub states: Vec<ChannelMetrics>,
    pub controls: Vec<ChannelMetrics>,
}

/// `L_inf` (max magnitude) and `L_2` (`sqrt(sum v^2 dt)`) of every state
/// and control channel over the window.
pub fn metrics(tr: &Trajectory, window: (f64, f64)) -> Result<MetricSet, SimError> {
    let (t0, t1) = window;
    let idx: Vec<usize> = tr
        .t
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= t0 && t <= t1)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(SimError::EmptyWindow(t0, t1));
    }
    let dt = tr.dt();
    let channel = |series: &dyn Fn(usize) -> f64| -> ChannelMetrics {
        let mut linf = 0.0f64;
        let mut energy = 0.0f64;
        for &i in &idx {
            let v = series(i);
            linf = linf.max(v.abs());
            energy += v * v * dt;
        }
        ChannelMetrics {
            linf,
            l2: energy.sqrt(),
        }
    };
    let n = tr.x[0].len();
    let m = tr.u[0].len();
    let states = (0..n)
        .map(|c| channel(&|i: usize| tr.x[i][c]))
        .collect();
    let controls = (0..m)
        .map(|c| channel(&|i: usize| tr.u[i][c]))
        .collect();
    Ok(MetricSet {
        window,
        states,
        controls,
    })
}

/// Side-by-side metrics of two controllers under identical conditions,
/// with per-channel improvement percentages
/// `(linear - homogeneous) / linear * 100`.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub linear: MetricSet,
    pub homogeneous: MetricSet,
    pub state_linf_improvement: Vec<f64>,
    pub state_l2_improvement: Vec<f64>,
    pub control_l2_improvement: Vec<f64>,
}

fn improvement(linear: f64, homogeneous: f64) -> f64 {
    if linear == 0.0 {
        0.0
    } else {
        (linear - homogeneous) / linear * 100.0
    }
}

#[allow(clippy::too_many_arguments)]
pub fn compare(
    plant: &LinearPlant,
    linear: &HomogeneousController,
    homogeneous: &HomogeneousController,
    disturbance: &Disturbance,
    t_final: f64,
    dt: f64,
    x0: &DVector<f64>,
    window: (f64, f64),
) -> Result<ComparisonReport, SimError> {
    let tr_lin = simulate(plant, linear, disturbance, t_final, dt, x0)?;
    let tr_hom = simulate(plant, homogeneous, disturbance, t_final, dt, x0)?;
    let m_lin = metrics(&tr_lin, window)?;
    let m_hom = metrics(&tr_hom, window)?;
    let state_linf = m_lin
        .states
        .iter()
        .zip(&m_hom.states)
        .map(|(l, h)| improvement(l.linf, h.linf))
        .collect();
    let state_l2 = m_lin
        .states
        .iter()
        .zip(&m_hom.states)
        .map(|(l, h)| improvement(l.l2, h.l2))
        .collect();
    let control_l2 = m_lin
        .controls
        .iter()
        .zip(&m_hom.controls)
        .map(|(l, h)| improvement(l.l2, h.l2))
        .collect();
    Ok(ComparisonReport {
        linear: m_lin,
        homogeneous: m_hom,
        state_linf_improvement: state_linf,
        state_l2_improvement: state_l2,
        control_l2_improvement: control_l2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::DEFAULT_NORM_FLOOR;
    use crate::dilation::Dilation;
    use crate::ellipsoid::{controller_from_certificate, min_trace_linear, SynthOptions};
    use crate::synthesis::solve_generator;

    fn simple_plant() -> (LinearPlant, HomogeneousController) {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let d = DMatrix::<f64>::identity(2, 2);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 4.0]));
        let gs = solve_generator(&a, &b).unwrap();
        let plant = LinearPlant::new(a, b, d, q).unwrap();
        let cert = min_trace_linear(&plant, &gs, &SynthOptions::default()).unwrap();
        let ctrl = controller_from_certificate(&gs, &cert, None).unwrap();
        (plant, ctrl)
    }

    #[test]
    fn pendulum_matrix_structure() {
        let (a, b) = build_pendulum(&PendulumParams::default());
        // Kinematic rows.
        assert_eq!(a.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(a.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(b[(0, 0)], 0.0);
        assert_eq!(b[(1, 0)], 0.0);
        // The arm angle does not feed back into the dynamics.
        assert_eq!(a[(2, 0)], 0.0);
        assert_eq!(a[(3, 0)], 0.0);
        // Controllable with full index under the chosen inertia convention.
        assert_eq!(numerics::controllability_index(&a, &b).unwrap(), 4);
    }

    #[test]
    fn zero_everything_stays_zero() {
        let (plant, ctrl) = simple_plant();
        let tr = simulate(
            &plant,
            &ctrl,
            &Disturbance::Zero { dim: 2 },
            1.0,
            1e-3,
            &DVector::zeros(2),
        )
        .unwrap();
        assert!(tr.x.iter().all(|x| x.norm() == 0.0));
        assert!(tr.u.iter().all(|u| u.norm() == 0.0));
    }

    #[test]
    fn stable_loop_decays_at_the_eigenvalue_rate() {
        let (plant, ctrl) = simple_plant();
        // Closed-loop matrix of the linear specialization.
        let k_total = ctrl.k0() + ctrl.k();
        let acl = &plant.a + &plant.b * k_total;
        let decay = acl
            .complex_eigenvalues()
            .iter()
            .map(|c| c.re)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(decay < 0.0, "closed loop must be stable");
        let x0 = DVector::from_vec(vec![1.0, -0.5]);
        let t_final = (1e-6f64.ln() / decay).max(5.0);
        let tr = simulate(&plant, &ctrl, &Disturbance::Zero { dim: 2 }, t_final, 1e-3, &x0)
            .unwrap();
        let final_norm = tr.x.last().unwrap().norm();
        assert!(
            final_norm <= 1e-6 * x0.norm() * 10.0,
            "||x(T)|| = {final_norm:.3e} after T = {t_final:.1}"
        );
    }

    #[test]
    fn reference_sinusoid_is_admissible() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, 1.0, 2.0]));
        let amp = DVector::from_vec(vec![0.2, 0.3, 0.3, 0.4]);
        let dist = Disturbance::Sinusoid {
            amplitude: amp.clone(),
            frequency: 0.5,
        };
        let peak = amp.dot(&(&q * &amp));
        assert!(peak <= 1.0, "peak w^T Q w = {peak}");
        let mut t = 0.0;
        while t < 30.0 {
            let w = dist.sample(t);
            assert!(w.dot(&(&q * &w)) <= 1.0 + 1e-12);
            t += 0.37;
        }
    }

    #[test]
    fn seeded_disturbance_is_pure_and_admissible() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let dist = Disturbance::seeded_admissible(42, 0.1, &q).unwrap();
        for k in 0..200 {
            let t = k as f64 * 0.013;
            let w1 = dist.sample(t);
            let w2 = dist.sample(t);
            assert_eq!(w1, w2);
            assert!(w1.dot(&(&q * &w1)) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn divergence_is_reported_with_time() {
        let a = DMatrix::from_row_slice(1, 1, &[5.0]);
        let b = DMatrix::from_row_slice(1, 1, &[1.0]);
        let d = DMatrix::from_row_slice(1, 1, &[1.0]);
        let q = DMatrix::from_element(1, 1, 1.0);
        let plant = LinearPlant::new(a, b, d, q).unwrap();
        // Destabilizing (positive-feedback) controller.
        let dil = Dilation::new(DMatrix::identity(1, 1), 0.0, None).unwrap();
        let ctrl = HomogeneousController::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            dil,
            0.0,
            DEFAULT_NORM_FLOOR,
        )
        .unwrap();
        let res = simulate(
            &plant,
            &ctrl,
            &Disturbance::Zero { dim: 1 },
            20.0,
            1e-2,
            &DVector::from_vec(vec![1.0]),
        );
        assert!(matches!(res, Err(SimError::Divergence { .. })));
    }

    #[test]
    fn metrics_constant_signal() {
        let len = 1000;
        let dt = 1e-3;
        let c = -2.5;
        let tr = Trajectory {
            t: (0..=len).map(|k| k as f64 * dt).collect(),
            x: (0..=len).map(|_| DVector::from_vec(vec![c])).collect(),
            u: (0..=len).map(|_| DVector::zeros(1)).collect(),
            w: (0..=len).map(|_| DVector::zeros(1)).collect(),
            hom_norm: vec![0.0; len + 1],
        };
        let m = metrics(&tr, (0.0, 1.0)).unwrap();
        assert!((m.states[0].linf - c.abs()).abs() < 1e-12);
        // L2 of a constant over a window of length L is |c| sqrt(L).
        let expected = c.abs() * (1.0 + dt).sqrt();
        assert!((m.states[0].l2 - expected).abs() < 0.01 * expected);
    }

    #[test]
    fn metrics_sine_energy() {
        let dt = 1e-4;
        let t_final = 2.0 * std::f64::consts::PI;
        let len = (t_final / dt) as usize;
        let tr = Trajectory {
            t: (0..=len).map(|k| k as f64 * dt).collect(),
            x: (0..=len)
                .map(|k| DVector::from_vec(vec![(k as f64 * dt).sin()]))
                .collect(),
            u: (0..=len).map(|_| DVector::zeros(1)).collect(),
            w: (0..=len).map(|_| DVector::zeros(1)).collect(),
            hom_norm: vec![0.0; len + 1],
        };
        let m = metrics(&tr, (0.0, t_final)).unwrap();
        let expected = std::f64::consts::PI.sqrt();
        assert!(
            (m.states[0].l2 - expected).abs() <= dt.sqrt(),
            "L2 = {:.6} vs sqrt(pi) = {expected:.6}",
            m.states[0].l2
        );
    }

    #[test]
    fn empty_window_is_an_error() {
        let (plant, ctrl) = simple_plant();
        let tr = simulate(
            &plant,
            &ctrl,
            &Disturbance::Zero { dim: 2 },
            1.0,
            1e-2,
            &DVector::zeros(2),
        )
        .unwrap();
        assert!(matches!(
            metrics(&tr, (5.0, 6.0)),
            Err(SimError::EmptyWindow(_, _))
        ));
    }

    #[test]
    fn identical_controllers_show_zero_improvement() {
        let (plant, ctrl) = simple_plant();
        let dist = Disturbance::Sinusoid {
            amplitude: DVector::from_vec(vec![0.3, 0.1]),
            frequency: 0.5,
        };
        let report = compare(
            &plant,
            &ctrl,
            &ctrl,
            &dist,
            10.0,
            1e-3,
            &DVector::from_vec(vec![0.1, 0.0]),
            (6.0, 10.0),
        )
        .unwrap();
        for imp in report
            .state_linf_improvement
            .iter()
            .chain(&report.state_l2_improvement)
        {
            assert!(imp.abs() < 1e-12);
        }
    }

    #[test]
    fn step_halving_shows_high_order_convergence() {
        let (plant, ctrl) = simple_plant();
        let dist = Disturbance::Sinusoid {
            amplitude: DVector::from_vec(vec![0.4, 0.2]),
            frequency: 0.5,
        };
        let x0 = DVector::from_vec(vec![0.4, -0.2]);
        let t_final = 2.0;
        let run = |dt: f64| {
            simulate(&plant, &ctrl, &dist, t_final, dt, &x0)
                .unwrap()
                .x
                .last()
                .unwrap()
                .clone()
        };
        let coarse = run(4e-3);
        let mid = run(2e-3);
        let fine = run(1e-3);
        let e1 = (&coarse - &fine).norm();
        let e2 = (&mid - &fine).norm();
        // Observed order >= 3.5 away from the norm floor.
        let order = (e1 / e2).log2();
        assert!(order >= 3.5, "observed order {order:.2} (e1 {e1:.3e}, e2 {e2:.3e})");
    }
}
