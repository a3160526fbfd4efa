//! End-to-end tests of the file-driven front end: output files, exit-code
//! mapping, round-trips and byte-level determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::DVector;

use hiem::cli::{
    cmd_design, cmd_norm, cmd_pendulum, cmd_simulate, cmd_verify, CliError, ControllerFile,
    DesignMode, DisturbanceSpec, ProblemFile, SimulationSettings, SolverSettings,
};

fn temp_dir(tag: &str) -> PathBuf {
    let dir = tempfile::Builder::new()
        .prefix(&format!("hiem-{tag}-"))
        .tempdir()
        .expect("tempdir");
    dir.keep()
}

fn double_integrator_problem() -> ProblemFile {
    ProblemFile {
        a: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        b: vec![vec![0.0], vec![1.0]],
        d: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        q: vec![vec![4.0, 0.0], vec![0.0, 4.0]],
        mu: Some(-0.5),
        rho: Some(1.0),
        u_bar: None,
        k_fixed: None,
        solver: SolverSettings::default(),
        simulation: SimulationSettings {
            t_final: 5.0,
            dt: 1e-3,
            x0: Some(vec![0.1, 0.1]),
            steady_fraction: 0.4,
            disturbance: Some(DisturbanceSpec::Sinusoid {
                amplitude: vec![0.2, 0.3],
                frequency: 0.5,
            }),
            ..Default::default()
        },
    }
}

fn write_problem(dir: &Path, problem: &ProblemFile) -> PathBuf {
    let path = dir.join("problem.json");
    fs::write(&path, serde_json::to_string_pretty(problem).unwrap()).unwrap();
    path
}

#[test]
fn design_linear_writes_all_outputs() {
    let dir = temp_dir("design");
    let problem = write_problem(&dir, &double_integrator_problem());
    cmd_design(&problem, DesignMode::Linear, &dir).unwrap();
    for name in ["controller.json", "certificate.json", "manifest.json", "design.log"] {
        assert!(dir.join(name).exists(), "{name} missing");
    }
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["family"], "linear");
    assert!(cert["margins"]["w_block"].as_f64().unwrap() >= -1e-7);
    assert!(cert["margins"]["x_pd"].as_f64().unwrap() > 0.0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tool"], "hiem");
    assert!(manifest["tolerances"]["margin_check"].as_f64().is_some());
}

#[test]
fn upgrade_at_degree_zero_matches_linear_output() {
    let dir_lin = temp_dir("lin");
    let dir_up = temp_dir("up");
    let mut problem = double_integrator_problem();
    problem.mu = Some(0.0);
    let p1 = write_problem(&dir_lin, &problem);
    let p2 = write_problem(&dir_up, &problem);
    cmd_design(&p1, DesignMode::Linear, &dir_lin).unwrap();
    cmd_design(&p2, DesignMode::Upgrade, &dir_up).unwrap();
    let lin = fs::read(dir_lin.join("controller.json")).unwrap();
    let up = fs::read(dir_up.join("controller.json")).unwrap();
    assert_eq!(lin, up, "controller files must be identical at degree zero");
}

#[test]
fn homogeneous_mode_without_disturbance_generator_is_infeasible() {
    let dir = temp_dir("nog0w");
    // A skew disturbance column that the structure matrix cannot track.
    let mut problem = double_integrator_problem();
    problem.d = vec![vec![1.0], vec![1.0]];
    problem.q = vec![vec![1.0]];
    problem.mu = Some(-0.5);
    let path = write_problem(&dir, &problem);
    match cmd_design(&path, DesignMode::Homogeneous, &dir) {
        Err(e @ CliError::Infeasible(_)) => assert_eq!(e.exit_code(), 2),
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn missing_mu_is_an_input_error() {
    let dir = temp_dir("nomu");
    let mut problem = double_integrator_problem();
    problem.mu = None;
    let path = write_problem(&dir, &problem);
    match cmd_design(&path, DesignMode::Homogeneous, &dir) {
        Err(e @ CliError::Input(_)) => assert_eq!(e.exit_code(), 1),
        other => panic!("expected input error, got {other:?}"),
    }
}

#[test]
fn simulate_zero_case_writes_zero_rows() {
    let dir = temp_dir("simzero");
    let mut problem = double_integrator_problem();
    problem.simulation.disturbance = Some(DisturbanceSpec::Zero);
    problem.simulation.x0 = Some(vec![0.0, 0.0]);
    problem.simulation.t_final = 1.0;
    let path = write_problem(&dir, &problem);
    cmd_design(&path, DesignMode::Linear, &dir).unwrap();
    cmd_simulate(&path, &dir.join("controller.json"), &dir).unwrap();
    let csv = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "t,x1,x2,u1,w1,w2,homnorm");
    for line in lines {
        let mut fields = line.split(',');
        let _t = fields.next().unwrap();
        for v in fields {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "nonzero state in {line}");
        }
    }
    assert!(dir.join("metrics.txt").exists());
}

#[test]
fn simulate_rerun_is_byte_identical() {
    let dir = temp_dir("simdet");
    let mut problem = double_integrator_problem();
    problem.simulation.disturbance = Some(DisturbanceSpec::SeededRandomAdmissible {
        seed: 7,
        hold: 0.1,
    });
    let path = write_problem(&dir, &problem);
    cmd_design(&path, DesignMode::Linear, &dir).unwrap();
    let out1 = dir.join("run1");
    let out2 = dir.join("run2");
    cmd_simulate(&path, &dir.join("controller.json"), &out1).unwrap();
    cmd_simulate(&path, &dir.join("controller.json"), &out2).unwrap();
    assert_eq!(
        fs::read(out1.join("trajectory.csv")).unwrap(),
        fs::read(out2.join("trajectory.csv")).unwrap()
    );
    assert_eq!(
        fs::read(out1.join("metrics.txt")).unwrap(),
        fs::read(out2.join("metrics.txt")).unwrap()
    );
}

#[test]
fn verify_pipeline_roundtrip() {
    let dir = temp_dir("verify");
    let path = write_problem(&dir, &double_integrator_problem());
    cmd_design(&path, DesignMode::Homogeneous, &dir).unwrap();
    cmd_verify(
        &dir.join("controller.json"),
        &dir.join("certificate.json"),
        2000,
        42,
    )
    .unwrap();
}

#[test]
fn verify_rejects_corrupted_gain() {
    let dir = temp_dir("corrupt");
    let path = write_problem(&dir, &double_integrator_problem());
    cmd_design(&path, DesignMode::Linear, &dir).unwrap();
    // Flip the sign of the feedback gain.
    let ctrl_path = dir.join("controller.json");
    let mut ctrl: ControllerFile =
        serde_json::from_str(&fs::read_to_string(&ctrl_path).unwrap()).unwrap();
    for row in &mut ctrl.k {
        for v in row {
            *v = -*v;
        }
    }
    fs::write(&ctrl_path, serde_json::to_string_pretty(&ctrl).unwrap()).unwrap();
    match cmd_verify(&ctrl_path, &dir.join("certificate.json"), 2000, 42) {
        Err(e @ CliError::Verification(_)) => {
            assert_eq!(e.exit_code(), 4);
            let msg = e.to_string();
            assert!(msg.contains("x =") && msg.contains("w ="), "counterexample missing: {msg}");
        }
        other => panic!("expected verification failure, got {other:?}"),
    }
}

#[test]
fn verify_zero_samples_is_an_input_error() {
    let dir = temp_dir("nosamples");
    let path = write_problem(&dir, &double_integrator_problem());
    cmd_design(&path, DesignMode::Linear, &dir).unwrap();
    match cmd_verify(&dir.join("controller.json"), &dir.join("certificate.json"), 0, 1) {
        Err(e @ CliError::Input(_)) => assert_eq!(e.exit_code(), 1),
        other => panic!("expected input error, got {other:?}"),
    }
}

#[test]
fn controller_file_roundtrip_preserves_evaluation() {
    let dir = temp_dir("roundtrip");
    let path = write_problem(&dir, &double_integrator_problem());
    cmd_design(&path, DesignMode::Homogeneous, &dir).unwrap();
    let file = ControllerFile::load(&dir.join("controller.json")).unwrap();
    let ctrl1 = file.build().unwrap();
    // Serialize again and rebuild; evaluations must agree to 1e-12.
    let text = serde_json::to_string(&ControllerFile::from_controller(&ctrl1)).unwrap();
    let ctrl2: ControllerFile = serde_json::from_str(&text).unwrap();
    let ctrl2 = ctrl2.build().unwrap();
    for k in 0..200 {
        let x = DVector::from_vec(vec![(k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()]);
        let u1 = ctrl1.eval_u(&x);
        let u2 = ctrl2.eval_u(&x);
        assert!((u1 - &u2).norm() <= 1e-12 * (1.0 + u2.norm()));
    }
}

#[test]
fn norm_subcommand_evaluates() {
    let dir = temp_dir("norm");
    let path = write_problem(&dir, &double_integrator_problem());
    cmd_design(&path, DesignMode::Homogeneous, &dir).unwrap();
    cmd_norm(&dir.join("controller.json"), "0.3,-0.2").unwrap();
    assert!(matches!(
        cmd_norm(&dir.join("controller.json"), "0.3,-0.2,1.0"),
        Err(CliError::Input(_))
    ));
}

#[test]
fn pendulum_emitter_produces_solvable_problems() {
    let dir = temp_dir("pendulum");
    let demo = dir.join("demo.json");
    cmd_pendulum(&demo, false, None).unwrap();
    let problem = ProblemFile::load(&demo).unwrap();
    let plant = problem.plant().unwrap();
    assert_eq!(plant.n(), 4);
    assert_eq!(problem.mu, Some(-0.7));
    // The hardware-rig variant carries the fixed hand-tuned gain.
    let rig = dir.join("rig.json");
    cmd_pendulum(&rig, true, None).unwrap();
    let problem = ProblemFile::load(&rig).unwrap();
    assert_eq!(problem.k_fixed.as_ref().unwrap()[0].len(), 4);
    assert_eq!(problem.q, vec![vec![1.0]]);
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_hiem");
    let dir = temp_dir("bin");
    // Unreadable problem file -> input error (1).
    let out = Command::new(exe)
        .args(["design", dir.join("missing.json").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Valid design through the binary -> success.
    let problem = write_problem(&dir, &double_integrator_problem());
    let out = Command::new(exe)
        .args([
            "design",
            problem.to_str().unwrap(),
            "--mode",
            "linear",
            "-o",
            dir.join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("out/controller.json").exists());
}

#[test]
fn binary_design_is_deterministic() {
    let exe = env!("CARGO_BIN_EXE_hiem");
    let dir = temp_dir("bindet");
    let problem = write_problem(&dir, &double_integrator_problem());
    for run in ["a", "b"] {
        let out = Command::new(exe)
            .args([
                "design",
                problem.to_str().unwrap(),
                "--mode",
                "homogeneous",
                "-o",
                dir.join(run).to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(
        fs::read(dir.join("a/controller.json")).unwrap(),
        fs::read(dir.join("b/controller.json")).unwrap()
    );
    assert_eq!(
        fs::read(dir.join("a/certificate.json")).unwrap(),
        fs::read(dir.join("b/certificate.json")).unwrap()
    );
}
