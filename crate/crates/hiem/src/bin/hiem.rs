//! Command-line front end for the homogeneous invariant-ellipsoid
//! synthesis pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hiem::cli::{self, DesignMode};

#[derive(Parser)]
#[command(
    name = "hiem",
    version,
    about = "Generalized-homogeneous state feedback via minimal invariant/attractive ellipsoids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the design pipeline on a problem file and write
    /// controller.json / certificate.json / manifest.json.
    Design {
        /// Problem file (JSON).
        problem: PathBuf,
        /// Design family: linear | homogeneous | upgrade | refit.
        #[arg(long, default_value = "linear")]
        mode: String,
        /// Output directory.
        #[arg(long, short = 'o', default_value = "out")]
        out_dir: PathBuf,
    },
    /// Simulate a stored controller against a problem file's plant and
    /// disturbance; writes trajectory.csv and metrics.txt.
    Simulate {
        /// Problem file (JSON).
        problem: PathBuf,
        /// Controller file written by `design`.
        controller: PathBuf,
        /// Output directory.
        #[arg(long, short = 'o', default_value = "out")]
        out_dir: PathBuf,
    },
    /// Re-verify a certificate: recomputed margins plus a Monte-Carlo
    /// sweep of the boundary derivative.
    Verify {
        /// Controller file.
        controller: PathBuf,
        /// Certificate file.
        certificate: PathBuf,
        /// Number of Monte-Carlo samples.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Seed of the sweep.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Evaluate the canonical homogeneous norm of one state vector.
    Norm {
        /// Controller file.
        controller: PathBuf,
        /// Comma-separated state vector, e.g. "0.1,0.2,0,0".
        #[arg(long)]
        x: String,
    },
    /// Write a ready-to-run rotary-pendulum problem file.
    Pendulum {
        /// Output path.
        #[arg(long, short = 'o', default_value = "pendulum.json")]
        out: PathBuf,
        /// Emit the hardware-rig variant (scalar disturbance channel and a
        /// fixed hand-tuned gain) instead of the simulation fixture.
        #[arg(long)]
        experiment: bool,
        /// Override the total-inertia determinant.
        #[arg(long)]
        jt: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design {
            problem,
            mode,
            out_dir,
        } => mode
            .parse::<DesignMode>()
            .and_then(|m| cli::cmd_design(&problem, m, &out_dir)),
        Command::Simulate {
            problem,
            controller,
            out_dir,
        } => cli::cmd_simulate(&problem, &controller, &out_dir),
        Command::Verify {
            controller,
            certificate,
            samples,
            seed,
        } => cli::cmd_verify(&controller, &certificate, samples, seed),
        Command::Norm { controller, x } => cli::cmd_norm(&controller, &x),
        Command::Pendulum {
            out,
            experiment,
            jt,
        } => cli::cmd_pendulum(&out, experiment, jt),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
