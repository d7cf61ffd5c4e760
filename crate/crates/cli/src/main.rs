//! `ecmpr` — generate scenes, register point sets, and run the solver
//! comparison and rotation sweep from the command line.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 registration failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use ecmpr::ecm::CovarianceMode;
use ecmpr::harness::io::{ensure_dir, read_json, read_model_points, read_observations, write_json, write_scene};
use ecmpr::harness::{run_comparison, run_rotation_sweep, ComparisonConfig, SweepConfig};
use ecmpr::registration::ResultRecord;
use ecmpr::synthdata::{generate_scene, SceneSpec};
use ecmpr::{register, Error, RegistrationConfig, Solver};

const RESULT_FILE: &str = "result.json";

#[derive(Debug, Parser)]
#[command(name = "ecmpr", version, about = "Rigid 3D-2D point registration by expectation conditional maximization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene: model.csv, observations.csv and scene.json.
    Generate {
        /// Scene specification JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Register model points (x,y,z CSV) to image observations (u,v CSV).
    Register {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        /// Registration config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
        /// Directory receiving result.json.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run the {traversal, LSE} × {noisy, noise-free} comparison matrix.
    Compare {
        /// Comparison config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        covariance: Option<CovarianceArg>,
        /// Noise level of the noisy rows, pixels.
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Sweep the ground-truth rotation angle and aggregate accuracy per angle.
    Sweep {
        /// Sweep config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long)]
    solver: Option<SolverArg>,
    #[arg(long)]
    covariance: Option<CovarianceArg>,
}

impl SolverArgs {
    fn apply(&self, cfg: &mut RegistrationConfig) {
        if let Some(s) = self.solver {
            cfg.solver = s.into();
        }
        if let Some(c) = self.covariance {
            cfg.covariance_mode = c.into();
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Traversal,
    Lse,
}

impl From<SolverArg> for Solver {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Traversal => Solver::Traversal,
            SolverArg::Lse => Solver::Lse,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CovarianceArg {
    Iso,
    Aniso,
}

impl From<CovarianceArg> for CovarianceMode {
    fn from(c: CovarianceArg) -> Self {
        match c {
            CovarianceArg::Iso => CovarianceMode::Isotropic,
            CovarianceArg::Aniso => CovarianceMode::Anisotropic,
        }
    }
}

/// A failure mapped to its exit code.
enum Failure {
    Usage(String),
    Registration(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Registration(_) => 2,
        }
    }
}

/// Input and configuration problems are usage errors; anything raised while
/// solving is a registration failure.
fn classify(e: Error) -> Failure {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::InvalidConfig(_) | Error::InputShape(_) => Failure::Usage(e.to_string()),
        other => Failure::Registration(other.to_string()),
    }
}

/// Reads a config file, or returns the defaults. Errors name the flag and
/// show the expected schema with its default values.
fn load_config<T: DeserializeOwned + Serialize + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else { return Ok(T::default()) };
    read_json(path).map_err(|e| {
        let schema = serde_json::to_string_pretty(&T::default()).unwrap_or_default();
        Failure::Usage(format!("--config: {e}\nexpected schema (default values shown):\n{schema}"))
    })
}

fn check_sigma(sigma: Option<f64>) -> Result<(), Failure> {
    match sigma {
        Some(s) if !(s.is_finite() && s >= 0.0) => Err(Failure::Usage(format!("--noise-sigma: expected a finite value >= 0, got {s}"))),
        _ => Ok(()),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate { config, seed, noise_sigma, out_dir } => {
            check_sigma(noise_sigma)?;
            let mut spec: SceneSpec = load_config(config.as_deref())?;
            spec.seed = seed.unwrap_or(spec.seed);
            spec.noise_sigma = noise_sigma.unwrap_or(spec.noise_sigma);
            let scene = generate_scene(&spec).map_err(classify)?;
            let paths = write_scene(&out_dir, &scene, &spec).map_err(classify)?;
            println!("wrote {}, {}, {}", paths.model.display(), paths.observations.display(), paths.sidecar.display());
        }
        Command::Register { model, observations, config, solver, out_dir } => {
            let mut cfg: RegistrationConfig = load_config(config.as_deref())?;
            solver.apply(&mut cfg);
            let model_points = read_model_points(&model).map_err(classify)?;
            let obs = read_observations(&observations).map_err(classify)?;
            let result = register(&model_points, &obs, &cfg).map_err(classify)?;
            ensure_dir(&out_dir).map_err(classify)?;
            let path = out_dir.join(RESULT_FILE);
            write_json(&path, &ResultRecord::from(&result)).map_err(classify)?;
            println!(
                "{} solver: converged={} after {} iterations (residual {:.3e}); wrote {}",
                cfg.solver.name(),
                result.converged,
                result.iterations_used,
                result.convergence_residual,
                path.display()
            );
        }
        Command::Compare { config, seed, covariance, noise_sigma, out_dir } => {
            check_sigma(noise_sigma)?;
            let mut cfg: ComparisonConfig = load_config(config.as_deref())?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.noise_sigma = noise_sigma.unwrap_or(cfg.noise_sigma);
            if let Some(c) = covariance {
                cfg.registration.covariance_mode = c.into();
            }
            let report = run_comparison(&cfg).map_err(classify)?;
            report.write(&out_dir).map_err(classify)?;
            println!("{:<10} {:>6} {:>9} {:>8} {:>10} {:>11}", "solver", "sigma", "match %", "iters", "time (s)", "converged");
            for r in report.summaries() {
                println!(
                    "{:<10} {:>6.2} {:>9.1} {:>8.1} {:>10.4} {:>8}/{}",
                    r.solver.name(),
                    r.noise_sigma,
                    r.correct_match_pct,
                    r.iterations,
                    r.wall_time_s,
                    r.converged,
                    r.runs
                );
            }
            println!("wrote {}", out_dir.join("comparison.csv").display());
        }
        Command::Sweep { config, seed, solver, noise_sigma, out_dir } => {
            check_sigma(noise_sigma)?;
            let mut cfg: SweepConfig = load_config(config.as_deref())?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.scene.noise_sigma = noise_sigma.unwrap_or(cfg.scene.noise_sigma);
            solver.apply(&mut cfg.registration);
            let report = run_rotation_sweep(&cfg).map_err(classify)?;
            report.write(&out_dir).map_err(classify)?;
            for a in &report.angles {
                let pct = a.stat("correct_match_pct").map_or(f64::NAN, |s| s.mean);
                println!("{:>6.1}°  match {:>6.1}%  ({} ok, {} failed)", a.angle_deg, pct, a.count, a.failed);
            }
            println!("wrote {}", out_dir.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(m) | Failure::Registration(m)) = &f;
            let kind = if f.code() == 1 { "error" } else { "registration failed" };
            eprintln!("{kind}: {m}");
            ExitCode::from(f.code())
        }
    }
}

