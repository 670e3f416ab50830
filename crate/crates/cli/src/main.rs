//! `acopt`: run, validate and gradient-check Allen-Cahn control scenarios.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure.
//! `ACOPT_THREADS` caps the worker threads used for large grids.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acopt_core::scenario::{run_gradcheck, run_scenario, RunOptions, Scenario, ScenarioConfig};
use acopt_core::{Error, StepScheme};
use clap::{Parser, Subcommand};
use log::error;

#[derive(Parser)]
#[command(name = "acopt", version, about = "Optimal control of Allen-Cahn phase-field systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write CSV outputs.
    Run {
        config: PathBuf,
        /// Output directory (default: out/<scenario>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the paper_* resolution keys of the config.
        #[arg(long)]
        paper_scale: bool,
        /// Time-stepping scheme, overriding the config.
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<StepScheme>,
        /// Solve the state equation with f = 0 only.
        #[arg(long)]
        forward_only: bool,
    },
    /// Validate a config without solving.
    Check { config: PathBuf },
    /// Compare the adjoint gradient with finite differences and check Hessian symmetry.
    Gradcheck {
        config: PathBuf,
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<StepScheme>,
    },
}

fn parse_scheme(s: &str) -> Result<StepScheme, String> {
    s.parse::<StepScheme>().map_err(|_| format!("expected implicit or semi, got `{s}`"))
}

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;

fn exit_code(err: &Error) -> u8 {
    if err.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_SOLVER
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::ConfigValidation(format!("cannot read {}: {e}", path.display())))?;
    ScenarioConfig::parse(&text).map_err(|e| match e {
        Error::Config { line, message } => Error::Config {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("ACOPT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("ACOPT_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot configure thread pool: {e}"))
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Check { config } => {
            let cfg = load(&config)?;
            let sc = Scenario::build(&cfg)?;
            println!(
                "{}: ok ({}x{} nodes, {} steps, {} component(s))",
                cfg.scenario,
                sc.grid.nx,
                sc.grid.ny,
                sc.time.steps,
                sc.model.ncomp()
            );
            Ok(0)
        }
        Command::Gradcheck { config, scheme } => {
            let cfg = load(&config)?;
            let report = run_gradcheck(&cfg, scheme)?;
            println!("{:>4} {:>24} {:>24} {:>12}", "dir", "finite_difference", "adjoint", "rel_error");
            for r in &report.gradient {
                println!(
                    "{:>4} {:>24.16e} {:>24.16e} {:>12.3e}",
                    r.direction, r.finite_difference, r.adjoint, r.relative_error
                );
            }
            println!("{:>4} {:>24} {:>24} {:>12}", "pair", "<Hu,v>", "<u,Hv>", "rel_error");
            for r in &report.symmetry {
                println!("{:>4} {:>24.16e} {:>24.16e} {:>12.3e}", r.pair, r.uhv, r.vhu, r.relative_error);
            }
            let worst_g = report.gradient.iter().map(|r| r.relative_error).fold(0.0, f64::max);
            let worst_s = report.symmetry.iter().map(|r| r.relative_error).fold(0.0, f64::max);
            println!("max gradient error {worst_g:.3e}, max symmetry error {worst_s:.3e}");
            Ok(0)
        }
        Command::Run {
            config,
            out,
            paper_scale,
            scheme,
            forward_only,
        } => {
            let cfg = load(&config)?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from("out").join(&cfg.scenario));
            let opts = RunOptions {
                out_dir,
                paper_scale,
                scheme,
                forward_only,
            };
            let report = run_scenario(&cfg, &opts)?;
            println!("scenario {} ({})", report.scenario, report.mode);
            if let Some(j) = report.objective {
                println!("objective {j:e}");
            }
            if let Some(g) = report.grad_norm {
                println!("gradient norm {g:e}");
            }
            if let Some(h) = report.homotopy {
                println!("homotopy {h:?}");
            }
            println!("PDE solves {}", report.forward_solves);
            println!("outputs in {}", opts.out_dir.display());
            Ok(if report.success { 0 } else { EXIT_SOLVER })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        error!("{msg}");
        return ExitCode::from(EXIT_CONFIG);
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
