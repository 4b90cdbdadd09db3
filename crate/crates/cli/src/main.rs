use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lfd_core::coefficients::{anisotropy_profile, ellipticity_floor, verify_structure, KernelSet};
use lfd_core::config::RunConfig;
use lfd_core::equilibrium::{evaluate_equilibrium, fit_fermi_dirac};
use lfd_core::experiment::execute;
use lfd_core::grid::{ball_fraction, norm_sq};
use lfd_core::linearized::LinearizedContext;
use lfd_core::{Error, Field, VelocityGrid};
use serde_json::json;

const EXIT_INVARIANT: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "lfd", version, about = "Landau-Fermi-Dirac velocity-space solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a TOML configuration and write its artifacts.
    Run {
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fit the Fermi-Dirac equilibrium with the given moments.
    Fit {
        #[arg(long)]
        rho: f64,
        #[arg(long = "E")]
        energy: f64,
        #[arg(long)]
        eps: f64,
        /// Momentum as `px,py,pz`.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.0, 0.0, 0.0])]
        p: Vec<f64>,
    },
    /// Estimate the spectral gap of the linearized operator.
    Gap {
        #[arg(long, default_value_t = 16)]
        seeds: u64,
        #[arg(long, default_value_t = 30)]
        iters: usize,
        #[arg(long = "N", default_value_t = 32)]
        n: usize,
        #[arg(long = "L", default_value_t = 8.0)]
        half_width: f64,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long = "E", default_value_t = 1.5)]
        energy: f64,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
    },
    /// Structural checks of the collision coefficients for a test profile.
    Verify {
        #[arg(long, value_enum, default_value_t = Profile::Gaussian)]
        profile: Profile,
        #[arg(long = "N", default_value_t = 64)]
        n: usize,
        #[arg(long = "L", default_value_t = 8.0)]
        half_width: f64,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        /// Radial range of the anisotropy profile along the first axis.
        #[arg(long, default_value_t = 1.5)]
        t_min: f64,
        #[arg(long, default_value_t = 6.0)]
        t_max: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// `exp(-|v|²)`.
    Gaussian,
    /// Indicator of the unit ball.
    Ball,
    /// Equilibrium with `ρ = 1, E = 3/2`.
    Equilibrium,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::NumericalAbort { .. } | Error::NonFinite { .. } | Error::NonConvergence { .. } => EXIT_NUMERICAL,
        _ => 1,
    }
}

fn print_json(value: &impl serde::Serialize) -> lfd_core::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(config: &Path, resume: Option<&Path>) -> Result<ExitCode, (u8, Error)> {
    let cfg = RunConfig::from_path(config).map_err(|e| (EXIT_CONFIG, e))?;
    let (report, dir) = execute(&cfg, Path::new("."), resume).map_err(|e| (exit_code(&e), e))?;
    for w in &report.summary.warnings {
        eprintln!("warning: {w}");
    }
    for v in &report.summary.verdicts {
        println!("{v}");
    }
    println!("artifacts in {}", dir.display());
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVARIANT)
    })
}

fn verify(profile: Profile, n: usize, half_width: f64, eps: f64, t_min: f64, t_max: f64) -> lfd_core::Result<()> {
    let grid = VelocityGrid::new(half_width, n, eps)?;
    let f = match profile {
        Profile::Gaussian => Field::from_fn(grid, |v| (-norm_sq(v)).exp()),
        Profile::Ball => ball_fraction(&grid, [0.0; 3], 1.0),
        Profile::Equilibrium => evaluate_equilibrium(&fit_fermi_dirac(1.0, [0.0; 3], 1.5, eps)?.params, &grid)?,
    };
    let kernels = KernelSet::new(&grid);
    let structure = verify_structure(&f, &kernels)?;
    let floor = ellipticity_floor(&f, &kernels)?;
    let profile_table = anisotropy_profile(&f, [1.0, 0.0, 0.0], t_min, t_max, 24)?;
    print_json(&json!({
        "grid": { "L": half_width, "N": n, "eps": eps },
        "structure": structure,
        "ellipticity": floor,
        "anisotropy": profile_table,
    }))
}

fn dispatch(cli: Cli) -> Result<ExitCode, (u8, Error)> {
    let other = |e: Error| (exit_code(&e), e);
    match cli.command {
        Command::Run { config, resume } => run(&config, resume.as_deref()),
        Command::Fit { rho, energy, eps, p } => {
            let report = fit_fermi_dirac(rho, [p[0], p[1], p[2]], energy, eps).map_err(other)?;
            print_json(&report).map_err(other)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Gap {
            seeds,
            iters,
            n,
            half_width,
            rho,
            energy,
            eps,
        } => {
            let grid = VelocityGrid::new(half_width, n, eps).map_err(other)?;
            let fit = fit_fermi_dirac(rho, [0.0; 3], energy, eps).map_err(other)?;
            let kernels = KernelSet::new(&grid);
            let ctx = LinearizedContext::new(fit.params, &kernels).map_err(other)?;
            let gap = ctx.estimate_gap(iters, seeds).map_err(other)?;
            print_json(&gap).map_err(other)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            profile,
            n,
            half_width,
            eps,
            t_min,
            t_max,
        } => {
            verify(profile, n, half_width, eps, t_min, t_max).map_err(other)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err((code, e)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
