//! Command-line driver for the `wtmoments` solvers.
//!
//! Every subcommand writes into `--out` and finishes with `manifest.json`
//! listing the artifacts (with SHA-256 digests), the checks it ran and any
//! error. Exit codes: 0 success, 1 a check failed or the numerics errored,
//! 2 the configuration could not be used.

pub mod checks;
mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wtmoments_core::kinetic::EvolveControls;
use wtmoments_core::ode::IntegratorControls;
use wtmoments_core::quadrature::QuadSettings;

use crate::config::Config;
use crate::manifest::{ErrorRecord, Manifest, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToleranceProfile {
    Fast,
    Strict,
}

impl ToleranceProfile {
    pub fn quadrature(self) -> QuadSettings {
        match self {
            ToleranceProfile::Fast => QuadSettings {
                rel_tol: 1e-7,
                abs_tol: 0.0,
                min_level: 3,
                max_level: 8,
            },
            ToleranceProfile::Strict => QuadSettings::default(),
        }
    }

    pub fn evolve(self) -> EvolveControls {
        let (rtol, theta_tol) = match self {
            ToleranceProfile::Fast => (1e-8, 1e-7),
            ToleranceProfile::Strict => (1e-12, 1e-10),
        };
        EvolveControls {
            integrator: IntegratorControls {
                rtol,
                ..IntegratorControls::default()
            },
            checkpoints: Vec::new(),
            theta_tol,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ToleranceProfile::Fast => "fast",
            ToleranceProfile::Strict => "strict",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wtmoments", version, about = "Kinetic equation and moment hierarchy solvers for capillary wave turbulence")]
pub struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(long, env = "WTMOMENTS_CONFIG", global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, env = "WTMOMENTS_OUT", default_value = "wtmoments-out", global = true)]
    pub out: PathBuf,

    #[arg(long, env = "WTMOMENTS_SEED", default_value_t = 42, global = true)]
    pub seed: u64,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, env = "WTMOMENTS_THREADS", global = true)]
    pub threads: Option<usize>,

    #[arg(long, env = "WTMOMENTS_TOLERANCE_PROFILE", value_enum, default_value_t = ToleranceProfile::Strict, global = true)]
    pub tolerance_profile: ToleranceProfile,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Damping and forcing rates on the grid, with the consistency check.
    Rates,
    /// Time-dependent kinetic equation.
    Ke,
    /// Moment hierarchy from the configured initial state.
    Moments,
    /// Growth of the intensity fluctuation from a deterministic start.
    CapillaryFluctuations,
    /// Bump in the deviation field travelling to higher orders.
    TransportWave,
    /// Capillary rate constant and the damping prefactor.
    Constants,
    /// All acceptance checks.
    Validate,
    /// Monte-Carlo cross-checks of the angular weight and the rates.
    Oracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Rates => "rates",
            Command::Ke => "ke",
            Command::Moments => "moments",
            Command::CapillaryFluctuations => "capillary-fluctuations",
            Command::TransportWave => "transport-wave",
            Command::Constants => "constants",
            Command::Validate => "validate",
            Command::Oracle => "oracle",
        }
    }
}

/// Settings every subcommand sees.
pub struct Env {
    pub config: Config,
    pub seed: u64,
    pub profile: ToleranceProfile,
}

/// Runs one invocation and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let config = match &cli.config {
        Some(path) => match Config::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return 2;
            }
        },
        None => Config::default(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        // Fails only if a pool already exists, as in repeated in-process runs.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut run = match Run::new(&cli.out) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 2;
        }
    };
    let env = Env {
        config,
        seed: cli.seed,
        profile: cli.tolerance_profile,
    };
    let start = Instant::now();
    let result = commands::dispatch(cli.command, &env, &mut run);
    let mut errors = Vec::new();
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
        errors.push(ErrorRecord {
            kind: error_kind(e),
            message: format!("{e:#}"),
        });
    }
    for c in &run.checks {
        println!("{}", c.line());
    }
    let ok = result.is_ok() && run.all_passed();
    let manifest = Manifest {
        tool: "wtmoments".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cli.command.name().into(),
        seed: cli.seed,
        threads: cli.threads,
        tolerance_profile: cli.tolerance_profile.name().into(),
        config: env.config,
        wall_time_s: start.elapsed().as_secs_f64(),
        status: if result.is_err() { "error" } else if ok { "ok" } else { "check-failed" }.into(),
        checks: run.checks.clone(),
        artifacts: run.artifacts.clone(),
        errors,
    };
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(anyhow::Error::from)
        .and_then(|t| Ok(std::fs::write(run.dir().join("manifest.json"), t + "\n")?));
    if let Err(e) = written {
        eprintln!("error: cannot write manifest: {e:#}");
        return 1;
    }
    i32::from(!ok)
}

fn error_kind(e: &anyhow::Error) -> String {
    use wtmoments_core::WtError;
    match e.downcast_ref::<WtError>() {
        Some(WtError::Domain(_)) => "domain",
        Some(WtError::InvalidState(_)) => "invalid-state",
        Some(WtError::Quadrature { .. }) => "quadrature",
        Some(WtError::RootFinding(_)) => "root-finding",
        Some(WtError::StepUnderflow { .. }) => "step-underflow",
        Some(WtError::AtNode { .. }) => "at-node",
        Some(WtError::Parse(_)) => "parse",
        Some(WtError::Io(_)) => "io",
        None => "other",
    }
    .into()
}
