//! flowsim: scenario runs, KPI sweeps, macroscopic analysis, and platoon
//! trajectory optimization from one binary.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 collision
//! during simulation, 3 infeasible optimization (including a failed
//! gradient cross-check).

mod commands;
mod config;

use clap::{Parser, Subcommand};
use flowsim_core::kpi::KpiError;
use flowsim_core::optim::OptimError;
use flowsim_core::sim::SimError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Collision(String),
    Infeasible(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Collision(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Collision(m) | CliError::Infeasible(m) => m,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match &e {
            SimError::Collision { t_s, follower, leader, gap_m, .. } => CliError::Collision(
                format!("collision at t = {t_s:.2} s: {follower} into {leader} (gap {gap_m:.3} m)"),
            ),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        match &e {
            OptimError::Infeasible(_)
            | OptimError::InfeasibleStart { .. }
            | OptimError::IterationLimit(_)
            | OptimError::SingularKkt { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<KpiError> for CliError {
    fn from(e: KpiError) -> Self {
        match e {
            KpiError::Sim(inner) => inner.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<flowsim_core::edie::EdieError> for CliError {
    fn from(e: flowsim_core::edie::EdieError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<flowsim_core::energy::EnergyError> for CliError {
    fn from(e: flowsim_core::energy::EnergyError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "flowsim", version, about = "Traffic platoon simulation and control toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifact directory.
    Simulate {
        /// Run config (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a scenarios x variants KPI matrix with per-cell resume.
    Sweep {
        /// Sweep spec (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Discard existing cell markers and recompute everything.
        #[arg(long)]
        fresh: bool,
    },
    /// Aggregate a run artifact into macroscopic field CSVs and heatmaps.
    Macro {
        /// Artifact directory written by `simulate`.
        #[arg(long)]
        artifact: PathBuf,
        /// Time box size, s.
        #[arg(long, default_value_t = 10.0)]
        h_t: f64,
        /// Space box size, m.
        #[arg(long, default_value_t = 200.0)]
        h_x: f64,
        /// Energy model class for the fuel fields.
        #[arg(long, default_value = "midsize sedan")]
        energy_class: String,
        /// Output directory (defaults to <artifact>/macro).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a platoon trajectory optimization or roll out the
    /// receding-horizon gap controller.
    Optimize {
        /// Problem config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Check adjoint gradients against central finite differences on
        /// control meshes of 10, 20, and 40 pieces, then exit.
        #[arg(long)]
        grad_check: bool,
    },
    /// Generate a synthetic leader speed profile CSV.
    GenLeader {
        /// Profile kind: constant, pulse, or stop_and_go.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300.0)]
        duration_s: f64,
        /// Cruise speed (constant, pulse), m/s.
        #[arg(long, default_value_t = 25.0)]
        speed_mps: f64,
        /// High speed for stop_and_go, m/s.
        #[arg(long, default_value_t = 28.0)]
        v_high_mps: f64,
        /// Low speed for stop_and_go, m/s.
        #[arg(long, default_value_t = 8.0)]
        v_low_mps: f64,
        /// Dip depth for pulse, m/s.
        #[arg(long, default_value_t = 5.0)]
        dip_mps: f64,
        /// Dip length for pulse, s.
        #[arg(long, default_value_t = 30.0)]
        period_s: f64,
        /// Dip start for pulse, s.
        #[arg(long, default_value_t = 30.0)]
        start_s: f64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config } => commands::simulate(&config),
        Command::Sweep { config, fresh } => commands::sweep(&config, fresh),
        Command::Macro { artifact, h_t, h_x, energy_class, out } => {
            commands::macro_fields(&artifact, h_t, h_x, &energy_class, out.as_deref())
        }
        Command::Optimize { config, grad_check } => commands::optimize(&config, grad_check),
        Command::GenLeader {
            kind,
            seed,
            duration_s,
            speed_mps,
            v_high_mps,
            v_low_mps,
            dip_mps,
            period_s,
            start_s,
            out,
        } => commands::gen_leader(
            &kind, seed, duration_s, speed_mps, v_high_mps, v_low_mps, dip_mps, period_s, start_s,
            &out,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
