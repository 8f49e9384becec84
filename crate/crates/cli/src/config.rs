//! Structured-text configuration for the command-line front end.
//!
//! Every command takes a TOML file whose schema is one of the structs here;
//! loaded configs are archived verbatim into the output directory so a run
//! can always be reproduced from its artifacts alone.

use crate::CliError;
use flowsim_core::kpi::Variant;
use flowsim_core::planner::PlannerConfig;
use flowsim_core::sim::{
    gen_constant, gen_pulse, gen_stop_and_go, LeaderTrajectory, Scenario, VehicleKind,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn default_energy_class() -> String {
    "midsize sedan".into()
}

fn default_av_period() -> usize {
    1
}

/// Controller variant placed into the scenario platoon: every
/// `av_period`-th slot from the front becomes `kind`, plus an optional
/// speed-planner hookup for closed-loop variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    pub kind: VehicleKind,
    #[serde(default = "default_av_period")]
    pub av_period: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerSpec>,
}

impl VariantSpec {
    pub fn resolve(&self) -> Result<Variant, CliError> {
        if !self.kind.is_av() {
            return Err(CliError::Config(format!(
                "variant {}: kind {} is not an AV controller",
                self.name,
                self.kind.label()
            )));
        }
        let planner = match &self.planner {
            None => None,
            Some(p) => p.resolve()?,
        };
        Ok(Variant {
            name: self.name.clone(),
            controller: self.kind,
            av_period: self.av_period,
            planner,
        })
    }
}

/// Planner selection by name: `none` runs open loop, `corridor` attaches
/// the corridor speed planner (with explicit params, or its defaults).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PlannerConfig>,
}

impl PlannerSpec {
    pub fn resolve(&self) -> Result<Option<PlannerConfig>, CliError> {
        match self.name.as_str() {
            "none" => Ok(None),
            "corridor" => Ok(Some(self.params.clone().unwrap_or_default())),
            other => Err(CliError::Config(format!(
                "unknown planner variant {other:?} (expected \"none\" or \"corridor\")"
            ))),
        }
    }
}

/// One simulation run: a scenario file plus optional controller/planner
/// overrides, a seed, and where the artifact goes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_energy_class")]
    pub energy_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<VariantSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerSpec>,
}

impl RunConfig {
    /// Loads the config and builds the concrete scenario to run: the
    /// scenario file with the controller variant applied (if any), the
    /// planner overridden (if requested), and the seed overridden (if set).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if !cfg.scenario.exists() {
            return Err(CliError::Config(format!(
                "scenario file {} does not exist",
                cfg.scenario.display()
            )));
        }
        Ok(cfg)
    }

    pub fn build_scenario(&self) -> Result<Scenario, CliError> {
        let mut sc = Scenario::load(&self.scenario)?;
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(ctrl) = &self.controller {
            let mut variant = ctrl.resolve()?;
            // A top-level planner spec applies to the variant unless the
            // variant carries its own.
            if variant.planner.is_none() {
                if let Some(p) = &self.planner {
                    variant.planner = p.resolve()?;
                }
            }
            sc = variant.apply(&sc, sc.seed)?;
            sc.name = format!("{}-{}", sc.name, ctrl.name);
        } else if let Some(p) = &self.planner {
            sc.planner = p.resolve()?;
        }
        Ok(sc)
    }
}

/// A KPI sweep: scenarios x variants x seeds, with per-cell resume markers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    pub scenarios: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub variants: Vec<VariantSpec>,
    #[serde(default = "default_energy_class")]
    pub energy_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let spec: SweepSpec = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if spec.scenarios.is_empty() {
            return Err(CliError::Config("sweep lists no scenarios".into()));
        }
        if spec.seeds.is_empty() {
            return Err(CliError::Config("sweep lists no seeds".into()));
        }
        for p in &spec.scenarios {
            if !p.exists() {
                return Err(CliError::Config(format!(
                    "scenario file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(spec)
    }
}

/// Leader profile source for optimization problems and `gen-leader`:
/// either a CSV file or a named synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_mps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_high_mps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_low_mps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dip_mps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_s: Option<f64>,
}

impl LeaderSpec {
    pub fn build(&self) -> Result<LeaderTrajectory, CliError> {
        if let Some(file) = &self.file {
            return Ok(LeaderTrajectory::read_csv(file)?);
        }
        let kind = self.kind.as_deref().ok_or_else(|| {
            CliError::Config("leader needs either file = ... or kind = ...".into())
        })?;
        let duration = self.duration_s.unwrap_or(300.0);
        match kind {
            "constant" => Ok(gen_constant(self.speed_mps.unwrap_or(25.0), duration)?),
            "pulse" => Ok(gen_pulse(
                self.v_high_mps.or(self.speed_mps).unwrap_or(25.0),
                self.dip_mps.unwrap_or(5.0),
                self.period_s.unwrap_or(30.0),
                self.start_s.unwrap_or(30.0),
                duration,
            )?),
            "stop_and_go" => Ok(gen_stop_and_go(
                self.seed.unwrap_or(0),
                duration,
                self.v_high_mps.unwrap_or(28.0),
                self.v_low_mps.unwrap_or(8.0),
            )?),
            other => Err(CliError::Config(format!(
                "unknown leader kind {other:?} (expected constant, pulse, or stop_and_go)"
            ))),
        }
    }
}

/// Platoon trajectory optimization problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpSpec {
    pub platoon: usize,
    /// Platoon slots that are automated (front to back, 0-based).
    pub avs: Vec<usize>,
    pub horizon_s: f64,
    pub pieces: usize,
    #[serde(default)]
    pub iterations: usize,
    /// Optimize AVs one at a time front to back before the joint pass.
    #[serde(default)]
    pub sequential: bool,
}

/// Receding-horizon controller rollout behind the replayed leader.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSpec {
    /// Ego start relative to the leader's start (negative = behind), m.
    pub x0_m: f64,
    pub v0_mps: f64,
    pub horizon_steps: usize,
    pub dt_s: f64,
    pub v_limit_mps: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub min_gap_m: f64,
    pub steps: usize,
}

/// Optimization command config: a leader profile plus exactly one of the
/// two problem modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSpec {
    pub leader: LeaderSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocp: Option<OcpSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpc: Option<MpcSpec>,
}

impl OptimizeSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let spec: OptimizeSpec = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        match (&spec.ocp, &spec.mpc) {
            (Some(_), None) | (None, Some(_)) => Ok(spec),
            (Some(_), Some(_)) => {
                Err(CliError::Config("config sets both [ocp] and [mpc]; pick one".into()))
            }
            (None, None) => Err(CliError::Config("config needs an [ocp] or [mpc] table".into())),
        }
    }
}

/// Output root: `$FLOWSIM_OUT` if set, `./runs` otherwise.
pub fn out_root() -> PathBuf {
    std::env::var_os("FLOWSIM_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Archives the exact config text into the output directory.
pub fn archive_config(dir: &Path, source: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let text = std::fs::read_to_string(source)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", source.display())))?;
    std::fs::write(dir.join("config.toml"), text)
        .map_err(|e| CliError::Config(format!("cannot archive config: {e}")))?;
    Ok(())
}
