//! Run artifacts: everything a finished run writes to disk.
//!
//! One run produces one directory containing the scenario echo, vehicle
//! trajectories, published plans, the event log, and per-AV controller
//! traces. Floats are written in shortest round-trip form, so identical runs
//! produce byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::planner::SpeedPlan;

/// One vehicle state sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub vehicle_id: String,
    pub t_s: f64,
    pub x_m: f64,
    pub v_mps: f64,
    pub a_mps2: f64,
    pub kind: String,
    /// Whether an automation controller was actively commanding this tick
    /// (false for humans, the leader, and cut-in drones).
    pub engaged: bool,
}

/// One logged simulation event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub t_s: f64,
    pub event: String,
    pub subject: String,
    pub detail: String,
}

/// Per-tick internals of one direct-acceleration AV, for post-hoc audit of
/// which term was binding and what the lane-change filter did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerTraceRow {
    pub t_s: f64,
    pub gap_m: f64,
    pub v_mps: f64,
    pub a_safe: f64,
    pub a_target: f64,
    pub a_anticipation: f64,
    pub a_raw: f64,
    pub a_final: f64,
    pub v_target_mps: f64,
    pub filter_active: bool,
}

/// Complete record of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunArtifact {
    /// Scenario echo (exact TOML used).
    pub scenario_toml: String,
    pub trajectories: Vec<TrajectoryRow>,
    pub plans: Vec<SpeedPlan>,
    pub events: Vec<EventRow>,
    /// Keyed by vehicle id.
    pub traces: BTreeMap<String, Vec<ControllerTraceRow>>,
}

impl RunArtifact {
    /// Rows for one vehicle, in time order.
    pub fn vehicle_rows(&self, id: &str) -> Vec<&TrajectoryRow> {
        self.trajectories.iter().filter(|r| r.vehicle_id == id).collect()
    }

    /// Distinct vehicle ids in first-seen order.
    pub fn vehicle_ids(&self) -> Vec<String> {
        let mut ids = Vec::new();
        for r in &self.trajectories {
            if !ids.contains(&r.vehicle_id) {
                ids.push(r.vehicle_id.clone());
            }
        }
        ids
    }

    /// Writes the artifact directory, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("scenario.toml"), &self.scenario_toml)?;

        let mut tw = csv::Writer::from_path(dir.join("trajectories.csv"))?;
        for row in &self.trajectories {
            tw.serialize(row)?;
        }
        tw.flush()?;

        let mut pw = csv::Writer::from_path(dir.join("plans.csv"))?;
        for plan in &self.plans {
            plan.write_csv(&mut pw).map_err(SimError::Planner)?;
        }
        pw.flush()?;

        let mut ew = csv::Writer::from_path(dir.join("events.csv"))?;
        for row in &self.events {
            ew.serialize(row)?;
        }
        ew.flush()?;

        for (id, rows) in &self.traces {
            let mut cw = csv::Writer::from_path(dir.join(format!("controller_trace_{id}.csv")))?;
            for row in rows {
                cw.serialize(row)?;
            }
            cw.flush()?;
        }
        Ok(())
    }

    /// Reads an artifact directory written by [`write_dir`](Self::write_dir).
    pub fn read_dir(dir: &Path) -> Result<Self, SimError> {
        let scenario_toml = std::fs::read_to_string(dir.join("scenario.toml"))?;

        let mut trajectories = Vec::new();
        let mut tr = csv::Reader::from_path(dir.join("trajectories.csv"))?;
        for row in tr.deserialize::<TrajectoryRow>() {
            trajectories.push(row?);
        }

        let plans_path = dir.join("plans.csv");
        let plans = if plans_path.exists() {
            SpeedPlan::read_csv(&plans_path).map_err(SimError::Planner)?
        } else {
            Vec::new()
        };

        let mut events = Vec::new();
        let events_path = dir.join("events.csv");
        if events_path.exists() {
            let mut er = csv::Reader::from_path(events_path)?;
            for row in er.deserialize::<EventRow>() {
                events.push(row?);
            }
        }

        let mut traces = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name
                .strip_prefix("controller_trace_")
                .and_then(|s| s.strip_suffix(".csv"))
            {
                let mut rows = Vec::new();
                let mut cr = csv::Reader::from_path(entry.path())?;
                for row in cr.deserialize::<ControllerTraceRow>() {
                    rows.push(row?);
                }
                traces.insert(id.to_string(), rows);
            }
        }

        Ok(RunArtifact { scenario_toml, trajectories, plans, events, traces })
    }
}
