//! Run scenarios: platoon layout, leader source, events, and options.
//!
//! A scenario is a declarative TOML document describing one simulation run.
//! Validation happens up front so a bad configuration fails before any
//! stepping starts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::planner::PlannerConfig;

/// Standstill margin used when sanity-checking cut-in events, m. Matches the
/// tightest standstill gap any shipped controller will try to hold.
pub const MIN_CUT_IN_GAP_M: f64 = 4.0;

/// What drives a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    /// Front vehicle replaying the leader profile.
    Leader,
    /// Car-following human driver.
    Human,
    /// Automated vehicle running the direct-acceleration controller.
    AvAccel,
    /// Automated vehicle driving a stock adaptive cruise plant through
    /// setpoint presses.
    AvAcc,
    /// Vehicle inserted by a cut-in event; follows the car ahead like a
    /// human driver from its insertion speed onward.
    CutIn,
}

impl VehicleKind {
    pub fn label(&self) -> &'static str {
        match self {
            VehicleKind::Leader => "leader",
            VehicleKind::Human => "human",
            VehicleKind::AvAccel => "av_accel",
            VehicleKind::AvAcc => "av_acc",
            VehicleKind::CutIn => "cut_in",
        }
    }

    pub fn is_av(&self) -> bool {
        matches!(self, VehicleKind::AvAccel | VehicleKind::AvAcc)
    }
}

/// Where the leader speed profile comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum LeaderSource {
    /// Constant speed.
    Constant { speed_mps: f64 },
    /// Cruise with one raised-cosine dip.
    Pulse {
        v_eq_mps: f64,
        dip_mps: f64,
        period_s: f64,
        start_s: f64,
    },
    /// Seeded stop-and-go cycles between a high and a low speed.
    StopAndGo { v_high_mps: f64, v_low_mps: f64 },
    /// Replay a 10 Hz CSV file.
    File { path: String },
}

/// Speed-limiting region modelling a capacity drop: inside the region,
/// speed is capped at `kappa / density` (and at `v_free`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckConfig {
    pub region_start_m: f64,
    pub region_end_m: f64,
    /// Capacity-like constant, veh/s; the cap is `kappa / density`.
    pub kappa_veh_per_s: f64,
    pub v_free_mps: f64,
}

/// Scripted lane-change disturbances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutEvent {
    /// Insert a vehicle `gap_m` ahead of `ahead_of` at `speed_mps`.
    CutIn {
        t_s: f64,
        ahead_of: String,
        gap_m: f64,
        speed_mps: f64,
    },
    /// Remove `vehicle` from the lane.
    CutOut { t_s: f64, vehicle: String },
}

impl CutEvent {
    pub fn t_s(&self) -> f64 {
        match self {
            CutEvent::CutIn { t_s, .. } | CutEvent::CutOut { t_s, .. } => *t_s,
        }
    }
}

fn default_dt() -> f64 {
    0.1
}

fn default_vehicle_length() -> f64 {
    4.5
}

fn default_leader_start() -> f64 {
    0.0
}

/// One complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub duration_s: f64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_vehicle_length")]
    pub vehicle_length_m: f64,
    #[serde(default = "default_leader_start")]
    pub leader_start_m: f64,
    pub leader: LeaderSource,
    /// Vehicles behind the leader, front to back.
    pub platoon: Vec<VehicleKind>,
    /// Optional initial gap override per platoon entry (m); defaults to each
    /// vehicle's equilibrium gap at the leader's starting speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_gaps_m: Option<Vec<f64>>,
    /// Present only for closed-loop runs with the corridor speed planner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bottleneck: Option<BottleneckConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<CutEvent>,
}

impl Scenario {
    /// Checks structural consistency; every entry point into the simulator
    /// calls this first.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::BadScenario(msg));
        if !(self.duration_s > 0.0) {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.dt_s > 0.0) {
            return bad(format!("dt_s must be positive, got {}", self.dt_s));
        }
        // dt must divide the 0.1 s leader sampling so replay stays aligned.
        let ratio = super::leader::SAMPLE_DT_S / self.dt_s;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
            return bad(format!("dt_s must evenly divide 0.1 s sampling, got {}", self.dt_s));
        }
        if !(self.vehicle_length_m > 0.0) {
            return bad("vehicle_length_m must be positive".into());
        }
        for (i, k) in self.platoon.iter().enumerate() {
            if matches!(k, VehicleKind::Leader | VehicleKind::CutIn) {
                return bad(format!(
                    "platoon entry {i} may not be '{}'; the leader is implicit and cut-ins \
                     come from events",
                    k.label()
                ));
            }
        }
        if let Some(gaps) = &self.initial_gaps_m {
            if gaps.len() != self.platoon.len() {
                return bad(format!(
                    "initial_gaps_m has {} entries for {} platoon vehicles",
                    gaps.len(),
                    self.platoon.len()
                ));
            }
            if let Some(g) = gaps.iter().find(|g| !(**g > 0.0)) {
                return bad(format!("initial gaps must be positive, got {g}"));
            }
        }
        for (i, ev) in self.events.iter().enumerate() {
            if ev.t_s() < 0.0 || ev.t_s() > self.duration_s {
                return bad(format!("event {i} time {} outside the run horizon", ev.t_s()));
            }
            match ev {
                CutEvent::CutIn { gap_m, speed_mps, .. } => {
                    if *gap_m <= MIN_CUT_IN_GAP_M {
                        return bad(format!(
                            "event {i}: cut-in gap {gap_m} m is at or under the {MIN_CUT_IN_GAP_M} m \
                             standstill margin; the insertion would start already in violation",
                        ));
                    }
                    if *speed_mps < 0.0 {
                        return bad(format!("event {i}: cut-in speed must be non-negative"));
                    }
                }
                CutEvent::CutOut { vehicle, .. } => {
                    if vehicle == "leader" {
                        return bad(format!("event {i}: the leader cannot cut out"));
                    }
                }
            }
        }
        if let Some(p) = &self.planner {
            p.validate().map_err(SimError::Planner)?;
        }
        if let Some(b) = &self.bottleneck {
            if b.region_end_m <= b.region_start_m {
                return bad("bottleneck region must have positive length".into());
            }
            if !(b.kappa_veh_per_s > 0.0) || !(b.v_free_mps > 0.0) {
                return bad("bottleneck kappa and v_free must be positive".into());
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let sc: Scenario =
            toml::from_str(text).map_err(|e| SimError::Parse(format!("scenario TOML: {e}")))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> Result<String, SimError> {
        toml::to_string_pretty(self).map_err(|e| SimError::Parse(format!("scenario TOML: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Stop-and-go platoon: one direct-acceleration AV behind the leader,
    /// then `n_humans` car-followers.
    pub fn shockwave(seed: u64, n_humans: usize, av_first: bool) -> Self {
        let mut platoon = Vec::new();
        if av_first {
            platoon.push(VehicleKind::AvAccel);
        }
        platoon.extend(std::iter::repeat(VehicleKind::Human).take(n_humans));
        Scenario {
            name: format!("shockwave-seed{seed}"),
            duration_s: 600.0,
            dt_s: 0.1,
            seed,
            vehicle_length_m: 4.5,
            leader_start_m: 0.0,
            leader: LeaderSource::StopAndGo { v_high_mps: 28.0, v_low_mps: 8.0 },
            platoon,
            initial_gaps_m: None,
            planner: None,
            bottleneck: None,
            events: Vec::new(),
        }
    }

    /// Constant-speed cruise; useful for neutrality and equilibrium checks.
    pub fn freeflow(speed_mps: f64, platoon: Vec<VehicleKind>, duration_s: f64) -> Self {
        Scenario {
            name: "freeflow".into(),
            duration_s,
            dt_s: 0.1,
            seed: 0,
            vehicle_length_m: 4.5,
            leader_start_m: 0.0,
            leader: LeaderSource::Constant { speed_mps },
            platoon,
            initial_gaps_m: None,
            planner: None,
            bottleneck: None,
            events: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scenario {
        Scenario::shockwave(1, 5, true)
    }

    #[test]
    fn toml_round_trip() {
        let mut sc = base();
        sc.events.push(CutEvent::CutIn {
            t_s: 30.0,
            ahead_of: "av-0".into(),
            gap_m: 65.0,
            speed_mps: 20.0,
        });
        sc.events.push(CutEvent::CutOut { t_s: 90.0, vehicle: "cutin-0".into() });
        sc.bottleneck = Some(BottleneckConfig {
            region_start_m: 3000.0,
            region_end_m: 3500.0,
            kappa_veh_per_s: 0.6,
            v_free_mps: 30.0,
        });
        let text = sc.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn rejects_bad_dt() {
        let mut sc = base();
        sc.dt_s = 0.07;
        assert!(matches!(sc.validate(), Err(SimError::BadScenario(_))));
        sc.dt_s = 0.05;
        assert!(sc.validate().is_ok());
        sc.dt_s = 0.2; // coarser than the leader sampling
        assert!(sc.validate().is_err());
    }

    #[test]
    fn rejects_cut_in_at_or_under_standstill_margin() {
        let mut sc = base();
        sc.events.push(CutEvent::CutIn {
            t_s: 10.0,
            ahead_of: "av-0".into(),
            gap_m: 4.0,
            speed_mps: 20.0,
        });
        assert!(sc.validate().is_err());
        sc.events.clear();
        sc.events.push(CutEvent::CutIn {
            t_s: 10.0,
            ahead_of: "av-0".into(),
            gap_m: 4.5,
            speed_mps: 20.0,
        });
        assert!(sc.validate().is_ok());
    }

    #[test]
    fn rejects_mismatched_initial_gaps() {
        let mut sc = base();
        sc.initial_gaps_m = Some(vec![50.0; 2]);
        assert!(sc.validate().is_err());
        sc.initial_gaps_m = Some(vec![50.0; sc.platoon.len()]);
        assert!(sc.validate().is_ok());
        sc.initial_gaps_m = Some(vec![-1.0; sc.platoon.len()]);
        assert!(sc.validate().is_err());
    }

    #[test]
    fn rejects_explicit_leader_in_platoon() {
        let mut sc = base();
        sc.platoon.push(VehicleKind::Leader);
        assert!(sc.validate().is_err());
    }

    #[test]
    fn rejects_event_outside_horizon() {
        let mut sc = base();
        sc.events.push(CutEvent::CutOut { t_s: 1e6, vehicle: "human-1".into() });
        assert!(sc.validate().is_err());
    }
}
