//! Single-lane ring-free platoon simulator.
//!
//! Vehicles update front to back from a snapshot of the previous tick, so
//! ordering within a tick never matters: every follower sees its leader's
//! state as of the last completed step. Integration is ballistic per tick
//! with exact handling of mid-tick stops, which keeps logged positions
//! consistent with logged speeds to machine precision.
//!
//! A run can be open loop (controllers fall back to their local target
//! heuristics) or closed loop: automated vehicles ping a corridor speed
//! planner, delayed segment estimates stream in, and the planner publishes
//! target-speed plans on a fixed cadence that controllers then query.

pub mod artifact;
pub mod leader;
pub mod scenario;

use thiserror::Error;

pub use artifact::{ControllerTraceRow, EventRow, RunArtifact, TrajectoryRow};
pub use leader::{gen_constant, gen_pulse, gen_stop_and_go, LeaderTrajectory};
pub use scenario::{BottleneckConfig, CutEvent, LeaderSource, Scenario, VehicleKind};

use crate::cfm::{idm_accel, idm_equilibrium_gap, CfmError, IdmParams};
use crate::control::acc::{
    acc_plant_accel, AccError, AccPlantConfig, AccSetpoints, GapBar, HeuristicPolicy,
    SetpointActuator,
};
use crate::control::accel::{AccelConfig, AccelController, LocalObservation};
use crate::control::lane_change::LaneChangeConfig;
use crate::planner::{PlannerError, SegmentEstimate, SpeedPlan, SpeedPlanner, VehiclePing};
use crate::units::mps_to_mph;

/// Cadence of automated-vehicle position/speed pings, s.
pub const PING_PERIOD_S: f64 = 1.0;
/// Cadence of the delayed corridor segment estimates, s.
pub const ESTIMATE_PERIOD_S: f64 = 60.0;
/// Length of the coarse segments those estimates cover, m.
pub const SOURCE_SEGMENT_M: f64 = 800.0;
/// Setpoint-press batch latency for the adaptive-cruise vehicles, s.
pub const PRESS_LATENCY_S: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("leader trajectory has no samples")]
    EmptyTrajectory,
    #[error("leader sample {index}: spacing {gap_s} s breaks the 10 Hz cadence")]
    BadCadence { index: usize, gap_s: f64 },
    #[error("leader sample {index}: negative speed {v_mps} m/s")]
    NegativeSpeed { index: usize, v_mps: f64 },
    #[error("scenario invalid: {0}")]
    BadScenario(String),
    #[error("{0}")]
    Parse(String),
    #[error(
        "collision at t = {t_s} s: {follower} closed to {gap_m:.3} m behind {leader}; \
         partial artifact retained for diagnosis"
    )]
    Collision {
        t_s: f64,
        follower: String,
        leader: String,
        gap_m: f64,
        partial: Box<RunArtifact>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Cfm(#[from] CfmError),
    #[error(transparent)]
    Acc(#[from] AccError),
}

/// Behavior behind one vehicle.
#[derive(Debug, Clone)]
enum Agent {
    /// Replays the leader profile (unless a bottleneck cap binds).
    Replay,
    /// Car-following human; also used for inserted cut-in vehicles.
    Human(IdmParams),
    /// Direct-acceleration automation.
    Accel(Box<AccelController>),
    /// Stock adaptive cruise driven through setpoint presses.
    Acc(Box<AccState>),
}

#[derive(Debug, Clone)]
struct AccState {
    plant: AccPlantConfig,
    policy: HeuristicPolicy,
    actuator: SetpointActuator,
}

/// One vehicle's live state. `x` is the front-bumper position.
#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: String,
    pub kind: VehicleKind,
    pub x: f64,
    pub v: f64,
    /// Acceleration applied on the last completed tick.
    pub a: f64,
    agent: Agent,
}

/// Gap (m) from follower `f` to leader `l` given vehicle length `len`.
fn gap(l_x: f64, f_x: f64, len: f64) -> f64 {
    l_x - len - f_x
}

/// Equilibrium following gap for each vehicle kind at cruise speed `v`:
/// the gap at which the agent's command is zero when speeds match.
fn equilibrium_gap(kind: VehicleKind, v: f64) -> Result<f64, SimError> {
    match kind {
        VehicleKind::Leader => Ok(0.0),
        VehicleKind::Human | VehicleKind::CutIn => {
            Ok(idm_equilibrium_gap(v, &IdmParams::default())?)
        }
        VehicleKind::AvAccel => {
            // Smallest gap where the safe speed is the cruise speed.
            let c = AccelConfig::default();
            Ok(c.s0 + 0.5 * v * v * (1.0 / -c.a_min - 1.0 / -c.a_lead_min))
        }
        VehicleKind::AvAcc => {
            let c = AccPlantConfig::default();
            Ok(GapBar::Bar1.time_gap_s() * v + c.d_off)
        }
    }
}

/// The simulator. Construct from a validated [`Scenario`], call
/// [`step`](Self::step) until done (or use [`run_scenario`]), then take the
/// artifact with [`into_artifact`](Self::into_artifact).
#[derive(Debug)]
pub struct Simulation {
    dt: f64,
    len: f64,
    tick: u64,
    n_ticks: u64,
    vehicles: Vec<Vehicle>,
    traj: LeaderTrajectory,
    pending: Vec<(u64, CutEvent)>,
    next_event: usize,
    planner: Option<SpeedPlanner>,
    plan: Option<SpeedPlan>,
    bottleneck: Option<BottleneckConfig>,
    cut_in_count: usize,
    artifact: RunArtifact,
    ping_ticks: u64,
    estimate_ticks: u64,
    plan_ticks: u64,
}

impl Simulation {
    pub fn new(sc: &Scenario) -> Result<Self, SimError> {
        sc.validate()?;
        let traj = match &sc.leader {
            LeaderSource::Constant { speed_mps } => leader::gen_constant(*speed_mps, sc.duration_s)?,
            LeaderSource::Pulse { v_eq_mps, dip_mps, period_s, start_s } => {
                leader::gen_pulse(*v_eq_mps, *dip_mps, *period_s, *start_s, sc.duration_s)?
            }
            LeaderSource::StopAndGo { v_high_mps, v_low_mps } => {
                leader::gen_stop_and_go(sc.seed, sc.duration_s, *v_high_mps, *v_low_mps)?
            }
            LeaderSource::File { path } => {
                LeaderTrajectory::read_csv(std::path::Path::new(path))?
            }
        };

        let v0 = traj.speed_at(0.0);
        let mut vehicles = Vec::with_capacity(sc.platoon.len() + 1);
        vehicles.push(Vehicle {
            id: "leader".into(),
            kind: VehicleKind::Leader,
            x: sc.leader_start_m,
            v: v0,
            a: 0.0,
            agent: Agent::Replay,
        });
        let mut human_idx = 0;
        let mut av_idx = 0;
        for (i, &kind) in sc.platoon.iter().enumerate() {
            let g = match &sc.initial_gaps_m {
                Some(gaps) => gaps[i],
                None => equilibrium_gap(kind, v0)?,
            };
            let x = vehicles.last().unwrap().x - g - sc.vehicle_length_m;
            let (id, agent) = match kind {
                VehicleKind::Human => {
                    let id = format!("human-{human_idx}");
                    human_idx += 1;
                    (id, Agent::Human(IdmParams::default()))
                }
                VehicleKind::AvAccel => {
                    let id = format!("av-{av_idx}");
                    av_idx += 1;
                    let ctrl =
                        AccelController::new(AccelConfig::default(), LaneChangeConfig::default(), sc.dt_s);
                    (id, Agent::Accel(Box::new(ctrl)))
                }
                VehicleKind::AvAcc => {
                    let id = format!("av-{av_idx}");
                    av_idx += 1;
                    let set = AccSetpoints {
                        speed_mph: mps_to_mph(v0).round() as i32,
                        gap_bar: GapBar::Bar1,
                    };
                    (
                        id,
                        Agent::Acc(Box::new(AccState {
                            plant: AccPlantConfig::default(),
                            policy: HeuristicPolicy::new(set),
                            actuator: SetpointActuator::new(set, PRESS_LATENCY_S),
                        })),
                    )
                }
                VehicleKind::Leader | VehicleKind::CutIn => unreachable!("rejected by validate"),
            };
            vehicles.push(Vehicle { id, kind, x, v: v0, a: 0.0, agent });
        }

        let mut pending: Vec<(u64, CutEvent)> = sc
            .events
            .iter()
            .map(|ev| ((ev.t_s() / sc.dt_s).round() as u64, ev.clone()))
            .collect();
        pending.sort_by_key(|(tick, _)| *tick);

        let planner = match &sc.planner {
            Some(cfg) => Some(SpeedPlanner::new(*cfg).map_err(SimError::Planner)?),
            None => None,
        };
        let plan_period = sc.planner.as_ref().map(|p| p.update_period_s).unwrap_or(60.0);

        let ticks_of = |period: f64| (period / sc.dt_s).round().max(1.0) as u64;
        let mut sim = Simulation {
            dt: sc.dt_s,
            len: sc.vehicle_length_m,
            tick: 0,
            n_ticks: (sc.duration_s / sc.dt_s).round() as u64,
            vehicles,
            traj,
            pending,
            next_event: 0,
            planner,
            plan: None,
            bottleneck: sc.bottleneck.clone(),
            cut_in_count: 0,
            artifact: RunArtifact { scenario_toml: sc.to_toml_string()?, ..Default::default() },
            ping_ticks: ticks_of(PING_PERIOD_S),
            estimate_ticks: ticks_of(ESTIMATE_PERIOD_S),
            plan_ticks: ticks_of(plan_period),
        };
        sim.record_states(0.0);
        Ok(sim)
    }

    pub fn time_s(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn done(&self) -> bool {
        self.tick >= self.n_ticks
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicle(&self, id: &str) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn current_plan(&self) -> Option<&SpeedPlan> {
        self.plan.as_ref()
    }

    pub fn into_artifact(self) -> RunArtifact {
        self.artifact
    }

    fn log_event(&mut self, t: f64, event: &str, subject: &str, detail: String) {
        self.artifact.events.push(EventRow {
            t_s: t,
            event: event.into(),
            subject: subject.into(),
            detail,
        });
    }

    fn record_states(&mut self, t: f64) {
        for v in &self.vehicles {
            self.artifact.trajectories.push(TrajectoryRow {
                vehicle_id: v.id.clone(),
                t_s: t,
                x_m: v.x,
                v_mps: v.v,
                a_mps2: v.a,
                kind: v.kind.label().into(),
                engaged: v.kind.is_av(),
            });
        }
    }

    fn apply_due_events(&mut self, t: f64) -> Result<(), SimError> {
        while self.next_event < self.pending.len() && self.pending[self.next_event].0 == self.tick {
            let ev = self.pending[self.next_event].1.clone();
            self.next_event += 1;
            match ev {
                CutEvent::CutIn { ahead_of, gap_m, speed_mps, .. } => {
                    let Some(idx) = self.vehicles.iter().position(|v| v.id == ahead_of) else {
                        return Err(SimError::BadScenario(format!(
                            "cut-in target '{ahead_of}' not present at t = {t} s"
                        )));
                    };
                    let x = self.vehicles[idx].x + gap_m + self.len;
                    if idx > 0 {
                        let front_gap = gap(self.vehicles[idx - 1].x, x, self.len);
                        if front_gap <= 0.0 {
                            return Err(SimError::BadScenario(format!(
                                "cut-in ahead of '{ahead_of}' at t = {t} s would overlap \
                                 '{}' (front gap {front_gap:.3} m)",
                                self.vehicles[idx - 1].id
                            )));
                        }
                    }
                    let id = format!("cutin-{}", self.cut_in_count);
                    self.cut_in_count += 1;
                    self.vehicles.insert(
                        idx,
                        Vehicle {
                            id: id.clone(),
                            kind: VehicleKind::CutIn,
                            x,
                            v: speed_mps,
                            a: 0.0,
                            agent: Agent::Human(IdmParams::default()),
                        },
                    );
                    self.log_event(
                        t,
                        "cut_in",
                        &id,
                        format!("inserted {gap_m} m ahead of {ahead_of} at {speed_mps} m/s"),
                    );
                }
                CutEvent::CutOut { vehicle, .. } => {
                    let Some(idx) = self.vehicles.iter().position(|v| v.id == vehicle) else {
                        return Err(SimError::BadScenario(format!(
                            "cut-out target '{vehicle}' not present at t = {t} s"
                        )));
                    };
                    self.vehicles.remove(idx);
                    self.log_event(t, "cut_out", &vehicle, "left the lane".into());
                }
            }
        }
        Ok(())
    }

    /// Ground-truth coarse-segment mean speeds, as the delayed estimate
    /// source would measure them at `t`. Empty segments read as free flow.
    fn measure_segments(&self, t: f64) -> Vec<SegmentEstimate> {
        let Some(planner) = &self.planner else { return Vec::new() };
        let cfg = planner.config();
        let n = ((cfg.corridor_end_m - cfg.corridor_start_m) / SOURCE_SEGMENT_M).ceil() as usize;
        (0..n)
            .map(|i| {
                let lo = cfg.corridor_start_m + i as f64 * SOURCE_SEGMENT_M;
                let hi = lo + SOURCE_SEGMENT_M;
                let (mut sum, mut count) = (0.0, 0u32);
                for v in &self.vehicles {
                    if v.x >= lo && v.x < hi {
                        sum += v.v;
                        count += 1;
                    }
                }
                SegmentEstimate {
                    segment_id: i as u32,
                    x_center_m: 0.5 * (lo + hi),
                    speed_mps: if count > 0 { sum / count as f64 } else { cfg.free_speed_mps },
                    measured_t_s: t,
                }
            })
            .collect()
    }

    fn communications(&mut self, t: f64) -> Result<(), SimError> {
        if self.planner.is_none() {
            return Ok(());
        }
        if self.tick % self.ping_ticks == 0 {
            let pings: Vec<VehiclePing> = self
                .vehicles
                .iter()
                .filter(|v| v.kind.is_av())
                .map(|v| VehiclePing {
                    vehicle_id: v.id.clone(),
                    timestamp_s: t,
                    position_m: v.x,
                    speed_mps: v.v,
                    lane: 0,
                })
                .collect();
            let planner = self.planner.as_mut().unwrap();
            for ping in pings {
                planner.ingest_ping(ping)?;
            }
        }
        if self.tick % self.estimate_ticks == 0 {
            let ests = self.measure_segments(t);
            let planner = self.planner.as_mut().unwrap();
            for est in ests {
                planner.ingest_estimate(est)?;
            }
            self.log_event(t, "estimate_measured", "source", format!("batch at {t} s"));
        }
        if self.tick % self.plan_ticks == 0 {
            let planner = self.planner.as_mut().unwrap();
            let data_through = planner
                .store()
                .estimate_batches_arrived_by(t)
                .last()
                .map(|(m, _)| format!("{m}"))
                .unwrap_or_else(|| "none".into());
            let plan = planner.update(t)?;
            self.artifact.plans.push(plan.clone());
            self.plan = Some(plan);
            self.log_event(t, "plan", "planner", format!("data_through_s = {data_through}"));
        }
        Ok(())
    }

    /// Advances one tick. Commands are computed for every vehicle from the
    /// previous tick's snapshot, then all vehicles integrate together.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.time_s();
        self.apply_due_events(t)?;
        self.communications(t)?;

        // Snapshot of (x, v, a) as of the last completed tick.
        let prev: Vec<(f64, f64, f64)> =
            self.vehicles.iter().map(|v| (v.x, v.v, v.a)).collect();

        // Pre-step overlap check: a follower may be driven to zero gap only
        // by integration, and that is caught right after it happens below; a
        // zero gap here means an event inserted an overlap.
        let mut commands = vec![0.0; self.vehicles.len()];
        for i in 0..self.vehicles.len() {
            let leader_prev = if i > 0 { Some(prev[i - 1]) } else { None };
            let (x, v, _) = prev[i];
            let veh = &mut self.vehicles[i];
            let a_cmd = match &mut veh.agent {
                Agent::Replay => (self.traj.speed_at(t + self.dt) - v) / self.dt,
                Agent::Human(p) => match leader_prev {
                    Some((lx, lv, _)) => {
                        let g = gap(lx, x, self.len);
                        idm_accel(g, v, v - lv, p)?
                    }
                    // Front of the line: free road.
                    None => idm_accel(1e12, v, 0.0, p)?,
                },
                Agent::Accel(ctrl) => {
                    let obs = match leader_prev {
                        Some((lx, lv, la)) => LocalObservation {
                            v,
                            minicar: true,
                            v_lead: lv,
                            a_lead: la,
                            h: gap(lx, x, self.len),
                            v_target: self.plan.as_ref().map(|p| p.query(x, 0)),
                        },
                        None => LocalObservation {
                            v,
                            minicar: false,
                            v_lead: 0.0,
                            a_lead: 0.0,
                            h: f64::INFINITY,
                            v_target: self.plan.as_ref().map(|p| p.query(x, 0)),
                        },
                    };
                    let comp = ctrl.step(&obs);
                    self.artifact.traces.entry(veh.id.clone()).or_default().push(
                        ControllerTraceRow {
                            t_s: t,
                            gap_m: obs.h,
                            v_mps: v,
                            a_safe: comp.a_safe.unwrap_or(f64::NAN),
                            a_target: comp.a_target,
                            a_anticipation: comp.a_mpc.unwrap_or(f64::NAN),
                            a_raw: comp.raw,
                            a_final: comp.filtered,
                            v_target_mps: comp.v_target,
                            filter_active: comp.lc_active,
                        },
                    );
                    comp.filtered
                }
                Agent::Acc(state) => {
                    let leader = leader_prev.and_then(|(lx, lv, _)| {
                        let d = gap(lx, x, self.len);
                        (d <= state.plant.detect_range).then_some((lv, d))
                    });
                    let mut presses = Vec::new();
                    if self.tick % self.ping_ticks == 0 {
                        state.policy.record_tick_speed(Some(v));
                        let v_target = self.plan.as_ref().map(|p| p.query(x, 0));
                        let desired = state.policy.decide(v, v_target);
                        if let Some(ev) = state.actuator.request(t, desired) {
                            presses.push(ev);
                        }
                    }
                    let set = state.actuator.applied_at(t);
                    let a = acc_plant_accel(v, leader, &set, &state.plant)?;
                    let id = veh.id.clone();
                    for ev in presses {
                        self.log_event(
                            t,
                            "press_batch",
                            &id,
                            format!(
                                "{} -> {} mph, bar {} -> {}, applies at {} s",
                                ev.speed_from_mph,
                                ev.speed_to_mph,
                                ev.gap_from,
                                ev.gap_to,
                                ev.t_apply_s
                            ),
                        );
                    }
                    a
                }
            };
            commands[i] = a_cmd;
        }

        // Bottleneck cap: inside the region, speed may not exceed
        // min(v_free, kappa / density) by the end of the tick.
        if let Some(b) = &self.bottleneck {
            let region_len = b.region_end_m - b.region_start_m;
            let inside: Vec<usize> = (0..prev.len())
                .filter(|&i| prev[i].0 >= b.region_start_m && prev[i].0 < b.region_end_m)
                .collect();
            if !inside.is_empty() {
                let density = inside.len() as f64 / region_len;
                let limit = (b.kappa_veh_per_s / density).min(b.v_free_mps);
                for &i in &inside {
                    let cap = (limit - prev[i].1) / self.dt;
                    if commands[i] > cap {
                        commands[i] = cap;
                    }
                }
            }
        }

        // Integrate: ballistic, stopping exactly if the command would drive
        // the speed through zero.
        for (veh, &a) in self.vehicles.iter_mut().zip(&commands) {
            let v_next = veh.v + a * self.dt;
            if v_next >= 0.0 {
                veh.x += veh.v * self.dt + 0.5 * a * self.dt * self.dt;
                veh.v = v_next;
            } else {
                veh.x += veh.v * veh.v / (2.0 * -a);
                veh.v = 0.0;
            }
            veh.a = a;
        }

        self.tick += 1;
        let t_next = self.time_s();
        self.record_states(t_next);

        for i in 1..self.vehicles.len() {
            let g = gap(self.vehicles[i - 1].x, self.vehicles[i].x, self.len);
            if g <= 0.0 {
                let follower = self.vehicles[i].id.clone();
                let leader = self.vehicles[i - 1].id.clone();
                self.log_event(
                    t_next,
                    "collision",
                    &follower,
                    format!("gap to {leader} reached {g:.3} m"),
                );
                return Err(SimError::Collision {
                    t_s: t_next,
                    follower,
                    leader,
                    gap_m: g,
                    partial: Box::new(std::mem::take(&mut self.artifact)),
                });
            }
        }
        Ok(())
    }
}

/// Runs a scenario to completion and returns the artifact.
pub fn run_scenario(sc: &Scenario) -> Result<RunArtifact, SimError> {
    let mut sim = Simulation::new(sc)?;
    while !sim.done() {
        sim.step()?;
    }
    Ok(sim.into_artifact())
}

/// Wall-clock stepping rate over `n_steps` ticks of `sc`, in steps/s,
/// with full artifact recording enabled.
pub fn benchmark_steps_per_sec(sc: &Scenario, n_steps: u64) -> Result<f64, SimError> {
    let mut sim = Simulation::new(sc)?;
    let start = std::time::Instant::now();
    for _ in 0..n_steps {
        if sim.done() {
            break;
        }
        sim.step()?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(n_steps as f64 / elapsed.max(1e-12))
}
