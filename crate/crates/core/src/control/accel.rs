//! Acceleration-based vehicle controller.
//!
//! The commanded acceleration is the minimum of three terms, clamped to the
//! actuator range:
//!
//! * a safety term that tracks the speed below which the ego can always stop
//!   behind a worst-case braking leader,
//! * a target term that relaxes toward the planner target speed (or, absent a
//!   plan, toward a slow-moving average of the leader speed), and
//! * an anticipation term that reacts to the leader's current acceleration
//!   with a piecewise braking/following law.
//!
//! With no detected leader only the target term applies. Output runs through
//! the lane-change recovery filter (see [`super::lane_change`]).

use serde::{Deserialize, Serialize};

use super::lane_change::{
    gap_discontinuity, LaneChangeConfig, LaneChangeFilter, LaneChangeInput,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccelConfig {
    /// Proportional gain on speed errors, 1/s.
    pub k: f64,
    /// Gain on the leader relative speed inside the anticipation term, s/m.
    pub k2: f64,
    /// Minimum standstill space gap, m.
    pub s0: f64,
    /// Lower command bound (maximum braking, negative), m/s^2.
    pub a_min: f64,
    /// Upper command bound, m/s^2.
    pub a_max: f64,
    /// Assumed worst-case leader braking (negative), m/s^2.
    pub a_lead_min: f64,
    /// Low-pass time constant for the observed leader acceleration, s.
    pub a_lead_filter_tau: f64,
    /// Time constant of the leader-speed average used as the target-speed
    /// fallback when no plan target is available, s.
    pub v_target_fallback_tau: f64,
}

impl Default for AccelConfig {
    fn default() -> Self {
        Self {
            k: 1.0,
            k2: 0.1,
            s0: 4.0,
            a_min: -3.0,
            a_max: 1.5,
            a_lead_min: -6.0,
            a_lead_filter_tau: 0.5,
            v_target_fallback_tau: 30.0,
        }
    }
}

/// Single-tick sensor snapshot.
///
/// `a_lead` is the raw leader acceleration estimate; [`AccelController::step`]
/// low-passes it internally for the safety term's rate computation. Leader
/// fields are meaningful only while `minicar` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalObservation {
    /// Ego speed, m/s.
    pub v: f64,
    /// A leader is detected within sensor range.
    pub minicar: bool,
    /// Leader speed, m/s.
    pub v_lead: f64,
    /// Leader acceleration estimate, m/s^2.
    pub a_lead: f64,
    /// Bumper-to-bumper space gap, m.
    pub h: f64,
    /// Planner target speed at the ego position, when available, m/s.
    pub v_target: Option<f64>,
}

/// Safe speed: the ego can stop with braking `|a_min|` while the leader
/// brakes at `|a_lead_min|`, keeping at least `s0` of gap.
pub fn safe_speed(h: f64, v_lead: f64, cfg: &AccelConfig) -> f64 {
    let brake = -cfg.a_min;
    let lead_brake = -cfg.a_lead_min;
    (2.0 * brake * (h - cfg.s0 + v_lead * v_lead / (2.0 * lead_brake))).max(0.0).sqrt()
}

/// Safety term: proportional tracking of the safe speed plus its rate of
/// change along the observed trajectory. Degenerates to maximum braking when
/// the gap has closed to the standstill margin.
pub fn safe_accel(obs: &LocalObservation, cfg: &AccelConfig) -> f64 {
    if obs.h <= cfg.s0 {
        return cfg.a_min; // emergency floor
    }
    let brake = -cfg.a_min;
    let lead_brake = -cfg.a_lead_min;
    let v_safe = safe_speed(obs.h, obs.v_lead, cfg);
    let h_dot = obs.v_lead - obs.v;
    let v_safe_dot = if v_safe > 1e-9 {
        brake * (h_dot + obs.v_lead * obs.a_lead / lead_brake) / v_safe
    } else {
        0.0
    };
    -cfg.k * (obs.v - v_safe) + v_safe_dot
}

/// Target term: relax toward the target speed.
pub fn target_accel(v: f64, v_target: f64, cfg: &AccelConfig) -> f64 {
    -cfg.k * (v - v_target)
}

/// Anticipation term: piecewise response to the leader's acceleration.
///
/// For a braking leader the branch is picked by the sign of
/// `P1 = a_min_brake - a_lead * v / v_lead` (is matching the leader's
/// proportional deceleration enough?) and `P2 = v_lead - v`; for a
/// non-braking leader by `P2` alone. Requires a detected leader and
/// `h > s0`; a stopped braking leader falls back to braking to a stop within
/// the available room.
pub fn mpc_anticipation_accel(obs: &LocalObservation, cfg: &AccelConfig) -> f64 {
    let (v, v_lead, a_lead) = (obs.v, obs.v_lead, obs.a_lead);
    let room = obs.h - cfg.s0;
    debug_assert!(room > 0.0, "anticipation term needs h > s0");
    if a_lead < 0.0 {
        if v_lead <= 1e-9 {
            // Leader already stopped: brake to a stop in the available room.
            return -v * v / (2.0 * room);
        }
        let a_min_brake = -(v * v / 2.0) / (room + 0.5 * v_lead * v_lead / (-a_lead));
        let p1 = a_min_brake - a_lead * v / v_lead;
        let p2 = v_lead - v;
        if p1 > 0.0 {
            a_min_brake
        } else if p2 >= 0.0 {
            a_lead * v / v_lead
        } else {
            a_lead - (v - v_lead) * (v - v_lead) / (2.0 * room)
        }
    } else {
        let p2 = v_lead - v;
        if p2 < 0.0 {
            a_lead - (v - v_lead) * (v - v_lead) / (2.0 * room)
        } else {
            cfg.a_max.min(a_lead * (1.0 + cfg.k2 * (v_lead - v)))
        }
    }
}

/// Per-tick component breakdown, for traces and tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelComponents {
    /// Safety term (None without a leader).
    pub a_safe: Option<f64>,
    /// Target term.
    pub a_target: f64,
    /// Anticipation term (None without a leader).
    pub a_mpc: Option<f64>,
    /// Min-composed and clamped raw command.
    pub raw: f64,
    /// Command after the lane-change recovery filter.
    pub filtered: f64,
    /// Target speed actually used, m/s.
    pub v_target: f64,
    /// Lane-change filter active this tick.
    pub lc_active: bool,
}

/// Min-composition of the three terms, clamped to the actuator range.
/// Without a leader only the target term applies.
pub fn commanded_accel(obs: &LocalObservation, cfg: &AccelConfig, v_target: f64) -> f64 {
    components(obs, cfg, v_target, obs.a_lead).raw
}

/// `a_lead_safety` is the leader-acceleration estimate fed to the safety
/// term's rate computation; [`AccelController::step`] passes a low-pass
/// version there while the anticipation term sees the raw estimate, so a
/// braking onset is never masked by smoothing lag.
fn components(
    obs: &LocalObservation,
    cfg: &AccelConfig,
    v_target: f64,
    a_lead_safety: f64,
) -> AccelComponents {
    let a_target = target_accel(obs.v, v_target, cfg);
    let (a_safe, a_mpc, raw) = if obs.minicar {
        if obs.h <= cfg.s0 {
            (Some(cfg.a_min), None, cfg.a_min)
        } else {
            let mut obs_safety = *obs;
            obs_safety.a_lead = a_lead_safety;
            let s = safe_accel(&obs_safety, cfg);
            let m = mpc_anticipation_accel(obs, cfg);
            (Some(s), Some(m), s.min(a_target).min(m))
        }
    } else {
        (None, None, a_target)
    };
    AccelComponents {
        a_safe,
        a_target,
        a_mpc,
        raw: raw.clamp(cfg.a_min, cfg.a_max),
        filtered: raw.clamp(cfg.a_min, cfg.a_max),
        v_target,
        lc_active: false,
    }
}

/// Stateful controller: low-pass filtering of the leader acceleration, the
/// target-speed fallback average, and the lane-change recovery filter.
#[derive(Debug, Clone)]
pub struct AccelController {
    cfg: AccelConfig,
    dt: f64,
    lc: LaneChangeFilter,
    lc_cfg: LaneChangeConfig,
    a_lead_filtered: Option<f64>,
    v_lead_avg: Option<f64>,
    prev_gap_dv: Option<(f64, f64)>,
}

impl AccelController {
    pub fn new(cfg: AccelConfig, lc_cfg: LaneChangeConfig, dt: f64) -> Self {
        Self {
            cfg,
            dt,
            lc: LaneChangeFilter::new(lc_cfg),
            lc_cfg,
            a_lead_filtered: None,
            v_lead_avg: None,
            prev_gap_dv: None,
        }
    }

    pub fn config(&self) -> &AccelConfig {
        &self.cfg
    }

    /// Process one tick: returns the command to apply plus the component
    /// breakdown for tracing.
    pub fn step(&mut self, obs: &LocalObservation) -> AccelComponents {
        let obs = *obs;
        let mut jumped = false;
        let mut a_lead_safety = obs.a_lead;
        if obs.minicar {
            // Low-pass the leader acceleration estimate used by the safety
            // rate term; the anticipation term keeps the raw value.
            let f = self.a_lead_filtered.get_or_insert(obs.a_lead);
            *f += (self.dt / self.cfg.a_lead_filter_tau) * (obs.a_lead - *f);
            a_lead_safety = *f;
            // Slow-moving leader speed average as the plan fallback.
            let avg = self.v_lead_avg.get_or_insert(obs.v_lead);
            *avg += (self.dt / self.cfg.v_target_fallback_tau) * (obs.v_lead - *avg);
            // Gap discontinuity detection against the previous tick.
            let dv = obs.v_lead - obs.v;
            if let Some((pg, pdv)) = self.prev_gap_dv {
                jumped = gap_discontinuity(obs.h, pg, pdv, self.dt, &self.lc_cfg);
            }
            self.prev_gap_dv = Some((obs.h, dv));
        } else {
            // Leader lost (out of range or cut-out): the next acquisition is a
            // discontinuity candidate.
            self.prev_gap_dv = None;
            self.a_lead_filtered = None;
            jumped = false;
        }
        let v_target = obs
            .v_target
            .or(self.v_lead_avg)
            .unwrap_or(obs.v);
        let mut comp = components(&obs, &self.cfg, v_target, a_lead_safety);
        let filtered = self.lc.step(&LaneChangeInput {
            raw_accel: comp.raw,
            gap: if obs.minicar { obs.h } else { f64::INFINITY },
            v: obs.v,
            dv: obs.v_lead - obs.v,
            gap_discontinuity: jumped && obs.minicar,
            dt: self.dt,
        });
        comp.filtered = filtered;
        comp.lc_active = self.lc.is_active();
        comp
    }
}
