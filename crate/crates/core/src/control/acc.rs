//! Adaptive-cruise-control vehicle model.
//!
//! Vehicles without an acceleration interface are driven through their stock
//! ACC: a policy chooses a speed setting (mph) and a gap bar, a button-press
//! actuator applies setting changes after a short latency, and a two-mode
//! plant turns the applied setpoints into acceleration:
//!
//! * speed mode: `a = k_p (v_ref - v)`,
//! * gap mode (leader within range): `a = k_g (d - g_ref v - d_off) + k_v (v_l - v)`,
//!
//! composed by a min so the gap mode can only slow the vehicle down relative
//! to its speed setting. Requested speed settings are clipped to a band
//! around the recent average speed before actuation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{mph_to_mps, mps_to_mph};

/// Lowest speed setting accepted by the ACC, mph.
pub const SPEED_SETTING_MIN_MPH: f64 = 20.0;
/// Highest speed setting accepted by the ACC, mph.
pub const SPEED_SETTING_MAX_MPH: f64 = 73.0;

#[derive(Debug, Error, PartialEq)]
pub enum AccError {
    #[error("speed setting {0} mph outside [{SPEED_SETTING_MIN_MPH}, {SPEED_SETTING_MAX_MPH}]")]
    BadSpeedSetting(i32),
}

/// Headway bar positions exposed by the ACC interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GapBar {
    Bar1,
    Bar2,
    Bar3,
}

impl GapBar {
    /// Desired time gap for this bar, s.
    pub fn time_gap_s(self) -> f64 {
        match self {
            GapBar::Bar1 => 1.2,
            GapBar::Bar2 => 1.5,
            GapBar::Bar3 => 2.0,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            GapBar::Bar1 => 1,
            GapBar::Bar2 => 2,
            GapBar::Bar3 => 3,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(GapBar::Bar1),
            2 => Some(GapBar::Bar2),
            3 => Some(GapBar::Bar3),
            _ => None,
        }
    }
}

/// The pair of settings the driver interface exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccSetpoints {
    pub speed_mph: i32,
    pub gap_bar: GapBar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccPlantConfig {
    /// Speed-mode gain, 1/s.
    pub k_p: f64,
    /// Gap-mode position gain, 1/s^2.
    pub k_g: f64,
    /// Gap-mode relative-speed gain, 1/s.
    pub k_v: f64,
    /// Standstill offset in the desired gap, m.
    pub d_off: f64,
    /// Distance below which the gap mode engages, m.
    pub gap_mode_range: f64,
    /// Sensor range for leader detection, m.
    pub detect_range: f64,
    /// Plant acceleration limits, m/s^2.
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for AccPlantConfig {
    fn default() -> Self {
        Self {
            k_p: 0.4,
            k_g: 0.1,
            k_v: 0.5,
            d_off: 3.0,
            gap_mode_range: 120.0,
            detect_range: 80.0,
            a_min: -3.5,
            a_max: 2.0,
        }
    }
}

/// Plant acceleration for ego speed `v` (m/s), an optional leader
/// `(v_lead m/s, distance m)`, and the applied setpoints.
pub fn acc_plant_accel(
    v: f64,
    leader: Option<(f64, f64)>,
    set: &AccSetpoints,
    cfg: &AccPlantConfig,
) -> Result<f64, AccError> {
    if !(SPEED_SETTING_MIN_MPH..=SPEED_SETTING_MAX_MPH).contains(&(set.speed_mph as f64)) {
        return Err(AccError::BadSpeedSetting(set.speed_mph));
    }
    let v_ref = mph_to_mps(set.speed_mph as f64);
    let a_speed = cfg.k_p * (v_ref - v);
    let a = match leader {
        Some((v_lead, d)) if d < cfg.gap_mode_range => {
            let desired = set.gap_bar.time_gap_s() * v + cfg.d_off;
            let a_gap = cfg.k_g * (d - desired) + cfg.k_v * (v_lead - v);
            a_speed.min(a_gap)
        }
        _ => a_speed,
    };
    Ok(a.clamp(cfg.a_min, cfg.a_max))
}

/// Clip a requested speed setting (mph) to the band
/// `[mean - 15, mean + 5]` around the average of the recent valid speeds,
/// then to the absolute setting range. Zero and missing speeds are omitted
/// from the average; with no valid speeds returns `None` (callers hold the
/// previous setting).
pub fn clip_speed_setting(action_mph: f64, recent_mph: &[Option<f64>]) -> Option<f64> {
    let valid: Vec<f64> = recent_mph
        .iter()
        .flatten()
        .copied()
        .filter(|&s| s > 0.0)
        .collect();
    if valid.is_empty() {
        return None;
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    let clipped = action_mph.clamp(mean - 15.0, mean + 5.0);
    Some(clipped.clamp(SPEED_SETTING_MIN_MPH, SPEED_SETTING_MAX_MPH))
}

/// Number of recent ticks whose speeds feed the clipping average.
pub const CLIP_HISTORY_TICKS: usize = 10;

/// Rule-based setpoint policy: track the planner target speed, and open the
/// gap when the plan anticipates a slowdown. Stands in for a learned policy
/// behind the same interface.
#[derive(Debug, Clone)]
pub struct HeuristicPolicy {
    recent_mph: VecDeque<Option<f64>>,
    current: AccSetpoints,
}

impl HeuristicPolicy {
    pub fn new(initial: AccSetpoints) -> Self {
        Self {
            recent_mph: VecDeque::with_capacity(CLIP_HISTORY_TICKS),
            current: initial,
        }
    }

    /// Record this tick's measured ego speed (None when unavailable).
    pub fn record_tick_speed(&mut self, v_mps: Option<f64>) {
        if self.recent_mph.len() == CLIP_HISTORY_TICKS {
            self.recent_mph.pop_front();
        }
        self.recent_mph.push_back(v_mps.map(mps_to_mph));
    }

    /// Decide setpoints from the ego speed and the plan target at the ego
    /// position. A missing target holds the current settings.
    pub fn decide(&mut self, v_mps: f64, v_target_mps: Option<f64>) -> AccSetpoints {
        let Some(v_s) = v_target_mps else {
            return self.current;
        };
        let recent: Vec<Option<f64>> = self.recent_mph.iter().copied().collect();
        let action = mps_to_mph(v_s).round();
        let speed_mph = match clip_speed_setting(action, &recent) {
            Some(clipped) => clipped.round() as i32,
            None => self.current.speed_mph,
        };
        let gap_bar = if mps_to_mph(v_s) < mps_to_mph(v_mps) - 5.0 {
            GapBar::Bar3
        } else {
            GapBar::Bar1
        };
        self.current = AccSetpoints { speed_mph, gap_bar };
        self.current
    }

    pub fn current(&self) -> AccSetpoints {
        self.current
    }
}

/// Press plan to change the speed setting by `delta` mph: hold presses move
/// 5 mph, single presses 1 mph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PressPlan {
    pub holds: u32,
    pub singles: u32,
    /// +1 increases, -1 decreases, 0 no change.
    pub direction: i32,
}

pub fn press_plan(delta_mph: i32) -> PressPlan {
    let mag = delta_mph.unsigned_abs();
    PressPlan {
        holds: mag / 5,
        singles: mag % 5,
        direction: delta_mph.signum(),
    }
}

/// One scheduled batch of button presses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressEvent {
    pub t_request_s: f64,
    pub t_apply_s: f64,
    pub speed_from_mph: i32,
    pub speed_to_mph: i32,
    pub holds: u32,
    pub singles: u32,
    pub gap_from: u8,
    pub gap_to: u8,
}

/// Applies requested setpoints through button presses with a fixed latency
/// per batch. Gap-bar changes ride in the same batch and take priority in the
/// pressing order (reflected in the event record only; both settle together).
#[derive(Debug, Clone)]
pub struct SetpointActuator {
    applied: AccSetpoints,
    pending: Option<(AccSetpoints, f64)>,
    latency_s: f64,
}

impl SetpointActuator {
    pub fn new(initial: AccSetpoints, latency_s: f64) -> Self {
        Self {
            applied: initial,
            pending: None,
            latency_s,
        }
    }

    /// Request new setpoints at time `t`; returns the press batch when the
    /// request differs from what is applied or already pending.
    pub fn request(&mut self, t: f64, target: AccSetpoints) -> Option<PressEvent> {
        let reference = self.pending.map(|(s, _)| s).unwrap_or(self.applied);
        if target == reference {
            return None;
        }
        let plan = press_plan(target.speed_mph - reference.speed_mph);
        let ev = PressEvent {
            t_request_s: t,
            t_apply_s: t + self.latency_s,
            speed_from_mph: reference.speed_mph,
            speed_to_mph: target.speed_mph,
            holds: plan.holds,
            singles: plan.singles,
            gap_from: reference.gap_bar.index(),
            gap_to: target.gap_bar.index(),
        };
        self.pending = Some((target, ev.t_apply_s));
        Some(ev)
    }

    /// Setpoints in force at time `t` (applies any due pending batch).
    pub fn applied_at(&mut self, t: f64) -> AccSetpoints {
        if let Some((target, due)) = self.pending {
            if t >= due {
                self.applied = target;
                self.pending = None;
            }
        }
        self.applied
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight on squared acceleration (comfort).
    pub c1: f64,
    /// Weight on squared deviation from the target average speed.
    pub c2: f64,
    /// Weight on mean fleet energy rate.
    pub c3: f64,
    /// Penalty for leaving the acceptable headway band.
    pub c4: f64,
    /// Acceptable headway band, m.
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            c1: 0.02,
            c2: 0.01,
            c3: 0.1,
            c4: 0.5,
            h_min: 7.0,
            h_max: 120.0,
        }
    }
}

/// Scalar training-style reward, computed for logging and evaluation only:
/// `1 - c1 a^2 - c2 (v_avg - v_set)^2 - (c3/n) sum E_i - c4 [h outside band]`.
pub fn reward(
    accel: f64,
    v_avg: f64,
    v_setpoint: f64,
    energy_rates: &[f64],
    headway: f64,
    cfg: &RewardConfig,
) -> f64 {
    let energy = if energy_rates.is_empty() {
        0.0
    } else {
        energy_rates.iter().sum::<f64>() / energy_rates.len() as f64
    };
    let band = if headway <= cfg.h_min || headway >= cfg.h_max {
        1.0
    } else {
        0.0
    };
    1.0 - cfg.c1 * accel * accel
        - cfg.c2 * (v_avg - v_setpoint) * (v_avg - v_setpoint)
        - cfg.c3 * energy
        - cfg.c4 * band
}
