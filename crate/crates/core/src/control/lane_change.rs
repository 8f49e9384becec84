//! Lane-change recovery filter.
//!
//! A cut-in or cut-out makes the measured space gap jump, and a raw controller
//! answers with a violent acceleration step. While active, the filter blends
//! the raw command `a_k` with the previous output:
//!
//! ```text
//! u_k = alpha_k * u_{k-1} + (1 - alpha_k) * a_k
//! alpha_k = c * f1(s_k / v_k) + (1 - c) * f2(dv_k, s_k)
//! ```
//!
//! `f1 = tanh(t_star * s / v)` weighs the time headway (saturating to 1 at
//! standstill); `f2` weighs the closing rate: for a closing leader (dv < 0) it
//! is `0.5 tanh(dv_star * s / |dv|) + 0.5`, otherwise `0.5 tanh(dv) + 0.5`.
//! Both land in [0, 1), so the filter is a strict contraction toward the raw
//! command and recovers in finite time.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaneChangeConfig {
    /// Mixing weight between the headway kernel and the closing-rate kernel.
    pub c: f64,
    /// Headway kernel scale, 1/s.
    pub t_star: f64,
    /// Closing-rate kernel scale, m/s.
    pub dv_star: f64,
    /// Minimum safe time gap for a receding leader after a lane change, s.
    pub h_safe: f64,
    /// Minimum safe time-to-collision for a closing leader, s.
    pub c_safe: f64,
    /// Implied-jerk activation threshold, m/s^3.
    pub jerk_threshold: f64,
    /// Space-gap discontinuity (beyond kinematic drift) that flags a lane
    /// change, m per tick.
    pub gap_jump: f64,
    /// Deactivation threshold on |raw - filtered|, m/s^2.
    pub eps: f64,
}

impl Default for LaneChangeConfig {
    fn default() -> Self {
        Self {
            c: 0.75,
            t_star: 1.32,
            dv_star: 10.3,
            h_safe: 2.0,
            c_safe: 4.5,
            jerk_threshold: 4.0,
            gap_jump: 5.0,
            eps: 0.1,
        }
    }
}

/// Per-tick input to the filter. `dv` is the leader speed minus the ego speed
/// (negative while closing). `gap_discontinuity` is the caller's detection of
/// a gap jump beyond kinematic drift (see [`gap_discontinuity`]).
#[derive(Debug, Clone, Copy)]
pub struct LaneChangeInput {
    /// Raw controller command a_k, m/s^2.
    pub raw_accel: f64,
    /// Current space gap s_k, m.
    pub gap: f64,
    /// Ego speed, m/s.
    pub v: f64,
    /// Relative speed v_lead - v, m/s.
    pub dv: f64,
    /// Gap jumped beyond what vehicle kinematics can produce this tick.
    pub gap_discontinuity: bool,
    /// Tick length, s.
    pub dt: f64,
}

/// Detects a space-gap discontinuity: the change from `prev_gap` beyond the
/// kinematic drift `prev_dv * dt` exceeding the configured jump threshold.
pub fn gap_discontinuity(
    gap: f64,
    prev_gap: f64,
    prev_dv: f64,
    dt: f64,
    cfg: &LaneChangeConfig,
) -> bool {
    (gap - (prev_gap + prev_dv * dt)).abs() > cfg.gap_jump
}

/// Blending weight alpha_k in [0, 1).
pub fn alpha(gap: f64, v: f64, dv: f64, cfg: &LaneChangeConfig) -> f64 {
    let f1 = if v <= 1e-9 {
        1.0
    } else {
        (cfg.t_star * gap / v).tanh()
    };
    let f2 = if dv < 0.0 {
        0.5 * (cfg.dv_star * gap / (-dv)).tanh() + 0.5
    } else {
        0.5 * dv.tanh() + 0.5
    };
    (cfg.c * f1 + (1.0 - cfg.c) * f2).clamp(0.0, 1.0 - 1e-9)
}

/// Is the post-lane-change state safe enough to smooth through? A closing
/// leader needs time-to-collision above `c_safe`; a receding or matched
/// leader needs a time gap above `h_safe`. When unsafe the filter stays
/// inactive and the raw (defensive) command passes through.
pub fn lane_change_is_safe(gap: f64, v: f64, dv: f64, cfg: &LaneChangeConfig) -> bool {
    if dv < 0.0 {
        gap / (-dv) > cfg.c_safe
    } else if v <= 1e-9 {
        true
    } else {
        gap / v > cfg.h_safe
    }
}

/// Stateful recovery filter. Feed it every tick; it passes the raw command
/// through while inactive.
#[derive(Debug, Clone)]
pub struct LaneChangeFilter {
    cfg: LaneChangeConfig,
    active: bool,
    prev_output: f64,
}

impl LaneChangeFilter {
    pub fn new(cfg: LaneChangeConfig) -> Self {
        Self {
            cfg,
            active: false,
            prev_output: 0.0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Process one tick and return the (possibly smoothed) command u_k.
    pub fn step(&mut self, input: &LaneChangeInput) -> f64 {
        if !self.active {
            let implied_jerk = (input.raw_accel - self.prev_output).abs() / input.dt;
            let significant = implied_jerk > self.cfg.jerk_threshold;
            let safe = lane_change_is_safe(input.gap, input.v, input.dv, &self.cfg);
            if input.gap_discontinuity && significant && safe {
                self.active = true;
            }
        }
        let out = if self.active {
            let a = alpha(input.gap, input.v, input.dv, &self.cfg);
            let u = a * self.prev_output + (1.0 - a) * input.raw_accel;
            if (input.raw_accel - u).abs() <= self.cfg.eps {
                self.active = false;
            }
            u
        } else {
            input.raw_accel
        };
        self.prev_output = out;
        out
    }
}
