//! Microscopic car-following models.
//!
//! Two families are provided: the Intelligent Driver Model (IDM), used for
//! simulated human drivers, and an optimal-velocity / follow-the-leader model
//! used as the human model inside the trajectory optimizer.
//!
//! Sign conventions differ between the two and are part of the contract:
//! [`idm_accel`] takes the closing speed `dv = v - v_lead` (positive while
//! approaching the leader), while [`ovm_ftl_accel`] takes the leader speed
//! directly and forms `v_lead - v` internally.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CfmError {
    #[error("space gap must be positive, got {0} m (collision state)")]
    NonPositiveGap(f64),
    #[error("equilibrium undefined: speed {v} m/s is not below the free speed {v0} m/s")]
    NoEquilibrium { v: f64, v0: f64 },
}

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Free (desired) speed, m/s.
    pub v0: f64,
    /// Desired time headway, s.
    pub t_headway: f64,
    /// Jam (standstill) gap, m.
    pub s0: f64,
    /// Free-acceleration exponent.
    pub delta: f64,
    /// Maximum acceleration, m/s^2.
    pub a_max: f64,
    /// Comfortable braking deceleration (positive), m/s^2.
    pub b_comfort: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 30.0,
            t_headway: 1.0,
            s0: 2.0,
            delta: 4.0,
            a_max: 1.3,
            b_comfort: 2.0,
        }
    }
}

/// IDM acceleration for a follower with bumper-to-bumper gap `gap` (m),
/// speed `v` (m/s), and closing speed `dv = v - v_lead` (m/s).
pub fn idm_accel(gap: f64, v: f64, dv: f64, p: &IdmParams) -> Result<f64, CfmError> {
    if gap <= 0.0 {
        return Err(CfmError::NonPositiveGap(gap));
    }
    let s_star =
        p.s0 + v * p.t_headway + (v * dv).max(0.0) / (2.0 * (p.a_max * p.b_comfort).sqrt());
    Ok(p.a_max * (1.0 - (v / p.v0).powf(p.delta) - (s_star / gap).powi(2)))
}

/// Gap at which [`idm_accel`] vanishes for a steady speed `v` (dv = 0).
///
/// Only defined for `v < v0`; at or above the free speed no finite gap gives
/// zero acceleration.
pub fn idm_equilibrium_gap(v: f64, p: &IdmParams) -> Result<f64, CfmError> {
    if v >= p.v0 {
        return Err(CfmError::NoEquilibrium { v, v0: p.v0 });
    }
    Ok((p.s0 + v * p.t_headway) / (1.0 - (v / p.v0).powf(p.delta)).sqrt())
}

/// Optimal-velocity / follow-the-leader parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OvmParams {
    /// Relaxation gain toward the optimal velocity, 1/s.
    pub alpha: f64,
    /// Follow-the-leader gain, m^nu / s.
    pub beta: f64,
    /// Exponent on the gap in the follow-the-leader term.
    pub nu: f64,
    /// Maximum optimal velocity, m/s.
    pub v_max: f64,
    /// Gap sensitivity of the optimal-velocity curve, 1/m.
    pub k: f64,
    /// Offset of the optimal-velocity curve (dimensionless).
    pub d: f64,
    /// Car length entering the optimal-velocity curve shape, m.
    pub l: f64,
}

impl Default for OvmParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 20.0,
            nu: 2.0,
            v_max: 30.0,
            k: 0.1,
            d: 2.0,
            l: 4.5,
        }
    }
}

/// Optimal velocity for gap `h`: a saturating tanh profile normalized so that
/// V -> v_max as h -> infinity.
pub fn bando_optimal_velocity(h: f64, p: &OvmParams) -> f64 {
    let t0 = (p.l + p.d).tanh();
    p.v_max * ((p.k * h - p.d).tanh() + t0) / (1.0 + t0)
}

/// Derivative dV/dh of [`bando_optimal_velocity`].
pub fn bando_optimal_velocity_deriv(h: f64, p: &OvmParams) -> f64 {
    let t0 = (p.l + p.d).tanh();
    let th = (p.k * h - p.d).tanh();
    p.v_max * p.k * (1.0 - th * th) / (1.0 + t0)
}

/// Gap at which the optimal velocity equals `v`; inverse of
/// [`bando_optimal_velocity`]. Defined for speeds the curve actually attains
/// at a positive gap, i.e. `V(0) < v < v_max`.
pub fn bando_equilibrium_gap(v: f64, p: &OvmParams) -> Result<f64, CfmError> {
    // The explicit speed check matters: at v = v_max the atanh argument can
    // round to just below 1 and yield a spurious huge gap.
    if v >= p.v_max {
        return Err(CfmError::NoEquilibrium { v, v0: p.v_max });
    }
    let t0 = (p.l + p.d).tanh();
    let arg = v * (1.0 + t0) / p.v_max - t0;
    if !(arg > -1.0 && arg < 1.0) {
        return Err(CfmError::NoEquilibrium { v, v0: p.v_max });
    }
    let h = (p.d + arg.atanh()) / p.k;
    if h <= 0.0 {
        return Err(CfmError::NoEquilibrium { v, v0: p.v_max });
    }
    Ok(h)
}

/// Optimal-velocity relaxation plus follow-the-leader acceleration for a
/// follower with gap `gap` (m), speed `v`, and leader speed `v_lead` (m/s).
pub fn ovm_ftl_accel(gap: f64, v: f64, v_lead: f64, p: &OvmParams) -> Result<f64, CfmError> {
    if gap <= 0.0 {
        return Err(CfmError::NonPositiveGap(gap));
    }
    Ok(p.alpha * (bando_optimal_velocity(gap, p) - v) + p.beta * (v_lead - v) / gap.powf(p.nu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn idm_known_point() {
        // Hand evaluation: s* = 2 + 20*1 = 22 at dv = 0, so
        // a = 1.3 * (1 - (20/30)^4 - (22/30)^2).
        let p = IdmParams::default();
        let expected = 1.3 * (1.0 - (20.0f64 / 30.0).powi(4) - (22.0f64 / 30.0).powi(2));
        let got = idm_accel(30.0, 20.0, 0.0, &p).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-14);
        assert_abs_diff_eq!(got, 0.344, epsilon = 1e-3);
    }

    #[test]
    fn idm_closing_term_brakes_harder() {
        let p = IdmParams::default();
        let neutral = idm_accel(30.0, 20.0, 0.0, &p).unwrap();
        let closing = idm_accel(30.0, 20.0, 3.0, &p).unwrap();
        // Opening gaps (dv < 0) drop the interaction term entirely.
        let opening = idm_accel(30.0, 20.0, -3.0, &p).unwrap();
        assert!(closing < neutral);
        assert_relative_eq!(opening, neutral, max_relative = 1e-14);
    }

    #[test]
    fn idm_gap_must_be_positive() {
        let p = IdmParams::default();
        assert_eq!(idm_accel(0.0, 10.0, 0.0, &p), Err(CfmError::NonPositiveGap(0.0)));
        assert!(idm_accel(-3.0, 10.0, 0.0, &p).is_err());
    }

    #[test]
    fn equilibrium_gap_matches_root_find_oracle() {
        // Independent oracle: bisect idm_accel over the gap at dv = 0.
        let p = IdmParams::default();
        for v in [5.0, 10.0, 15.0, 20.0, 25.0] {
            let (mut lo, mut hi) = (p.s0 * 0.5, 2000.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if idm_accel(mid, v, 0.0, &p).unwrap() > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let oracle = 0.5 * (lo + hi);
            let closed = idm_equilibrium_gap(v, &p).unwrap();
            assert_relative_eq!(closed, oracle, max_relative = 1e-10);
            assert_abs_diff_eq!(idm_accel(closed, v, 0.0, &p).unwrap(), 0.0, epsilon = 1e-9);
        }
        // Frozen value for v = 20 with the default parameters:
        // 22 / sqrt(1 - (2/3)^4) = 198 / sqrt(65).
        assert_abs_diff_eq!(
            idm_equilibrium_gap(20.0, &IdmParams::default()).unwrap(),
            24.558877448663274,
            epsilon = 1e-9
        );
    }

    #[test]
    fn equilibrium_gap_rejects_free_speed() {
        let p = IdmParams::default();
        assert!(idm_equilibrium_gap(30.0, &p).is_err());
        assert!(idm_equilibrium_gap(35.0, &p).is_err());
    }

    #[test]
    fn bando_curve_bounds_and_monotonicity() {
        let p = OvmParams::default();
        let mut prev = -1.0;
        for i in 0..=400 {
            let h = i as f64 * 0.5;
            let v = bando_optimal_velocity(h, &p);
            assert!(v >= 0.0 && v <= p.v_max, "V({h}) = {v} out of [0, v_max]");
            assert!(v >= prev, "V not nondecreasing at h = {h}");
            prev = v;
        }
        assert_relative_eq!(bando_optimal_velocity(1e6, &p), p.v_max, max_relative = 1e-9);
    }

    #[test]
    fn bando_deriv_matches_finite_difference() {
        let p = OvmParams::default();
        for h in [2.0, 10.0, 20.0, 35.0, 80.0] {
            let eps = 1e-5;
            let fd = (bando_optimal_velocity(h + eps, &p) - bando_optimal_velocity(h - eps, &p))
                / (2.0 * eps);
            assert_relative_eq!(bando_optimal_velocity_deriv(h, &p), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn bando_equilibrium_inverts_curve() {
        let p = OvmParams::default();
        for v in [2.0, 10.0, 15.0, 25.0, 29.0] {
            let h = bando_equilibrium_gap(v, &p).unwrap();
            assert_relative_eq!(bando_optimal_velocity(h, &p), v, max_relative = 1e-10);
        }
        assert!(bando_equilibrium_gap(30.0, &p).is_err());
        // Below V(0) the equilibrium gap would be nonpositive.
        assert!(bando_equilibrium_gap(0.1, &p).is_err());
    }

    #[test]
    fn ovm_ftl_signs() {
        let p = OvmParams::default();
        // At the equilibrium gap with matched speeds the model is quiescent.
        let h = bando_equilibrium_gap(15.0, &p).unwrap();
        assert_abs_diff_eq!(ovm_ftl_accel(h, 15.0, 15.0, &p).unwrap(), 0.0, epsilon = 1e-12);
        // A faster leader pulls the follower forward, a slower one brakes it.
        assert!(ovm_ftl_accel(h, 15.0, 20.0, &p).unwrap() > 0.0);
        assert!(ovm_ftl_accel(h, 15.0, 10.0, &p).unwrap() < 0.0);
        assert!(ovm_ftl_accel(0.0, 15.0, 15.0, &p).is_err());
    }

    /// Self-contained platoon integration (independent of the simulator
    /// module): the default IDM parameters are string unstable, so a smooth
    /// leader speed dip grows in amplitude down a 20-vehicle platoon.
    #[test]
    fn default_idm_platoon_amplifies_disturbances() {
        let p = IdmParams::default();
        let (v_eq, dip, period, dt) = (15.0, 2.0, 20.0, 0.1);
        let n = 21; // leader + 20 followers
        let car_len = 4.5;
        let gap = idm_equilibrium_gap(v_eq, &p).unwrap();
        let mut x = vec![0.0; n];
        let mut v = vec![v_eq; n];
        for i in 1..n {
            x[i] = x[i - 1] - (gap + car_len);
        }
        let ticks = (400.0 / dt) as usize;
        let mut amp = vec![0.0f64; n];
        for k in 0..ticks {
            let t = k as f64 * dt;
            let v_lead = if (20.0..40.0).contains(&t) {
                v_eq - dip * 0.5 * (1.0 - (std::f64::consts::TAU * (t - 20.0) / period).cos())
            } else {
                v_eq
            };
            let mut acc = vec![0.0; n];
            for i in 1..n {
                let g = x[i - 1] - x[i] - car_len;
                acc[i] = idm_accel(g, v[i], v[i] - v[i - 1], &p).unwrap();
            }
            x[0] += v_lead * dt;
            v[0] = v_lead;
            for i in 1..n {
                x[i] += (v[i] * dt + 0.5 * acc[i] * dt * dt).max(0.0);
                v[i] = (v[i] + acc[i] * dt).max(0.0);
                amp[i] = amp[i].max((v[i] - v_eq).abs());
            }
        }
        for i in 2..n {
            assert!(
                amp[i] > amp[i - 1],
                "amplitude did not grow at vehicle {i}: {} <= {}",
                amp[i],
                amp[i - 1]
            );
        }
        assert!(amp[n - 1] > 1.5 * amp[1], "too little amplification: {:?}", amp);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Larger gaps never reduce IDM acceleration (fixed v, dv).
            #[test]
            fn idm_monotone_in_gap(g1 in 1.0f64..200.0, dg in 0.1f64..100.0,
                                   v in 0.0f64..29.0, dv in -5.0f64..5.0) {
                let p = IdmParams::default();
                let a1 = idm_accel(g1, v, dv, &p).unwrap();
                let a2 = idm_accel(g1 + dg, v, dv, &p).unwrap();
                prop_assert!(a2 >= a1);
            }

            /// The equilibrium gap grows with speed.
            #[test]
            fn equilibrium_gap_monotone(v in 0.0f64..29.0, dv in 0.01f64..0.9) {
                let p = IdmParams::default();
                let v2 = (v + dv).min(29.95);
                let g1 = idm_equilibrium_gap(v, &p).unwrap();
                let g2 = idm_equilibrium_gap(v2, &p).unwrap();
                prop_assert!(g2 > g1);
            }

            /// The optimal-velocity curve stays within [0, v_max] for h >= 0.
            #[test]
            fn bando_in_range(h in 0.0f64..1000.0) {
                let p = OvmParams::default();
                let v = bando_optimal_velocity(h, &p);
                prop_assert!((0.0..=p.v_max).contains(&v));
            }
        }
    }
}
