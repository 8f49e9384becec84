//! Platoon trajectory optimization.
//!
//! A platoon behind a replayed leader is rolled out with explicit Euler:
//! automated vehicles apply piecewise-constant accelerations, humans follow
//! the optimal-velocity/follow-the-leader model. The objective integrates
//! squared AV acceleration plus squared human model response (an
//! acceleration-norm fuel proxy); gap-envelope and nonnegative-speed
//! constraints on the AVs enter as quadratic penalties. Gradients come from
//! the discrete adjoint of the exact rollout, optionally cross-checked by
//! central finite differences, and descent is projected gradient with a
//! backtracking line search, so the accepted objective trace is monotone.

use super::OptimError;
use crate::cfm::{
    bando_equilibrium_gap, bando_optimal_velocity, bando_optimal_velocity_deriv, OvmParams,
};
use crate::energy::EnergyModel;
use crate::sim::LeaderTrajectory;
use std::path::Path;

/// Penalty integrals, reported separately from the objective so constraint
/// pressure is visible.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PenaltyReport {
    /// Integral of squared gap shortfall below the envelope floor.
    pub gap_low: f64,
    /// Integral of squared gap excess above the envelope ceiling.
    pub gap_high: f64,
    /// Integral of squared negative speed.
    pub v_neg: f64,
}

impl PenaltyReport {
    pub fn total(&self) -> f64 {
        self.gap_low + self.gap_high + self.v_neg
    }
}

/// The platoon optimal-control problem on a fixed time horizon.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    /// Which platoon slots are automated (front to back).
    pub av_mask: Vec<bool>,
    /// Replayed leader speed profile.
    pub leader: LeaderTrajectory,
    /// Human car-following parameters (also sets the car length).
    pub ovm: OvmParams,
    /// Horizon, s.
    pub t_horizon_s: f64,
    /// Rollout step, s.
    pub dt_s: f64,
    /// Piecewise-constant control pieces per AV.
    pub pieces: usize,
    /// AV acceleration bounds, m/s^2.
    pub u_min: f64,
    pub u_max: f64,
    /// Gap envelope for AVs: d_min + h_min v <= gap <= d_max + h_max v.
    pub h_min_s: f64,
    pub h_max_s: f64,
    pub d_min_m: f64,
    pub d_max_m: f64,
    /// Penalty weight on envelope and speed violations.
    pub mu_penalty: f64,
    /// Initial positions and speeds, front to back (leader is at 0).
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
}

impl OcpProblem {
    /// Platoon at the human equilibrium gap behind the leader's initial
    /// speed. Rollout step 0.1 s, bounds [-3, 1.5] m/s^2, a wide envelope,
    /// and a fixed penalty weight of 1e3 (violations are audited after
    /// optimization rather than driven to zero by a schedule).
    pub fn behind_leader(
        leader: LeaderTrajectory,
        av_mask: Vec<bool>,
        t_horizon_s: f64,
        pieces: usize,
    ) -> Result<Self, OptimError> {
        let ovm = OvmParams::default();
        let v_init = leader.speed_at(0.0);
        let gap = bando_equilibrium_gap(v_init, &ovm)?;
        let n = av_mask.len();
        let mut x0 = Vec::with_capacity(n);
        let mut prev = 0.0;
        for _ in 0..n {
            prev -= gap + ovm.l;
            x0.push(prev);
        }
        let p = Self {
            av_mask,
            leader,
            ovm,
            t_horizon_s,
            dt_s: 0.1,
            pieces,
            u_min: -3.0,
            u_max: 1.5,
            h_min_s: 0.1,
            h_max_s: 10.0,
            d_min_m: 1.0,
            d_max_m: 300.0,
            mu_penalty: 1e3,
            x0,
            v0: vec![v_init; n],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let n = self.av_mask.len();
        if n == 0 {
            return Err(OptimError::BadProblem("empty platoon".into()));
        }
        if self.x0.len() != n || self.v0.len() != n {
            return Err(OptimError::BadProblem("initial state length mismatch".into()));
        }
        if !(self.t_horizon_s > 0.0) || !(self.dt_s > 0.0) {
            return Err(OptimError::BadProblem("horizon and dt must be positive".into()));
        }
        if self.pieces == 0 {
            return Err(OptimError::BadProblem("control mesh needs at least one piece".into()));
        }
        if self.h_min_s >= self.h_max_s || self.d_min_m >= self.d_max_m {
            return Err(OptimError::BadProblem("gap envelope bounds inverted".into()));
        }
        if self.u_min >= self.u_max {
            return Err(OptimError::BadProblem("accel bounds inverted".into()));
        }
        let mut prev = 0.0;
        for (i, &x) in self.x0.iter().enumerate() {
            if prev - x - self.ovm.l <= 0.0 {
                return Err(OptimError::BadProblem(format!(
                    "vehicle {i} starts without a positive gap"
                )));
            }
            prev = x;
        }
        if self.leader.duration_s() + 1e-9 < self.t_horizon_s {
            return Err(OptimError::BadProblem(format!(
                "leader profile covers {} s of a {} s horizon",
                self.leader.duration_s(),
                self.t_horizon_s
            )));
        }
        Ok(())
    }

    pub fn n_vehicles(&self) -> usize {
        self.av_mask.len()
    }

    /// Platoon indices of the AVs, front to back.
    pub fn av_indices(&self) -> Vec<usize> {
        self.av_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    pub fn n_steps(&self) -> usize {
        (self.t_horizon_s / self.dt_s).round() as usize
    }

    fn piece_of(&self, step: usize) -> usize {
        (step * self.pieces / self.n_steps()).min(self.pieces - 1)
    }

    /// Zero controls with the right shape.
    pub fn zero_controls(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.pieces]; self.av_indices().len()]
    }

    fn check_controls(&self, u: &[Vec<f64>]) -> Result<(), OptimError> {
        let n_av = self.av_indices().len();
        if u.len() != n_av || u.iter().any(|row| row.len() != self.pieces) {
            return Err(OptimError::BadProblem(format!(
                "controls must be {n_av} x {}",
                self.pieces
            )));
        }
        Ok(())
    }

    fn envelope(&self, v: f64) -> (f64, f64) {
        (self.d_min_m + self.h_min_s * v, self.d_max_m + self.h_max_s * v)
    }
}

/// Forward rollout: per-step positions, speeds, and applied accelerations.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// `x[k][i]`: position of platoon vehicle `i` at step `k` (0..=K).
    pub x: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// `a[k][i]`: acceleration applied over `[t_k, t_k + dt)` (0..K).
    pub a: Vec<Vec<f64>>,
    /// Leader positions and speeds on the same grid.
    pub lead_x: Vec<f64>,
    pub lead_v: Vec<f64>,
    /// First collision `(step, vehicle)` if the rollout broke down.
    pub collision: Option<(usize, usize)>,
}

impl OcpProblem {
    /// Leader positions and speeds sampled on the rollout grid (trapezoid
    /// integration of the replayed speed profile).
    fn leader_grid(&self) -> (Vec<f64>, Vec<f64>) {
        let steps = self.n_steps();
        let mut lead_x = vec![0.0; steps + 1];
        let mut lead_v = vec![0.0; steps + 1];
        lead_v[0] = self.leader.speed_at(0.0);
        for k in 1..=steps {
            let (t0, t1) = ((k - 1) as f64 * self.dt_s, k as f64 * self.dt_s);
            lead_v[k] = self.leader.speed_at(t1);
            lead_x[k] = lead_x[k - 1] + 0.5 * (self.leader.speed_at(t0) + lead_v[k]) * self.dt_s;
        }
        (lead_x, lead_v)
    }

    fn av_slots(&self) -> Vec<usize> {
        let mut av_slot = vec![usize::MAX; self.n_vehicles()];
        for (slot, &i) in self.av_indices().iter().enumerate() {
            av_slot[i] = slot;
        }
        av_slot
    }

    fn human_accel(&self, h: f64, v: f64, v_f: f64) -> f64 {
        self.ovm.alpha * (bando_optimal_velocity(h, &self.ovm) - v)
            + self.ovm.beta * (v_f - v) / h.powf(self.ovm.nu)
    }

    pub fn rollout(&self, u: &[Vec<f64>]) -> Result<Rollout, OptimError> {
        self.validate()?;
        self.check_controls(u)?;
        let n = self.n_vehicles();
        let steps = self.n_steps();
        let av_slot = self.av_slots();
        let (lead_x, lead_v) = self.leader_grid();

        let mut out = Rollout {
            x: Vec::with_capacity(steps + 1),
            v: Vec::with_capacity(steps + 1),
            a: Vec::with_capacity(steps),
            lead_x,
            lead_v,
            collision: None,
        };
        out.x.push(self.x0.clone());
        out.v.push(self.v0.clone());

        'time: for k in 0..steps {
            let xk = out.x[k].clone();
            let vk = out.v[k].clone();
            let mut a = vec![0.0; n];
            for i in 0..n {
                let (x_f, v_f) = if i == 0 {
                    (out.lead_x[k], out.lead_v[k])
                } else {
                    (xk[i - 1], vk[i - 1])
                };
                let h = x_f - xk[i] - self.ovm.l;
                if h <= 0.0 {
                    out.collision = Some((k, i));
                    break 'time;
                }
                a[i] = if av_slot[i] != usize::MAX {
                    u[av_slot[i]][self.piece_of(k)]
                } else {
                    self.human_accel(h, vk[i], v_f)
                };
            }
            let x_next: Vec<f64> =
                (0..n).map(|i| xk[i] + vk[i] * self.dt_s).collect();
            let v_next: Vec<f64> = (0..n).map(|i| vk[i] + a[i] * self.dt_s).collect();
            out.a.push(a);
            out.x.push(x_next);
            out.v.push(v_next);
        }
        Ok(out)
    }
}

/// Objective and penalty diagnostics for a control schedule. A collision
/// during the rollout yields an infinite objective.
pub fn ocp_objective(p: &OcpProblem, u: &[Vec<f64>]) -> Result<(f64, PenaltyReport), OptimError> {
    let roll = p.rollout(u)?;
    Ok(objective_of_rollout(p, &roll))
}

fn objective_of_rollout(p: &OcpProblem, roll: &Rollout) -> (f64, PenaltyReport) {
    let mut pen = PenaltyReport::default();
    if roll.collision.is_some() {
        return (f64::INFINITY, pen);
    }
    let avs = p.av_indices();
    let n = p.n_vehicles();
    let mut j = 0.0;
    for k in 0..roll.a.len() {
        for i in 0..n {
            j += roll.a[k][i] * roll.a[k][i] * p.dt_s;
        }
        for &i in &avs {
            let (x_f, _) = front_state(roll, k, i);
            let h = x_f - roll.x[k][i] - p.ovm.l;
            let v = roll.v[k][i];
            let (lo, hi) = p.envelope(v);
            pen.gap_low += (lo - h).max(0.0).powi(2) * p.dt_s;
            pen.gap_high += (h - hi).max(0.0).powi(2) * p.dt_s;
            pen.v_neg += (-v).max(0.0).powi(2) * p.dt_s;
        }
    }
    (j, pen)
}

/// The same trajectory scored with a polynomial fuel-rate model instead of
/// the acceleration-norm proxy, grams over the horizon. Provided for
/// comparison; optimization always descends the proxy.
pub fn ocp_fuel_objective(
    p: &OcpProblem,
    u: &[Vec<f64>],
    model: &EnergyModel,
) -> Result<f64, OptimError> {
    let roll = p.rollout(u)?;
    if roll.collision.is_some() {
        return Ok(f64::INFINITY);
    }
    let mut fuel = 0.0;
    for k in 0..roll.a.len() {
        for i in 0..p.n_vehicles() {
            fuel += model.fuel_rate(roll.v[k][i].max(0.0), roll.a[k][i], 0.0) * p.dt_s;
        }
    }
    Ok(fuel)
}

fn front_state(roll: &Rollout, k: usize, i: usize) -> (f64, f64) {
    if i == 0 {
        (roll.lead_x[k], roll.lead_v[k])
    } else {
        (roll.x[k][i - 1], roll.v[k][i - 1])
    }
}

/// Penalized objective actually descended: J + mu * penalty.
pub fn penalized_objective(p: &OcpProblem, u: &[Vec<f64>]) -> Result<f64, OptimError> {
    let (j, pen) = ocp_objective(p, u)?;
    Ok(j + p.mu_penalty * pen.total())
}

/// Gradient of the penalized objective by the discrete adjoint of the Euler
/// rollout. Errors if the rollout collides (the objective is infinite and
/// not differentiable there).
pub fn ocp_gradient_adjoint(p: &OcpProblem, u: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, OptimError> {
    let roll = p.rollout(u)?;
    if let Some((k, i)) = roll.collision {
        return Err(OptimError::Infeasible(format!(
            "collision at step {k}, vehicle {i}: gradient undefined"
        )));
    }
    let n = p.n_vehicles();
    let steps = roll.a.len();
    let avs = p.av_indices();
    let mut av_slot = vec![usize::MAX; n];
    for (slot, &i) in avs.iter().enumerate() {
        av_slot[i] = slot;
    }

    // Adjoint state per vehicle: (lambda_x, lambda_v).
    let mut lx = vec![0.0; n];
    let mut lv = vec![0.0; n];
    let mut grad = vec![vec![0.0; p.pieces]; avs.len()];

    for k in (0..steps).rev() {
        // Partials of the stage cost g_k = l_k + mu * p_k w.r.t. states, and
        // of the dynamics F w.r.t. states, all at (z_k, u_k).
        let mut gx = vec![0.0; n];
        let mut gv = vec![0.0; n];
        // dF^T lambda accumulators (new lambda before adding dg and identity).
        let mut fx = vec![0.0; n]; // contributions to lambda_x slots
        let mut fv = vec![0.0; n]; // contributions to lambda_v slots

        for i in 0..n {
            // F_{x_i} = v_i.
            fv[i] += lx[i];
            let (x_f, v_f) = front_state(&roll, k, i);
            let h = x_f - roll.x[k][i] - p.ovm.l;
            let v = roll.v[k][i];
            if av_slot[i] == usize::MAX {
                // Human: F_{v_i} = A(h, v, v_f), and the stage cost includes
                // A^2 (the rollout stored a[k][i] = A).
                let a_val = roll.a[k][i];
                let a_h = p.ovm.alpha * bando_optimal_velocity_deriv(h, &p.ovm)
                    - p.ovm.nu * p.ovm.beta * (v_f - v) / h.powf(p.ovm.nu + 1.0);
                let a_v = -p.ovm.alpha - p.ovm.beta / h.powf(p.ovm.nu);
                let a_vf = p.ovm.beta / h.powf(p.ovm.nu);

                fx[i] += -a_h * lv[i];
                fv[i] += a_v * lv[i];
                if i > 0 {
                    fx[i - 1] += a_h * lv[i];
                    fv[i - 1] += a_vf * lv[i];
                }
                gx[i] += 2.0 * a_val * -a_h;
                gv[i] += 2.0 * a_val * a_v;
                if i > 0 {
                    gx[i - 1] += 2.0 * a_val * a_h;
                    gv[i - 1] += 2.0 * a_val * a_vf;
                }
            } else {
                // AV: stage cost u^2 handled in the control gradient; the
                // penalty terms depend on the AV's gap and speed.
                let (lo, hi) = p.envelope(v);
                let low = (lo - h).max(0.0);
                let high = (h - hi).max(0.0);
                let neg = (-v).max(0.0);
                // d pen / dh and / dv (before mu).
                let dp_dh = -2.0 * low + 2.0 * high;
                let dp_dv = 2.0 * low * p.h_min_s - 2.0 * high * p.h_max_s - 2.0 * neg;
                gx[i] += p.mu_penalty * -dp_dh;
                gv[i] += p.mu_penalty * dp_dv;
                if i > 0 {
                    gx[i - 1] += p.mu_penalty * dp_dh;
                }
            }
        }

        // Control gradient at this step, before the adjoint update: uses
        // lambda_{k+1} (current lx/lv).
        for (slot, &i) in avs.iter().enumerate() {
            let du = 2.0 * roll.a[k][i] + lv[i];
            grad[slot][p.piece_of(k)] += p.dt_s * du;
        }

        // lambda_k = dt * dg/dz + lambda_{k+1} + dt * (dF/dz)^T lambda_{k+1}.
        for i in 0..n {
            lx[i] += p.dt_s * (gx[i] + fx[i]);
            lv[i] += p.dt_s * (gv[i] + fv[i]);
        }
    }
    Ok(grad)
}

/// Central finite differences of the penalized objective; the gradient
/// oracle for the adjoint implementation.
pub fn ocp_gradient_fd(
    p: &OcpProblem,
    u: &[Vec<f64>],
    h: f64,
) -> Result<Vec<Vec<f64>>, OptimError> {
    let mut grad = vec![vec![0.0; p.pieces]; u.len()];
    let mut work = u.to_vec();
    for s in 0..u.len() {
        for j in 0..p.pieces {
            let base = work[s][j];
            work[s][j] = base + h;
            let up = penalized_objective(p, &work)?;
            work[s][j] = base - h;
            let down = penalized_objective(p, &work)?;
            work[s][j] = base;
            if !(up.is_finite() && down.is_finite()) {
                return Err(OptimError::Infeasible(
                    "finite-difference probe collided".into(),
                ));
            }
            grad[s][j] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Controls mimicking the human-driven trajectory: the all-human closed
/// loop is rolled out as a reference, then each AV tracks its slot's
/// reference with a piecewise-constant schedule chosen at piece boundaries
/// (feedforward speed match plus a half-gain position correction, which
/// contracts tracking error at any piece length). The warm start therefore
/// stays close to the human trajectory and its objective close to the
/// all-human baseline, up to the mesh's quantization.
pub fn cfm_mimic_controls(p: &OcpProblem) -> Result<Vec<Vec<f64>>, OptimError> {
    p.validate()?;
    let mut human = p.clone();
    human.av_mask = vec![false; p.n_vehicles()];
    let reference = human.rollout(&[])?;
    if let Some((k, i)) = reference.collision {
        return Err(OptimError::Infeasible(format!(
            "all-human reference collides at step {k}, vehicle {i}"
        )));
    }

    let n = p.n_vehicles();
    let steps = p.n_steps();
    let av_slot = p.av_slots();
    let (lead_x, lead_v) = p.leader_grid();
    let mut u = p.zero_controls();
    let mut x = p.x0.clone();
    let mut v = p.v0.clone();
    let mut current_piece = usize::MAX;
    for k in 0..steps {
        let piece = p.piece_of(k);
        if piece != current_piece {
            current_piece = piece;
            // First step of the next piece (or the horizon end).
            let mut k_end = k + 1;
            while k_end < steps && p.piece_of(k_end) == piece {
                k_end += 1;
            }
            let span = (k_end - k) as f64 * p.dt_s;
            for (slot, &i) in p.av_indices().iter().enumerate() {
                let ff = (reference.v[k_end][i] - v[i]) / span;
                let fb = 0.5 * (reference.x[k][i] - x[i]) / (span * span);
                u[slot][piece] = (ff + fb).clamp(p.u_min, p.u_max);
            }
        }
        let mut a = vec![0.0; n];
        for i in 0..n {
            let (x_f, v_f) = if i == 0 { (lead_x[k], lead_v[k]) } else { (x[i - 1], v[i - 1]) };
            let h = x_f - x[i] - p.ovm.l;
            if h <= 0.0 {
                return Err(OptimError::Infeasible(format!(
                    "mimic rollout collides at step {k}, vehicle {i}"
                )));
            }
            a[i] = if av_slot[i] != usize::MAX {
                u[av_slot[i]][piece]
            } else {
                p.human_accel(h, v[i], v_f)
            };
        }
        for i in 0..n {
            x[i] += v[i] * p.dt_s;
            v[i] += a[i] * p.dt_s;
        }
    }
    Ok(u)
}

/// Optimization outcome: final controls, accepted-objective trace (of the
/// penalized objective, monotone nonincreasing), final diagnostics, and the
/// all-human baseline for comparison.
#[derive(Debug, Clone)]
pub struct OcpResult {
    pub controls: Vec<Vec<f64>>,
    pub trace: Vec<f64>,
    /// Final unpenalized objective.
    pub objective: f64,
    pub penalty: PenaltyReport,
    /// Objective of the same platoon with every vehicle human.
    pub baseline_objective: f64,
    pub iterations: usize,
}

impl OcpResult {
    /// Relative objective reduction vs the all-human baseline.
    pub fn reduction_pct(&self) -> f64 {
        (self.baseline_objective - self.objective) / self.baseline_objective * 100.0
    }

    /// Writes the control schedule (`piece,t_start_s,u_<slot>...`).
    pub fn write_controls_csv(&self, p: &OcpProblem, path: &Path) -> Result<(), OptimError> {
        let mut out = String::from("piece,t_start_s");
        for i in p.av_indices() {
            out.push_str(&format!(",u_vehicle_{i}_mps2"));
        }
        out.push('\n');
        let piece_len = p.t_horizon_s / p.pieces as f64;
        for j in 0..p.pieces {
            out.push_str(&format!("{j},{}", j as f64 * piece_len));
            for row in &self.controls {
                out.push_str(&format!(",{}", row[j]));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Writes the accepted objective trace (`iteration,objective`).
    pub fn write_trace_csv(&self, path: &Path) -> Result<(), OptimError> {
        let mut out = String::from("iteration,penalized_objective\n");
        for (i, v) in self.trace.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// All-human objective on the same problem (the 0-AV baseline).
pub fn baseline_objective(p: &OcpProblem) -> Result<f64, OptimError> {
    let mut human = p.clone();
    human.av_mask = vec![false; p.n_vehicles()];
    let (j, _) = ocp_objective(&human, &[])?;
    Ok(j)
}

fn clip(p: &OcpProblem, u: &mut [Vec<f64>]) {
    for row in u.iter_mut() {
        for x in row.iter_mut() {
            *x = x.clamp(p.u_min, p.u_max);
        }
    }
}

/// Projected gradient descent with backtracking from a starting schedule,
/// optionally restricted to a subset of AV slots. Returns the final
/// controls, objective, and the accepted (monotone) trace.
fn descend(
    p: &OcpProblem,
    start: Vec<Vec<f64>>,
    active_slots: Option<&[usize]>,
    iterations: usize,
    trace: &mut Vec<f64>,
) -> Result<(Vec<Vec<f64>>, f64), OptimError> {
    let mut u = start;
    let mut best = penalized_objective(p, &u)?;
    if !best.is_finite() {
        return Err(OptimError::Infeasible("starting schedule collides".into()));
    }
    if trace.is_empty() {
        trace.push(best);
    }
    let mut step = 0.1;
    for _ in 0..iterations {
        let mut grad = ocp_gradient_adjoint(p, &u)?;
        if let Some(slots) = active_slots {
            for (s, row) in grad.iter_mut().enumerate() {
                if !slots.contains(&s) {
                    row.iter_mut().for_each(|g| *g = 0.0);
                }
            }
        }
        let gnorm2: f64 = grad.iter().flatten().map(|g| g * g).sum();
        if gnorm2.sqrt() < 1e-10 {
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand = u.clone();
            for (s, row) in cand.iter_mut().enumerate() {
                for (j, x) in row.iter_mut().enumerate() {
                    *x -= step * grad[s][j];
                }
            }
            clip(p, &mut cand);
            let dist2: f64 = cand
                .iter()
                .flatten()
                .zip(u.iter().flatten())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist2 == 0.0 {
                break;
            }
            let f = penalized_objective(p, &cand)?;
            // Armijo condition adapted to the projected step.
            if f.is_finite() && f <= best - 1e-4 / step * dist2 {
                u = cand;
                best = f;
                trace.push(best);
                accepted = true;
                step = (step * 1.5).min(10.0);
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((u, best))
}

fn finish(
    p: &OcpProblem,
    controls: Vec<Vec<f64>>,
    trace: Vec<f64>,
) -> Result<OcpResult, OptimError> {
    let (objective, penalty) = ocp_objective(p, &controls)?;
    // Feasibility audit: the penalty terms must be negligible at the end.
    if penalty.total() > 1e-3 {
        return Err(OptimError::Infeasible(format!(
            "constraint violations remain: gap_low {:.3e}, gap_high {:.3e}, v_neg {:.3e}",
            penalty.gap_low, penalty.gap_high, penalty.v_neg
        )));
    }
    let baseline = baseline_objective(p)?;
    Ok(OcpResult {
        iterations: trace.len().saturating_sub(1),
        controls,
        trace,
        objective,
        penalty,
        baseline_objective: baseline,
    })
}

/// Joint projected-gradient optimization of all AV schedules from the
/// CFM-mimic warm start.
pub fn ocp_optimize(p: &OcpProblem, iterations: usize) -> Result<OcpResult, OptimError> {
    p.validate()?;
    let start = cfm_mimic_controls(p)?;
    let mut trace = Vec::new();
    let (controls, _) = descend(p, start, None, iterations, &mut trace)?;
    finish(p, controls, trace)
}

/// Sequential variant: each AV is optimized alone, front to back, followed
/// by one joint refinement pass. The accepted trace spans all passes and
/// stays monotone because every pass descends the same penalized objective.
pub fn ocp_optimize_sequential(p: &OcpProblem, iterations: usize) -> Result<OcpResult, OptimError> {
    p.validate()?;
    let n_av = p.av_indices().len();
    if n_av == 0 {
        return Err(OptimError::BadProblem("no AVs to optimize".into()));
    }
    // Half the budget on single-AV passes front to back, half on the joint
    // refinement, which does most of the late-stage work.
    let per_single = (iterations / (2 * n_av)).max(1);
    let mut u = cfm_mimic_controls(p)?;
    let mut trace = Vec::new();
    for slot in 0..n_av {
        let (next, _) = descend(p, u, Some(&[slot]), per_single, &mut trace)?;
        u = next;
    }
    let joint = iterations.saturating_sub(n_av * per_single).max(1);
    let (u, _) = descend(p, u, None, joint, &mut trace)?;
    finish(p, u, trace)
}
