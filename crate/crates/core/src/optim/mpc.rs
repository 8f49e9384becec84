//! Receding-horizon gap-constrained speed control as a small QP.
//!
//! Each solve minimizes squared acceleration over the horizon subject to
//! double-integrator dynamics, speed limits, acceleration bounds, and a
//! minimum-gap constraint against a predicted leader position sequence.
//! Only the first acceleration is dispatched.

use super::qp::{solve_qp, Qp, PRIMAL_TOL};
use super::OptimError;
use crate::control::accel::{AccelConfig, AccelController, LocalObservation};
use crate::control::lane_change::LaneChangeConfig;
use crate::planner::SpeedPlan;
use crate::sim::LeaderTrajectory;

/// One horizon's worth of problem data.
#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Horizon length in steps (>= 1).
    pub n: usize,
    /// Step length, s.
    pub dt_s: f64,
    /// Ego position, m.
    pub x0_m: f64,
    /// Ego speed, m/s.
    pub v0_mps: f64,
    /// Predicted leader positions at steps 1..=n, m.
    pub lead_pos_m: Vec<f64>,
    /// Speed limit over the horizon, m/s.
    pub v_limit_mps: f64,
    /// Acceleration bounds, m/s^2.
    pub u_min: f64,
    pub u_max: f64,
    /// Required bumper-to-bumper gap behind the predicted leader, m.
    pub min_gap_m: f64,
}

impl QpProblem {
    pub fn validate(&self) -> Result<(), OptimError> {
        if self.n == 0 {
            return Err(OptimError::BadProblem("horizon must be >= 1".into()));
        }
        if !(self.dt_s > 0.0) {
            return Err(OptimError::BadProblem("dt must be positive".into()));
        }
        if self.u_min >= self.u_max {
            return Err(OptimError::BadProblem(format!(
                "accel bounds inverted: [{}, {}]",
                self.u_min, self.u_max
            )));
        }
        if !(self.v_limit_mps > 0.0) {
            return Err(OptimError::BadProblem("speed limit must be positive".into()));
        }
        if self.min_gap_m < 0.0 {
            return Err(OptimError::BadProblem("min gap must be nonnegative".into()));
        }
        if self.lead_pos_m.len() != self.n {
            return Err(OptimError::BadProblem(format!(
                "leader prediction has {} entries for horizon {}",
                self.lead_pos_m.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Speeds at steps 1..=n under controls `u`.
    pub fn speeds(&self, u: &[f64]) -> Vec<f64> {
        let mut v = self.v0_mps;
        u.iter()
            .map(|&ui| {
                v += ui * self.dt_s;
                v
            })
            .collect()
    }

    /// Positions at steps 1..=n under controls `u`
    /// (x += v dt + u dt^2 / 2 each step).
    pub fn positions(&self, u: &[f64]) -> Vec<f64> {
        let mut x = self.x0_m;
        let mut v = self.v0_mps;
        u.iter()
            .map(|&ui| {
                x += v * self.dt_s + 0.5 * ui * self.dt_s * self.dt_s;
                v += ui * self.dt_s;
                x
            })
            .collect()
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        u.iter().map(|ui| ui * ui * self.dt_s).sum()
    }

    /// Worst violation across all constraints (0 when admissible), with a
    /// small slack argument for grid oracles.
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for &ui in u {
            worst = worst.max(ui - self.u_max).max(self.u_min - ui);
        }
        let vs = self.speeds(u);
        let xs = self.positions(u);
        for k in 0..self.n {
            worst = worst.max(vs[k] - self.v_limit_mps).max(-vs[k]);
            worst = worst.max(xs[k] + self.min_gap_m - self.lead_pos_m[k]);
        }
        worst
    }

    /// Maximum-braking control sequence (brake at `u_min`, easing off to
    /// hold exactly v = 0). This is the most conservative admissible input;
    /// if it violates the gap constraint the problem is infeasible.
    pub fn max_braking_controls(&self) -> Vec<f64> {
        let mut v = self.v0_mps;
        let mut out = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let ui = self.u_min.max(-v / self.dt_s).min(self.u_max);
            v += ui * self.dt_s;
            out.push(ui);
        }
        out
    }

    fn to_qp(&self) -> Qp {
        let n = self.n;
        let dt = self.dt_s;
        let h: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 2.0 * dt } else { 0.0 }).collect())
            .collect();
        let mut a_ub = Vec::new();
        let mut b_ub = Vec::new();
        // Control bounds.
        for i in 0..n {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            a_ub.push(row.clone());
            b_ub.push(self.u_max);
            row[i] = -1.0;
            a_ub.push(row);
            b_ub.push(-self.u_min);
        }
        // Speed window and gap constraint at each step k (1-based).
        for k in 1..=n {
            let mut v_row = vec![0.0; n];
            for cell in v_row.iter_mut().take(k) {
                *cell = dt;
            }
            a_ub.push(v_row.clone());
            b_ub.push(self.v_limit_mps - self.v0_mps);
            let neg: Vec<f64> = v_row.iter().map(|c| -c).collect();
            a_ub.push(neg);
            b_ub.push(self.v0_mps);

            let mut x_row = vec![0.0; n];
            for (i, cell) in x_row.iter_mut().enumerate().take(k) {
                *cell = dt * dt * (k as f64 - i as f64 - 0.5);
            }
            a_ub.push(x_row);
            b_ub.push(
                self.lead_pos_m[k - 1] - self.x0_m - k as f64 * dt * self.v0_mps - self.min_gap_m,
            );
        }
        Qp { h, g: vec![0.0; n], a_ub, b_ub }
    }
}

/// Solved horizon: the full sequence plus the dispatched first element.
#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub u: Vec<f64>,
    pub objective: f64,
    /// Smallest predicted slack of the gap constraint over the horizon, m.
    pub min_gap_slack_m: f64,
}

impl MpcSolution {
    pub fn dispatch(&self) -> f64 {
        self.u[0]
    }
}

/// Solves the horizon QP. Errors with [`OptimError::Infeasible`] when even
/// maximum braking violates the constraints (the caller's documented
/// recovery is the local controller's command).
pub fn mpc_solve(p: &QpProblem) -> Result<MpcSolution, OptimError> {
    p.validate()?;
    let start = p.max_braking_controls();
    let qp = p.to_qp();
    if qp.max_violation(&start) > PRIMAL_TOL {
        return Err(OptimError::Infeasible(format!(
            "max braking still violates constraints by {:.6} m",
            qp.max_violation(&start)
        )));
    }
    let sol = solve_qp(&qp, &start)?;
    let xs = p.positions(&sol.u);
    let slack = (0..p.n)
        .map(|k| p.lead_pos_m[k] - xs[k] - p.min_gap_m)
        .fold(f64::INFINITY, f64::min);
    Ok(MpcSolution { objective: p.objective(&sol.u), u: sol.u, min_gap_slack_m: slack })
}

/// Predicted leader positions at steps `1..=n`.
///
/// Short term (first 2 s) extrapolates the observed state at constant
/// acceleration; long term advances a copy of the leader at the plan's
/// target speed at its predicted position; the two blend linearly over
/// 2-4 s. Without a plan the extrapolation is used throughout. The result
/// is forced nondecreasing so it is usable as a gap bound.
pub fn leader_predict(
    plan: Option<&SpeedPlan>,
    lead_x: f64,
    lead_v: f64,
    lead_a: f64,
    dt: f64,
    n: usize,
) -> Vec<f64> {
    let short = |t: f64| -> f64 {
        if lead_a < 0.0 && lead_v + lead_a * t < 0.0 {
            lead_x + lead_v * lead_v / (2.0 * -lead_a)
        } else {
            lead_x + lead_v * t + 0.5 * lead_a * t * t
        }
    };
    let mut out = Vec::with_capacity(n);
    let mut x_long = lead_x;
    let mut prev = lead_x;
    for k in 1..=n {
        let t = k as f64 * dt;
        let blended = match plan {
            Some(plan) => {
                x_long += plan.query(x_long, 0).max(0.0) * dt;
                let w = ((4.0 - t) / 2.0).clamp(0.0, 1.0);
                w * short(t) + (1.0 - w) * x_long
            }
            None => short(t),
        };
        prev = blended.max(prev);
        out.push(prev);
    }
    out
}

/// Closed-loop receding-horizon trace.
#[derive(Debug, Clone)]
pub struct MpcRollout {
    pub t_s: Vec<f64>,
    pub x_m: Vec<f64>,
    pub v_mps: Vec<f64>,
    pub u_mps2: Vec<f64>,
    pub gap_m: Vec<f64>,
    /// Ticks where the QP was infeasible and the local controller's command
    /// was dispatched instead.
    pub fallback_ticks: usize,
}

/// Receding-horizon rollout behind a replayed leader with an oracle
/// prediction (the actual future positions). Infeasible solves fall back to
/// the direct-acceleration controller's command, counted in the result.
#[allow(clippy::too_many_arguments)]
pub fn mpc_closed_loop(
    traj: &LeaderTrajectory,
    horizon: usize,
    dt: f64,
    x0: f64,
    v0: f64,
    v_limit: f64,
    u_bounds: (f64, f64),
    min_gap: f64,
    steps: usize,
) -> Result<MpcRollout, OptimError> {
    // Leader positions on the dt grid by trapezoid (exact for the piecewise
    // linear replay profiles).
    let mut lead_x = vec![0.0f64; steps + horizon + 1];
    for k in 1..lead_x.len() {
        let (t0, t1) = ((k - 1) as f64 * dt, k as f64 * dt);
        lead_x[k] = lead_x[k - 1] + 0.5 * (traj.speed_at(t0) + traj.speed_at(t1)) * dt;
    }

    let mut fallback = AccelController::new(AccelConfig::default(), LaneChangeConfig::default(), dt);
    let mut out = MpcRollout {
        t_s: Vec::new(),
        x_m: Vec::new(),
        v_mps: Vec::new(),
        u_mps2: Vec::new(),
        gap_m: Vec::new(),
        fallback_ticks: 0,
    };
    let (mut x, mut v) = (x0, v0);
    for k in 0..steps {
        let t = k as f64 * dt;
        let problem = QpProblem {
            n: horizon,
            dt_s: dt,
            x0_m: x,
            v0_mps: v,
            lead_pos_m: (1..=horizon).map(|j| lead_x[k + j]).collect(),
            v_limit_mps: v_limit,
            u_min: u_bounds.0,
            u_max: u_bounds.1,
            min_gap_m: min_gap,
        };
        let gap_now = lead_x[k] - x;
        let obs = LocalObservation {
            v,
            minicar: true,
            v_lead: traj.speed_at(t),
            a_lead: 0.0,
            h: gap_now,
            v_target: None,
        };
        let local = fallback.step(&obs);
        let u = match mpc_solve(&problem) {
            Ok(sol) => sol.dispatch(),
            Err(OptimError::Infeasible(_)) => {
                out.fallback_ticks += 1;
                local.filtered
            }
            Err(e) => return Err(e),
        };
        out.t_s.push(t);
        out.x_m.push(x);
        out.v_mps.push(v);
        out.u_mps2.push(u);
        out.gap_m.push(gap_now);
        x += v * dt + 0.5 * u * dt * dt;
        v += u * dt;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{gen_constant, gen_pulse};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn far_leader_problem() -> QpProblem {
        QpProblem {
            n: 10,
            dt_s: 0.5,
            x0_m: 0.0,
            v0_mps: 25.0,
            lead_pos_m: (1..=10).map(|k| 5000.0 + 25.0 * 0.5 * k as f64).collect(),
            v_limit_mps: 25.0,
            u_min: -3.0,
            u_max: 1.5,
            min_gap_m: 5.0,
        }
    }

    #[test]
    fn coasting_is_optimal_when_unconstrained() {
        // At the speed limit with the leader far away, zero input is
        // feasible and minimizes the acceleration norm.
        let sol = mpc_solve(&far_leader_problem()).unwrap();
        for &u in &sol.u {
            assert_abs_diff_eq!(u, 0.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(sol.objective, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tiny_instance_matches_exhaustive_grid_oracle() {
        // N = 3 with a 5-level acceleration grid per step: enumerate all
        // 125 sequences, keep admissible ones, compare objectives.
        let p = QpProblem {
            n: 3,
            dt_s: 1.0,
            x0_m: 0.0,
            v0_mps: 20.0,
            lead_pos_m: vec![25.0, 40.0, 55.0], // leader at 15 m/s from x = 10
            v_limit_mps: 30.0,
            u_min: -3.0,
            u_max: 1.5,
            min_gap_m: 4.0,
        };
        let sol = mpc_solve(&p).unwrap();
        assert!(p.max_violation(&sol.u) <= 1e-7);

        let levels: Vec<f64> =
            (0..5).map(|i| p.u_min + i as f64 * (p.u_max - p.u_min) / 4.0).collect();
        let delta = (p.u_max - p.u_min) / 4.0;
        let mut best = f64::INFINITY;
        let mut best_u = vec![0.0; 3];
        for &a in &levels {
            for &b in &levels {
                for &c in &levels {
                    let u = vec![a, b, c];
                    if p.max_violation(&u) <= 1e-9 && p.objective(&u) < best {
                        best = p.objective(&u);
                        best_u = u;
                    }
                }
            }
        }
        assert!(best.is_finite(), "grid found no admissible sequence");
        // The continuous optimum can only improve on the grid...
        assert!(sol.objective <= best + 1e-9, "QP {} worse than grid {best}", sol.objective);
        // ...and the grid is within one resolution step of it: perturbing
        // each grid control by at most delta covers the continuum.
        let slack: f64 = (0..3)
            .map(|i| {
                let du = (sol.u[i] - best_u[i]).abs().min(delta);
                p.dt_s * du * (2.0 * best_u[i].abs() + du)
            })
            .sum();
        assert!(
            best - sol.objective <= slack + 1e-9,
            "grid {best} further than resolution {slack} from QP {}",
            sol.objective
        );
    }

    #[test]
    fn active_gap_constraint_is_tight() {
        // Leader slow and close: max braking keeps the buffer (barely), but
        // coasting would not, so the optimum rides the gap constraint.
        let p = QpProblem {
            n: 6,
            dt_s: 0.5,
            x0_m: 0.0,
            v0_mps: 20.0,
            lead_pos_m: (1..=6).map(|k| 15.0 + 10.0 * 0.5 * k as f64).collect(),
            v_limit_mps: 30.0,
            u_min: -6.0,
            u_max: 1.5,
            min_gap_m: 4.0,
        };
        let sol = mpc_solve(&p).unwrap();
        assert!(p.max_violation(&sol.u) <= 1e-7, "solution must be admissible");
        assert!(
            sol.min_gap_slack_m.abs() <= 1e-6,
            "expected an active gap constraint, slack = {} m",
            sol.min_gap_slack_m
        );
    }

    #[test]
    fn infeasible_when_braking_cannot_save_the_gap() {
        let p = QpProblem {
            n: 4,
            dt_s: 0.5,
            x0_m: 0.0,
            v0_mps: 30.0,
            lead_pos_m: vec![10.0, 10.0, 10.0, 10.0], // stopped leader 10 m ahead
            v_limit_mps: 33.0,
            u_min: -3.0,
            u_max: 1.5,
            min_gap_m: 4.0,
        };
        match mpc_solve(&p) {
            Err(OptimError::Infeasible(_)) => {}
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn prediction_exact_for_constant_leader_with_matching_plan() {
        use crate::planner::{LanePlan, SpeedPlan};
        let plan = SpeedPlan {
            t_s: 0.0,
            lanes: vec![LanePlan { lane: 0, points: vec![(0.0, 22.0), (8000.0, 22.0)] }],
        };
        let pred = leader_predict(Some(&plan), 100.0, 22.0, 0.0, 0.5, 12);
        for (k, &p) in pred.iter().enumerate() {
            let t = (k + 1) as f64 * 0.5;
            assert_relative_eq!(p, 100.0 + 22.0 * t, max_relative = 1e-12);
        }
    }

    #[test]
    fn short_term_prediction_is_kinematic() {
        // First 2 s of a braking leader follow x + vt + at^2/2 exactly.
        let pred = leader_predict(None, 50.0, 20.0, -2.0, 0.5, 8);
        for k in 1..=4 {
            let t = k as f64 * 0.5;
            assert_relative_eq!(
                pred[k - 1],
                50.0 + 20.0 * t - 1.0 * t * t,
                max_relative = 1e-12
            );
        }
        // A braking leader is never predicted to reverse.
        let stopping = leader_predict(None, 0.0, 3.0, -2.0, 0.5, 10);
        for w in stopping.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_relative_eq!(
            *stopping.last().unwrap(),
            9.0 / 4.0, // v^2 / 2a
            max_relative = 1e-12
        );
    }

    #[test]
    fn replay_prediction_error_is_measured() {
        // Oracle: replay a pulse profile, predict from each state without a
        // plan, and accumulate the 4 s-ahead position error. The point of
        // the test is that the error is computed, finite, and sane.
        let traj = gen_pulse(20.0, 5.0, 20.0, 10.0, 60.0).unwrap();
        let dt = 0.5;
        let n = 8;
        let mut x = vec![0.0];
        for k in 1..=(60.0_f64 / dt) as usize {
            let (t0, t1) = ((k - 1) as f64 * dt, k as f64 * dt);
            x.push(x[k - 1] + 0.5 * (traj.speed_at(t0) + traj.speed_at(t1)) * dt);
        }
        let mut sq = 0.0;
        let mut count = 0;
        for k in 0..(x.len() - n) {
            let t = k as f64 * dt;
            let a = (traj.speed_at(t + 0.1) - traj.speed_at(t)) / 0.1;
            let pred = leader_predict(None, x[k], traj.speed_at(t), a, dt, n);
            sq += (pred[n - 1] - x[k + n]).powi(2);
            count += 1;
        }
        let rmse = (sq / count as f64).sqrt();
        assert!(rmse.is_finite());
        assert!(rmse < 10.0, "4 s-ahead RMSE {rmse} m is implausibly large");
        assert!(rmse > 0.0, "prediction cannot be exact through the pulse");
    }

    #[test]
    fn closed_loop_never_violates_min_gap_with_oracle_prediction() {
        // Leader cruises at 25, dips to 7, recovers; ego starts close to the
        // constraint boundary.
        let traj = gen_pulse(25.0, 18.0, 25.0, 10.0, 80.0).unwrap();
        let roll = mpc_closed_loop(
            &traj,
            16,
            0.5,
            -15.0,
            25.0,
            30.0,
            (-3.0, 1.5),
            4.0,
            (70.0_f64 / 0.5) as usize,
        )
        .unwrap();
        assert_eq!(roll.fallback_ticks, 0, "oracle prediction must stay feasible");
        for (k, &g) in roll.gap_m.iter().enumerate() {
            assert!(g >= 4.0 - 1e-6, "gap violated at step {k}: {g} m");
        }
        // The wave forces actual braking.
        assert!(roll.u_mps2.iter().any(|&u| u < -0.5));
    }

    #[test]
    fn randomized_instances_are_admissible_and_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for case in 0..40 {
            let n = rng.gen_range(2..10);
            let dt = 0.5;
            let v0: f64 = rng.gen_range(5.0..28.0);
            let lead_v: f64 = rng.gen_range(2.0..28.0);
            let gap0: f64 = rng.gen_range(20.0..120.0);
            let p = QpProblem {
                n,
                dt_s: dt,
                x0_m: 0.0,
                v0_mps: v0,
                lead_pos_m: (1..=n).map(|k| gap0 + lead_v * dt * k as f64).collect(),
                v_limit_mps: 30.0,
                u_min: -6.0,
                u_max: 1.5,
                min_gap_m: 4.0,
            };
            match mpc_solve(&p) {
                Ok(sol) => {
                    assert!(
                        p.max_violation(&sol.u) <= 1e-7,
                        "case {case}: violation {}",
                        p.max_violation(&sol.u)
                    );
                }
                Err(OptimError::Infeasible(_)) => {
                    // Max braking genuinely fails: verify independently.
                    let start = p.max_braking_controls();
                    assert!(p.max_violation(&start) > 1e-9, "case {case}: spurious infeasibility");
                }
                Err(e) => panic!("case {case}: {e}"),
            }
        }
    }

    #[test]
    fn constant_leader_rollout_keeps_zero_accel() {
        let traj = gen_constant(20.0, 40.0).unwrap();
        let roll =
            mpc_closed_loop(&traj, 10, 0.5, -50.0, 20.0, 25.0, (-3.0, 1.5), 4.0, 60).unwrap();
        for &u in &roll.u_mps2 {
            assert_abs_diff_eq!(u, 0.0, epsilon = 1e-8);
        }
    }
}
