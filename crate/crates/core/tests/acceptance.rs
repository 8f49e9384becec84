//! Acceptance gate: one test per release criterion, each ending in a single
//! PASS line with the measured numbers. Tolerances are pinned inline next to
//! the assertions they guard.

use std::collections::HashMap;
use std::time::Instant;

use flowsim_core::cfm::IdmParams;
use flowsim_core::control::accel::{AccelConfig, AccelController, LocalObservation};
use flowsim_core::control::acc::{
    clip_speed_setting, SPEED_SETTING_MAX_MPH, SPEED_SETTING_MIN_MPH,
};
use flowsim_core::control::lane_change::LaneChangeConfig;
use flowsim_core::edie::edie_fields;
use flowsim_core::energy::{default_models, model_by_class, EnergyModel};
use flowsim_core::kpi::{self, audit_plan_cadence, audit_plan_causality, baseline_scenario};
use flowsim_core::optim::ocp::{
    baseline_objective, cfm_mimic_controls, ocp_gradient_adjoint, ocp_gradient_fd, ocp_optimize,
    ocp_optimize_sequential, OcpProblem,
};
use flowsim_core::optim::{mpc_closed_loop, mpc_solve, OptimError, QpProblem};
use flowsim_core::planner::{PlannerConfig, SegmentEstimate, SpeedPlanner};
use flowsim_core::sim::{
    benchmark_steps_per_sec, gen_pulse, gen_stop_and_go, run_scenario, CutEvent, LeaderSource,
    RunArtifact, Scenario, VehicleKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sedan() -> EnergyModel {
    model_by_class(&default_models(), "midsize sedan").unwrap().clone()
}

/// Per-vehicle speed-dip amplitude below the cruise speed, in platoon order.
fn dip_amplitudes(art: &RunArtifact, ids: &[String], v_cruise: f64) -> Vec<f64> {
    let mut min_v: HashMap<&str, f64> = ids.iter().map(|id| (id.as_str(), v_cruise)).collect();
    for row in &art.trajectories {
        if let Some(m) = min_v.get_mut(row.vehicle_id.as_str()) {
            *m = m.min(row.v_mps);
        }
    }
    ids.iter().map(|id| v_cruise - min_v[id.as_str()]).collect()
}

/// Criterion 1: a platoon of default-parameter IDM followers is string
/// unstable — a small leader speed pulse grows monotonically from vehicle to
/// vehicle over 20 followers, and the run completes in under 5 s.
#[test]
fn criterion_01_string_instability() {
    let started = Instant::now();
    let v_eq = 24.0;
    let mut sc = Scenario::freeflow(v_eq, vec![VehicleKind::Human; 20], 180.0);
    sc.name = "string-instability".into();
    sc.leader = LeaderSource::Pulse {
        v_eq_mps: v_eq,
        dip_mps: 1.0,
        period_s: 20.0,
        start_s: 10.0,
    };
    let art = run_scenario(&sc).expect("pulse run must be collision free");
    let elapsed = started.elapsed().as_secs_f64();

    let ids: Vec<String> = (0..20).map(|i| format!("human-{i}")).collect();
    let amp = dip_amplitudes(&art, &ids, v_eq);
    for i in 1..amp.len() {
        assert!(
            amp[i] > amp[i - 1],
            "amplitude must grow along the platoon: vehicle {i} has {} <= {}",
            amp[i],
            amp[i - 1]
        );
    }
    assert!(
        amp[19] < v_eq,
        "growth stayed in the unsaturated regime (last dip {} m/s)",
        amp[19]
    );
    assert!(elapsed < 5.0, "run took {elapsed:.2} s, budget is 5 s");
    println!(
        "criterion 01 string instability: PASS (dip {:.3} -> {:.3} m/s over 20 vehicles, \
         strictly monotone, {elapsed:.2} s < 5 s)",
        amp[0], amp[19]
    );
}

/// Criterion 2: one direct-acceleration AV leading 20 IDM followers through a
/// stop-and-go wave improves platoon fuel economy over the all-human baseline
/// in every one of 5 seeds, with zero collisions. The 5% figure is a soft
/// target and is reported, not gated.
#[test]
fn criterion_02_wave_dampening() {
    let model = sedan();
    let mut improvements = Vec::new();
    for seed in 1..=5u64 {
        let sc = Scenario::shockwave(seed, 20, true);
        let base = baseline_scenario(&sc, seed);
        let art_av = run_scenario(&sc).expect("AV run must be collision free");
        let art_h = run_scenario(&base).expect("baseline run must be collision free");
        let kind = kpi::ScenarioKind::infer(&sc);
        let mpg_av = kpi::kpis(&art_av, &model, kind).unwrap().fuel_economy_mpg;
        let mpg_h = kpi::kpis(&art_h, &model, kind).unwrap().fuel_economy_mpg;
        let gain_pct = (mpg_av - mpg_h) / mpg_h * 100.0;
        assert!(
            gain_pct > 0.0,
            "seed {seed}: fuel economy must improve, got {gain_pct:.3}% ({mpg_av:.3} vs {mpg_h:.3} mpg)"
        );
        improvements.push(gain_pct);
    }
    let mean = improvements.iter().sum::<f64>() / improvements.len() as f64;
    let target_met = if mean >= 5.0 { "met" } else { "not met" };
    println!(
        "criterion 02 wave dampening: PASS (fuel economy +{:.2}%..+{:.2}% across 5 seeds, \
         mean +{mean:.2}%, zero collisions; soft 5% target {target_met})",
        improvements.iter().cloned().fold(f64::INFINITY, f64::min),
        improvements.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
}

/// Criterion 3: trajectory optimization. One AV strictly beats the all-human
/// baseline; eight AVs on the same leader do at least as well as one; the
/// adjoint gradient matches central finite differences to 1e-4 relative at
/// three control meshes; and each optimization finishes inside 60 s.
#[test]
fn criterion_03_trajectory_optimization() {
    let leader = gen_stop_and_go(11, 70.0, 20.0, 13.0).unwrap();

    // Gradient audit on a smaller pulse problem, meshes 10/20/40.
    let mut worst_rel = 0.0f64;
    for pieces in [10usize, 20, 40] {
        let lead = gen_pulse(20.0, 2.5, 15.0, 5.0, 40.0).unwrap();
        let p = OcpProblem::behind_leader(lead, 5, &[0], 30.0, pieces).unwrap();
        let mut u = cfm_mimic_controls(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for row in u.iter_mut() {
            for v in row.iter_mut() {
                *v = (*v + rng.gen_range(-0.02..0.02)).clamp(p.u_min, p.u_max);
            }
        }
        let ga = ocp_gradient_adjoint(&p, &u).unwrap();
        let gf = ocp_gradient_fd(&p, &u, 1e-6).unwrap();
        let sup_diff = ga
            .iter()
            .flatten()
            .zip(gf.iter().flatten())
            .map(|(a, f)| (a - f).abs())
            .fold(0.0f64, f64::max);
        let sup_fd = gf.iter().flatten().map(|f| f.abs()).fold(0.0f64, f64::max);
        worst_rel = worst_rel.max(sup_diff / sup_fd);
    }
    assert!(worst_rel <= 1e-4, "gradient relative error {worst_rel:.3e} > 1e-4");

    let single = OcpProblem::behind_leader(leader.clone(), 9, &[0], 60.0, 20).unwrap();
    let j0 = baseline_objective(&single).unwrap();
    let t1 = Instant::now();
    let r1 = ocp_optimize(&single, 60).unwrap();
    let t1 = t1.elapsed().as_secs_f64();
    assert!(t1 < 60.0, "single-AV optimization took {t1:.1} s");
    let red1 = r1.reduction_pct();
    assert!(red1 > 0.0, "single AV must improve on the baseline, got {red1:.3}%");

    let multi =
        OcpProblem::behind_leader(leader, 9, &[0, 1, 2, 3, 4, 5, 6, 7], 60.0, 20).unwrap();
    let t8 = Instant::now();
    let r8 = ocp_optimize_sequential(&multi, 240).unwrap();
    let t8 = t8.elapsed().as_secs_f64();
    assert!(t8 < 60.0, "eight-AV optimization took {t8:.1} s");
    assert!(
        r8.objective <= r1.objective,
        "more AVs must not do worse: 8-AV {} vs 1-AV {}",
        r8.objective,
        r1.objective
    );
    let red8 = r8.reduction_pct();
    println!(
        "criterion 03 trajectory optimization: PASS (baseline {j0:.1}; 1 AV -{red1:.1}% in \
         {t1:.1} s; 8 AVs -{red8:.1}% in {t8:.1} s; gradient rel err {worst_rel:.2e} <= 1e-4)"
    );
}

/// Criterion 4: the horizon QP matches exhaustive enumeration on a 5-level
/// acceleration grid for N = 3 instances (within the grid's own resolution),
/// and a receding-horizon rollout with exact leader prediction never violates
/// the minimum gap.
#[test]
fn criterion_04_mpc_oracle_and_gap() {
    let check_against_grid = |p: &QpProblem| -> Option<f64> {
        let sol = match mpc_solve(p) {
            Ok(s) => s,
            Err(OptimError::Infeasible(_)) => {
                // Genuinely infeasible instances are certified by the most
                // conservative input still violating the constraints.
                assert!(p.max_violation(&p.max_braking_controls()) > 1e-9);
                return None;
            }
            Err(e) => panic!("{e}"),
        };
        assert!(p.max_violation(&sol.u) <= 1e-7, "solution must be admissible");
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
        if !best.is_finite() {
            return None; // grid too coarse to find any admissible point
        }
        assert!(
            sol.objective <= best + 1e-9,
            "QP {} must not lose to the grid {best}",
            sol.objective
        );
        // One grid step of movement per control bounds how far the grid
        // optimum can sit above the continuous one.
        let slack: f64 = (0..3)
            .map(|i| {
                let du = (sol.u[i] - best_u[i]).abs().min(delta);
                p.dt_s * du * (2.0 * best_u[i].abs() + du)
            })
            .sum();
        assert!(
            best - sol.objective <= slack + 1e-9,
            "grid best {best} further than one resolution step from QP {}",
            sol.objective
        );
        Some(best - sol.objective)
    };

    // Pinned instance: leader at 15 m/s from 10 m ahead, ego at 20 m/s.
    let pinned = QpProblem {
        n: 3,
        dt_s: 1.0,
        x0_m: 0.0,
        v0_mps: 20.0,
        lead_pos_m: vec![25.0, 40.0, 55.0],
        v_limit_mps: 30.0,
        u_min: -3.0,
        u_max: 1.5,
        min_gap_m: 4.0,
    };
    assert!(check_against_grid(&pinned).is_some(), "pinned instance must be feasible");

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut compared = 1;
    for _ in 0..30 {
        let v0: f64 = rng.gen_range(5.0..28.0);
        let lead_v: f64 = rng.gen_range(4.0..25.0);
        let gap0: f64 = rng.gen_range(10.0..90.0);
        let p = QpProblem {
            n: 3,
            dt_s: 1.0,
            x0_m: 0.0,
            v0_mps: v0,
            lead_pos_m: (1..=3).map(|k| gap0 + lead_v * k as f64).collect(),
            v_limit_mps: 30.0,
            u_min: -3.0,
            u_max: 1.5,
            min_gap_m: 4.0,
        };
        if check_against_grid(&p).is_some() {
            compared += 1;
        }
    }
    assert!(compared >= 15, "want a solid sample of feasible instances, got {compared}");

    // Closed loop through a deep pulse with oracle prediction.
    let traj = gen_pulse(25.0, 18.0, 25.0, 10.0, 80.0).unwrap();
    let roll =
        mpc_closed_loop(&traj, 16, 0.5, -15.0, 25.0, 30.0, (-3.0, 1.5), 4.0, 140).unwrap();
    assert_eq!(roll.fallback_ticks, 0, "exact prediction must stay feasible");
    let min_gap = roll.gap_m.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min_gap >= 4.0 - 1e-6, "min gap {min_gap} m violated the 4 m constraint");
    println!(
        "criterion 04 mpc: PASS ({compared} N=3 instances match the 125-point grid within \
         resolution; closed-loop min gap {min_gap:.3} m >= 4 m, 0 fallbacks)"
    );
}

/// Criterion 5: the generalized-definition identity rho * u = q holds to
/// 1e-12 relative on every occupied box of real runs, and the single-vehicle
/// hand example (10 s x 200 m box crossed at 20 m/s) comes out exact.
#[test]
fn criterion_05_edie_identity() {
    let model = sedan();

    // Hand-computed box: one vehicle, 10 s in the box, 200 m traveled.
    let rows: Vec<flowsim_core::sim::TrajectoryRow> = (0..=20)
        .map(|k| flowsim_core::sim::TrajectoryRow {
            vehicle_id: "veh-0".into(),
            t_s: k as f64 * 0.5,
            x_m: k as f64 * 10.0,
            v_mps: 20.0,
            a_mps2: 0.0,
            kind: "human".into(),
            engaged: false,
        })
        .collect();
    let grid = edie_fields(&rows, &model, 10.0, 200.0).unwrap();
    assert_eq!(grid.density(0, 0), 0.005, "rho = 10 veh-s / 2000 m-s");
    assert_eq!(grid.flow(0, 0), 0.1, "q = 200 veh-m / 2000 m-s");
    assert_eq!(grid.speed(0, 0), Some(20.0), "u = q / rho");

    // Identity on every occupied box of two full runs.
    let mut boxes = 0usize;
    let mut worst = 0.0f64;
    for (name, sc) in [
        ("pulse", {
            let mut sc = Scenario::freeflow(24.0, vec![VehicleKind::Human; 12], 120.0);
            sc.leader = LeaderSource::Pulse {
                v_eq_mps: 24.0,
                dip_mps: 6.0,
                period_s: 20.0,
                start_s: 10.0,
            };
            sc
        }),
        ("stop-and-go", Scenario::shockwave(3, 10, true)),
    ] {
        let art = run_scenario(&sc).unwrap();
        let grid = edie_fields(&art.trajectories, &model, 10.0, 200.0).unwrap();
        for it in 0..grid.n_t {
            for ix in 0..grid.n_x {
                let Some(u) = grid.speed(it, ix) else { continue };
                let q = grid.flow(it, ix);
                let lhs = grid.density(it, ix) * u;
                let rel = (lhs - q).abs() / q.abs().max(f64::MIN_POSITIVE);
                assert!(
                    rel <= 1e-12,
                    "{name}: box ({it}, {ix}) violates rho*u = q: {lhs} vs {q}"
                );
                worst = worst.max(rel);
                boxes += 1;
            }
        }
    }
    assert!(boxes > 100, "expected a meaningful number of occupied boxes, got {boxes}");
    println!(
        "criterion 05 edie identity: PASS (hand box exact; rho*u = q on {boxes} occupied \
         boxes, worst relative error {worst:.2e} <= 1e-12)"
    );
}

/// Criterion 6: a scripted 65 m cut-in activates the recovery filter, the
/// filtered command's peak jerk is at least 50% below the raw controller's on
/// the same event (both within the run and against an unfiltered closed
/// loop), and the filter deactivates after a finite number of ticks.
#[test]
fn criterion_06_lane_change_filter() {
    let dt = 0.1;
    let cut_t = 30.0;
    let mut sc = Scenario::freeflow(28.0, vec![VehicleKind::AvAccel], 150.0);
    sc.name = "cut-in-recovery".into();
    sc.initial_gaps_m = Some(vec![100.0]);
    sc.events.push(CutEvent::CutIn {
        t_s: cut_t,
        ahead_of: "av-0".into(),
        gap_m: 65.0,
        speed_mps: 20.0,
    });
    let art = run_scenario(&sc).expect("cut-in run must be collision free");
    let trace = &art.traces["av-0"];

    let first_active = trace
        .iter()
        .position(|r| r.filter_active)
        .expect("filter must activate on the cut-in");
    assert!(
        (trace[first_active].t_s - cut_t).abs() <= 1.0,
        "activation at {} s, cut-in at {cut_t} s",
        trace[first_active].t_s
    );
    let deactivated = trace[first_active..]
        .iter()
        .position(|r| !r.filter_active)
        .expect("filter must deactivate in finite time");
    assert!(
        trace[first_active + deactivated..].iter().all(|r| !r.filter_active),
        "filter must not reactivate"
    );
    let eps = LaneChangeConfig::default().eps;
    let at_off = &trace[first_active + deactivated];
    assert!(
        (at_off.a_raw - at_off.a_final).abs() <= eps + 1e-9,
        "deactivation leaves |raw - filtered| = {} > eps",
        (at_off.a_raw - at_off.a_final).abs()
    );

    // Peak |jerk| in the recovery window, filtered vs raw, same run.
    let lo = first_active.saturating_sub(1);
    let hi = (first_active + deactivated + 50).min(trace.len());
    let peak = |pick: fn(&flowsim_core::sim::ControllerTraceRow) -> f64| -> f64 {
        trace[lo..hi]
            .windows(2)
            .map(|w| (pick(&w[1]) - pick(&w[0])).abs() / dt)
            .fold(0.0f64, f64::max)
    };
    let jerk_filtered = peak(|r| r.a_final);
    let jerk_raw = peak(|r| r.a_raw);
    assert!(
        jerk_filtered <= 0.5 * jerk_raw,
        "peak jerk {jerk_filtered:.2} must be at least halved vs raw {jerk_raw:.2}"
    );

    // Unfiltered closed loop on the same scripted event: the ego applies the
    // raw command; the cut-in becomes a default-parameter car follower, as in
    // the simulator.
    let idm = IdmParams::default();
    let mut ctl = AccelController::new(AccelConfig::default(), LaneChangeConfig::default(), dt);
    let len = 4.5;
    let (mut ego_x, mut ego_v) = (0.0, 28.0);
    let (mut lead_x, lead_v) = (100.0 + len, 28.0);
    let mut cut: Option<(f64, f64)> = None;
    let mut applied = Vec::new();
    for k in 0..1500usize {
        let t = k as f64 * dt;
        if t == cut_t {
            cut = Some((ego_x + 65.0 + len, 20.0));
        }
        let (front_x, front_v, front_a) = match cut {
            Some((cx, cv)) => (cx, cv, 0.0),
            None => (lead_x, lead_v, 0.0),
        };
        let comp = ctl.step(&LocalObservation {
            v: ego_v,
            minicar: true,
            v_lead: front_v,
            a_lead: front_a,
            h: front_x - ego_x - len,
            v_target: None,
        });
        applied.push(comp.raw);
        let a = comp.raw;
        if ego_v + a * dt >= 0.0 {
            ego_x += ego_v * dt + 0.5 * a * dt * dt;
            ego_v += a * dt;
        } else {
            ego_x += ego_v * ego_v / (2.0 * -a);
            ego_v = 0.0;
        }
        if let Some((cx, cv)) = cut {
            let g = lead_x - cx - len;
            let a_cut = flowsim_core::cfm::idm_accel(g, cv, cv - lead_v, &idm).unwrap();
            let nx = cx + cv * dt + 0.5 * a_cut * dt * dt;
            cut = Some((nx, (cv + a_cut * dt).max(0.0)));
            assert!(nx - ego_x - len > 0.0, "unfiltered arm must not collide");
        }
        lead_x += lead_v * dt;
    }
    let k_cut = (cut_t / dt) as usize;
    let jerk_unfiltered = applied[k_cut - 1..]
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / dt)
        .fold(0.0f64, f64::max);
    assert!(
        jerk_filtered <= 0.5 * jerk_unfiltered,
        "peak jerk {jerk_filtered:.2} must also halve the unfiltered closed loop's \
         {jerk_unfiltered:.2}"
    );
    println!(
        "criterion 06 lane-change filter: PASS (active {} ticks; peak jerk {jerk_filtered:.2} \
         vs raw {jerk_raw:.2} / unfiltered loop {jerk_unfiltered:.2} m/s^3)",
        deactivated
    );
}

/// Criterion 7: speed-setting clipping — the two arithmetic examples, plus
/// 1000 randomized cases that must all land inside both the absolute setting
/// range [20, 73] mph and the recent-mean band [mean - 15, mean + 5].
#[test]
fn criterion_07_setting_clipping() {
    let recent = |mean: f64| vec![Some(mean); 5];
    assert_eq!(clip_speed_setting(70.0, &recent(60.0)), Some(65.0));
    assert_eq!(clip_speed_setting(8.0, &recent(10.0)), Some(20.0));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        // Means below 15 mph push the band entirely under the absolute
        // minimum; the band is only meaningful where the two overlap.
        let mean: f64 = rng.gen_range(15.0..88.0);
        let jitter: f64 = rng.gen_range(-2.0..2.0);
        let speeds = vec![Some(mean - jitter), Some(mean + jitter), Some(mean)];
        let action: f64 = rng.gen_range(0.0..120.0);
        let got = clip_speed_setting(action, &speeds).unwrap();
        assert!(
            (SPEED_SETTING_MIN_MPH..=SPEED_SETTING_MAX_MPH).contains(&got),
            "case {case}: {got} outside the absolute range"
        );
        assert!(
            got >= mean - 15.0 - 1e-9 && got <= mean + 5.0 + 1e-9,
            "case {case}: {got} outside the band around mean {mean}"
        );
    }
    println!(
        "criterion 07 setting clipping: PASS (60->70 => 65, 10->8 => 20, 1000 randomized \
         cases inside [20, 73] mph and the mean band)"
    );
}

/// Criterion 8: the planner pipeline. A constant free-flow field is a fixed
/// point end to end; a -5 m/s wave observed through 180 s of latency is
/// placed within one fine segment and beats persistence RMSE by at least
/// 30%; and the plan cadence and causality audits pass on a real event log.
#[test]
fn criterion_08_planner_pipeline() {
    let cfg = PlannerConfig {
        corridor_start_m: 0.0,
        corridor_end_m: 8000.0,
        source_latency_s: 180.0,
        wave_speed_mps: -5.0,
        free_speed_mps: 30.0,
        ..PlannerConfig::default()
    };
    let feed = |p: &mut SpeedPlanner, t: f64, profile: &dyn Fn(f64) -> f64| {
        let n = ((cfg.corridor_end_m - cfg.corridor_start_m) / 800.0).ceil() as u32;
        for j in 0..n {
            let x = cfg.corridor_start_m + (j as f64 + 0.5) * 800.0;
            p.ingest_estimate(SegmentEstimate {
                segment_id: j,
                x_center_m: x,
                speed_mps: profile(x),
                measured_t_s: t,
            })
            .unwrap();
        }
    };

    // Fixed point: a constant 30 m/s field survives prediction, smoothing,
    // bottleneck logic, and publication unchanged.
    let mut p = SpeedPlanner::new(cfg).unwrap();
    feed(&mut p, 0.0, &|_| 30.0);
    let plan = p.update(200.0).unwrap();
    for lp in &plan.lanes {
        for &(_, v) in &lp.points {
            assert!((v - 30.0).abs() <= 1e-12, "fixed point drifted to {v}");
        }
    }

    // Wave localization. Truth: a dip translating at -5 m/s; the source saw
    // it 180 s ago.
    let dip = |x: f64, center: f64| if (x - center).abs() <= 600.0 { 8.0 } else { 30.0 };
    let measured_center = 5500.0;
    let mut p = SpeedPlanner::new(cfg).unwrap();
    feed(&mut p, 0.0, &|x| dip(x, measured_center));
    let now = 180.0;
    let predicted = p.predict_tse(now).unwrap();
    let true_center = measured_center + cfg.wave_speed_mps * now;
    let thr = 0.6 * 30.0;
    let (mut num, mut den) = (0.0, 0.0);
    for &(x, v) in predicted.samples() {
        if v < thr {
            num += x;
            den += 1.0;
        }
    }
    let predicted_center = num / den;
    assert!(
        (predicted_center - true_center).abs() <= cfg.fine_segment_m,
        "dip predicted at {predicted_center} m, truly at {true_center} m"
    );
    let centers: Vec<f64> = (0..((8000.0 / cfg.fine_segment_m) as usize))
        .map(|i| (i as f64 + 0.5) * cfg.fine_segment_m)
        .collect();
    let rmse = |field: &dyn Fn(f64) -> f64| -> f64 {
        let sq: f64 = centers
            .iter()
            .map(|&x| (field(x) - dip(x, true_center)).powi(2))
            .sum();
        (sq / centers.len() as f64).sqrt()
    };
    let rmse_pred = rmse(&|x| predicted.value(x));
    let rmse_persist = rmse(&|x| dip(x, measured_center));
    assert!(
        rmse_pred <= 0.7 * rmse_persist,
        "prediction RMSE {rmse_pred:.2} must undercut persistence {rmse_persist:.2} by 30%"
    );

    // Audits on a real closed-loop event log.
    let mut sc = Scenario::freeflow(
        24.0,
        vec![
            VehicleKind::AvAccel,
            VehicleKind::Human,
            VehicleKind::Human,
            VehicleKind::Human,
        ],
        250.0,
    );
    sc.name = "planner-audit".into();
    sc.leader = LeaderSource::Pulse {
        v_eq_mps: 24.0,
        dip_mps: 6.0,
        period_s: 25.0,
        start_s: 20.0,
    };
    sc.planner = Some(PlannerConfig {
        corridor_start_m: -2000.0,
        corridor_end_m: 7000.0,
        ..cfg
    });
    let art = run_scenario(&sc).unwrap();
    let plans = audit_plan_cadence(&art, 60.0).expect("cadence audit");
    let checked = audit_plan_causality(&art, 180.0).expect("causality audit");
    assert!(plans >= 3, "want several published plans, got {plans}");
    println!(
        "criterion 08 planner pipeline: PASS (constant field fixed to 1e-12; wave placed \
         {:.0} m from truth (<= {} m); RMSE {rmse_pred:.2} vs persistence {rmse_persist:.2}; \
         cadence/causality audits over {plans} plans / {checked} stamps)",
        (predicted_center - true_center).abs(),
        cfg.fine_segment_m
    );
}

/// Criterion 9: the built-in benchmark sustains at least 2000 simulator
/// steps per second with 24 vehicles in the lane.
#[test]
fn criterion_09_performance() {
    // 1 AV + 22 followers + the lead vehicle = 24 in the lane.
    let sc = Scenario::shockwave(1, 22, true);
    let rate = benchmark_steps_per_sec(&sc, 4000).unwrap();
    assert!(rate >= 2000.0, "benchmark sustained only {rate:.0} steps/s");
    println!("criterion 09 performance: PASS ({rate:.0} steps/s at 24 vehicles >= 2000)");
}

/// Criterion 10: identical configuration and seed produce byte-identical
/// artifacts, twice in a row.
#[test]
fn criterion_10_determinism() {
    let mut sc = Scenario::shockwave(7, 8, true);
    sc.duration_s = 200.0;
    sc.planner = Some(PlannerConfig {
        corridor_start_m: -2000.0,
        corridor_end_m: 6000.0,
        ..PlannerConfig::default()
    });
    sc.events.push(CutEvent::CutIn {
        t_s: 40.0,
        ahead_of: "human-3".into(),
        gap_m: 12.0,
        speed_mps: 18.0,
    });

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_scenario(&sc).unwrap().write_dir(&a).unwrap();
    run_scenario(&sc).unwrap().write_dir(&b).unwrap();

    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.len() >= 4, "artifact should hold several files: {names:?}");
    for name in &names {
        let fa = std::fs::read(a.join(name)).unwrap();
        let fb = std::fs::read(b.join(name)).unwrap();
        assert!(!fa.is_empty(), "{name} must not be empty");
        assert_eq!(fa, fb, "{name} differs between identical runs");
    }
    println!(
        "criterion 10 determinism: PASS ({} artifact files byte-identical across two runs)",
        names.len()
    );
}

/// Criterion 11: in free flow, every shipped controller variant stays within
/// 1% of the all-human baseline on all three KPIs.
#[test]
fn criterion_11_freeflow_neutrality() {
    let model = sedan();
    let base = Scenario::freeflow(25.0, vec![VehicleKind::Human; 12], 300.0);
    let planner = PlannerConfig {
        corridor_start_m: -2000.0,
        corridor_end_m: 10000.0,
        ..PlannerConfig::default()
    };
    let variants = [
        kpi::Variant {
            name: "accel-all".into(),
            controller: VehicleKind::AvAccel,
            av_period: 1,
            planner: None,
        },
        kpi::Variant {
            name: "accel-every-4th".into(),
            controller: VehicleKind::AvAccel,
            av_period: 4,
            planner: None,
        },
        kpi::Variant {
            name: "accel-planned".into(),
            controller: VehicleKind::AvAccel,
            av_period: 4,
            planner: Some(planner),
        },
        kpi::Variant {
            name: "acc-all".into(),
            controller: VehicleKind::AvAcc,
            av_period: 1,
            planner: None,
        },
        kpi::Variant {
            name: "acc-every-4th".into(),
            controller: VehicleKind::AvAcc,
            av_period: 4,
            planner: None,
        },
        kpi::Variant {
            name: "acc-planned".into(),
            controller: VehicleKind::AvAcc,
            av_period: 4,
            planner: Some(planner),
        },
    ];

    let kind = kpi::ScenarioKind::infer(&base);
    let art0 = run_scenario(&baseline_scenario(&base, 0)).unwrap();
    let k0 = kpi::kpis(&art0, &model, kind).unwrap();
    let mut worst: (f64, String) = (0.0, String::new());
    for v in &variants {
        let sc = v.apply(&base, 0).unwrap();
        let art = run_scenario(&sc).unwrap();
        let k = kpi::kpis(&art, &model, kind).unwrap();
        for (label, a, b) in [
            ("fuel economy", k.fuel_economy_mpg, k0.fuel_economy_mpg),
            ("throughput", k.throughput_vps, k0.throughput_vps),
            ("network speed", k.network_speed_mps, k0.network_speed_mps),
        ] {
            let dev = ((a - b) / b * 100.0).abs();
            assert!(
                dev <= 1.0,
                "variant {}: {label} deviates {dev:.3}% from baseline ({a:.4} vs {b:.4})",
                v.name
            );
            if dev > worst.0 {
                worst = (dev, format!("{} {label}", v.name));
            }
        }
    }
    println!(
        "criterion 11 freeflow neutrality: PASS (6 variants within 1% on all KPIs; worst \
         deviation {:.3}% on {})",
        worst.0, worst.1
    );
}
