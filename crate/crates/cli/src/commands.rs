//! Subcommand implementations.

use crate::config::{
    archive_config, out_root, OptimizeSpec, RunConfig, SweepSpec, VariantSpec,
};
use crate::CliError;
use flowsim_core::edie::{av_overlays, edie_fields, Field};
use flowsim_core::energy::{default_models, model_by_class, EnergyModel};
use flowsim_core::kpi::{
    assemble_report, evaluate_cell, kpis, Kpis, ScenarioKind, Variant,
};
use flowsim_core::optim::ocp::{
    baseline_objective, cfm_mimic_controls, ocp_gradient_adjoint, ocp_gradient_fd, ocp_optimize,
    ocp_optimize_sequential, OcpProblem,
};
use flowsim_core::optim::{mpc_closed_loop, OptimError};
use flowsim_core::sim::{
    gen_constant, gen_pulse, gen_stop_and_go, run_scenario, RunArtifact, Scenario, SimError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn resolve_model(class: &str) -> Result<EnergyModel, CliError> {
    let models = default_models();
    Ok(model_by_class(&models, class)?.clone())
}

/// Writes the three KPIs of a finished run as a one-row CSV.
fn write_kpis_csv(path: &Path, k: &Kpis) -> Result<(), CliError> {
    let text = format!(
        "fuel_economy_mpg,throughput_vps,network_speed_mps\n{},{},{}\n",
        k.fuel_economy_mpg, k.throughput_vps, k.network_speed_mps
    );
    std::fs::write(path, text)?;
    Ok(())
}

pub fn simulate(config_path: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let model = resolve_model(&cfg.energy_class)?;
    let scenario = cfg.build_scenario()?;
    let dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| out_root().join(&scenario.name));
    archive_config(&dir, config_path)?;

    let artifact = match run_scenario(&scenario) {
        Ok(a) => a,
        Err(SimError::Collision { t_s, follower, leader, gap_m, partial }) => {
            // Keep the truncated artifact for inspection, then fail with the
            // collision exit code.
            partial.write_dir(&dir)?;
            return Err(CliError::Collision(format!(
                "collision at t = {t_s:.2} s: {follower} into {leader} (gap {gap_m:.3} m); \
                 partial artifact in {}",
                dir.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    artifact.write_dir(&dir)?;

    let kind = ScenarioKind::infer(&scenario);
    let k = kpis(&artifact, &model, kind)?;
    write_kpis_csv(&dir.join("kpis.csv"), &k)?;
    println!("artifact: {}", dir.display());
    println!("fuel_economy_mpg = {:.4}", k.fuel_economy_mpg);
    println!("throughput_vps = {:.6}", k.throughput_vps);
    println!("network_speed_mps = {:.4}", k.network_speed_mps);
    Ok(())
}

/// Completed-cell marker; one file per (scenario, variant) cell so an
/// interrupted sweep picks up where it stopped.
#[derive(Debug, Serialize, Deserialize)]
struct CellMarker {
    scenario: String,
    variant: String,
    status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kpis: Option<Kpis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn marker_path(cells_dir: &Path, s: usize, v: usize) -> PathBuf {
    cells_dir.join(format!("s{s}_v{v}.toml"))
}

fn write_marker(path: &Path, marker: &CellMarker) -> Result<(), CliError> {
    let text = toml::to_string(marker)
        .map_err(|e| CliError::Config(format!("cannot serialize cell marker: {e}")))?;
    // Write-then-rename so a marker never exists half-written.
    let tmp = path.with_extension("toml.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sweep(config_path: &Path, fresh: bool) -> Result<(), CliError> {
    let spec = SweepSpec::load(config_path)?;
    let model = resolve_model(&spec.energy_class)?;
    let dir = spec.out_dir.clone().unwrap_or_else(|| out_root().join(&spec.name));
    archive_config(&dir, config_path)?;
    let cells_dir = dir.join("cells");
    if fresh && cells_dir.exists() {
        std::fs::remove_dir_all(&cells_dir)?;
    }
    std::fs::create_dir_all(&cells_dir)?;

    let scenarios: Vec<Scenario> = spec
        .scenarios
        .iter()
        .map(|p| Scenario::load(p).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let variants: Vec<Variant> =
        spec.variants.iter().map(VariantSpec::resolve).collect::<Result<_, _>>()?;

    // Cells: variant index 0 is the all-human baseline.
    let mut todo = Vec::new();
    let mut reused = 0usize;
    for s in 0..scenarios.len() {
        for v in 0..=variants.len() {
            if marker_path(&cells_dir, s, v).exists() {
                reused += 1;
            } else {
                todo.push((s, v));
            }
        }
    }

    // Sweep-level parallelism: each cell runs its seeds sequentially.
    let outcomes: Vec<(usize, usize, CellMarker)> = todo
        .par_iter()
        .map(|&(s, v)| {
            let variant = if v == 0 { None } else { Some(&variants[v - 1]) };
            let variant_name = variant.map_or(flowsim_core::kpi::BASELINE_NAME, |w| &w.name);
            let marker = match evaluate_cell(&scenarios[s], variant, &spec.seeds, &model) {
                Ok(Some(k)) => CellMarker {
                    scenario: scenarios[s].name.clone(),
                    variant: variant_name.into(),
                    status: "ok".into(),
                    kpis: Some(k),
                    error: None,
                },
                Ok(None) => CellMarker {
                    scenario: scenarios[s].name.clone(),
                    variant: variant_name.into(),
                    status: "failed".into(),
                    kpis: None,
                    error: Some("collision".into()),
                },
                // Per-cell failures are recorded and the sweep continues.
                Err(e) => CellMarker {
                    scenario: scenarios[s].name.clone(),
                    variant: variant_name.into(),
                    status: "failed".into(),
                    kpis: None,
                    error: Some(e.to_string()),
                },
            };
            (s, v, marker)
        })
        .collect();
    for (s, v, marker) in &outcomes {
        write_marker(&marker_path(&cells_dir, *s, *v), marker)?;
    }

    let mut per_cell: HashMap<(usize, usize), Option<Kpis>> = HashMap::new();
    for s in 0..scenarios.len() {
        for v in 0..=variants.len() {
            let path = marker_path(&cells_dir, s, v);
            let text = std::fs::read_to_string(&path)?;
            let marker: CellMarker = toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            per_cell.insert((s, v), marker.kpis);
        }
    }

    let report = assemble_report(&scenarios, &variants, &per_cell);
    report.write_csv(&dir.join("report.csv"))?;
    report.write_html(&dir.join("report.html"))?;
    println!("report: {}", dir.join("report.csv").display());
    println!(
        "cells: {} computed, {} reused, {} rows",
        outcomes.len(),
        reused,
        report.rows.len()
    );
    Ok(())
}

pub fn macro_fields(
    artifact: &Path,
    h_t: f64,
    h_x: f64,
    energy_class: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if !artifact.is_dir() {
        return Err(CliError::Config(format!(
            "artifact directory {} does not exist",
            artifact.display()
        )));
    }
    let art = RunArtifact::read_dir(artifact)?;
    let model = resolve_model(energy_class)?;
    let grid = edie_fields(&art.trajectories, &model, h_t, h_x)?;
    let overlays = av_overlays(&art.trajectories);

    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| artifact.join("macro"));
    std::fs::create_dir_all(&dir)?;
    grid.write_sums_csv(&dir.join("sums.csv"))?;
    let fields = [
        Field::Density,
        Field::Flow,
        Field::Speed,
        Field::FuelFlux,
        Field::FuelPerVehicleTime,
        Field::FuelPerDistance,
    ];
    for field in fields {
        grid.write_field_csv(field, &dir.join(format!("{}.csv", field.name())))?;
        flowsim_core::edie::export_heatmap_svg(
            &grid,
            field,
            &overlays,
            &dir.join(format!("{}.svg", field.name())),
        )?;
    }
    println!("macro fields: {}", dir.display());
    println!("boxes: {} x {} (h_t = {h_t} s, h_x = {h_x} m)", grid.n_t, grid.n_x);
    println!("overlays: {}", overlays.len());
    Ok(())
}

fn build_ocp(spec: &OptimizeSpec, pieces: usize) -> Result<OcpProblem, CliError> {
    let ocp = spec.ocp.as_ref().expect("caller checked mode");
    if ocp.platoon == 0 {
        return Err(CliError::Config("platoon must have at least one vehicle".into()));
    }
    let mut av_mask = vec![false; ocp.platoon];
    for &i in &ocp.avs {
        if i >= ocp.platoon {
            return Err(CliError::Config(format!(
                "AV slot {i} out of range for a {} vehicle platoon",
                ocp.platoon
            )));
        }
        av_mask[i] = true;
    }
    let leader = spec.leader.build()?;
    Ok(OcpProblem::behind_leader(leader, av_mask, ocp.horizon_s, pieces)?)
}

fn grad_check(spec: &OptimizeSpec) -> Result<(), CliError> {
    println!("mesh  sup|adjoint - fd|  sup|fd|        relative");
    let mut worst_rel = 0.0f64;
    for mesh in [10usize, 20, 40] {
        let p = build_ocp(spec, mesh)?;
        let u = cfm_mimic_controls(&p)?;
        let ga = ocp_gradient_adjoint(&p, &u)?;
        let gf = ocp_gradient_fd(&p, &u, 1e-6)?;
        let scale = gf.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
        let diff = ga
            .iter()
            .flatten()
            .zip(gf.iter().flatten())
            .fold(0.0f64, |m, (a, f)| m.max((a - f).abs()));
        let rel = diff / scale.max(1e-12);
        worst_rel = worst_rel.max(rel);
        println!("{mesh:<4}  {diff:<18.3e}  {scale:<12.3e}  {rel:.3e}");
    }
    if worst_rel <= 1e-4 {
        println!("gradient check passed (worst relative error {worst_rel:.3e} <= 1e-4)");
        Ok(())
    } else {
        Err(CliError::Infeasible(format!(
            "gradient check failed: worst relative error {worst_rel:.3e} > 1e-4"
        )))
    }
}

pub fn optimize(config_path: &Path, run_grad_check: bool) -> Result<(), CliError> {
    let spec = OptimizeSpec::load(config_path)?;
    let dir = spec.out_dir.clone().unwrap_or_else(|| out_root().join("optimize"));

    if let Some(ocp) = &spec.ocp {
        if run_grad_check {
            return grad_check(&spec);
        }
        archive_config(&dir, config_path)?;
        let p = build_ocp(&spec, ocp.pieces)?;
        if ocp.iterations == 0 {
            // Nothing to optimize: report the all-human baseline objective.
            let baseline = baseline_objective(&p)?;
            std::fs::write(
                dir.join("summary.toml"),
                format!("objective = {baseline}\nbaseline_objective = {baseline}\n"),
            )?;
            println!("objective = {baseline:.6} (baseline, no iterations requested)");
            return Ok(());
        }
        let result = if ocp.sequential {
            ocp_optimize_sequential(&p, ocp.iterations)
        } else {
            ocp_optimize(&p, ocp.iterations)
        };
        let res = match result {
            Ok(r) => r,
            Err(OptimError::Infeasible(msg)) => {
                return Err(CliError::Infeasible(format!(
                    "optimization did not reach a feasible schedule\n{msg}"
                )))
            }
            Err(e) => return Err(e.into()),
        };
        res.write_controls_csv(&p, &dir.join("controls.csv"))?;
        res.write_trace_csv(&dir.join("trace.csv"))?;
        let mut summary = String::new();
        let _ = writeln!(summary, "objective = {}", res.objective);
        let _ = writeln!(summary, "baseline_objective = {}", res.baseline_objective);
        let _ = writeln!(summary, "reduction_pct = {}", res.reduction_pct());
        let _ = writeln!(summary, "iterations = {}", res.iterations);
        let _ = writeln!(summary, "penalty_gap_low = {}", res.penalty.gap_low);
        let _ = writeln!(summary, "penalty_gap_high = {}", res.penalty.gap_high);
        let _ = writeln!(summary, "penalty_v_neg = {}", res.penalty.v_neg);
        std::fs::write(dir.join("summary.toml"), summary)?;
        println!("objective = {:.6}", res.objective);
        println!("baseline_objective = {:.6}", res.baseline_objective);
        println!("reduction_pct = {:.2}", res.reduction_pct());
        println!("schedules: {}", dir.join("controls.csv").display());
        return Ok(());
    }

    if run_grad_check {
        return Err(CliError::Config("--grad-check needs an [ocp] problem".into()));
    }
    let mpc = spec.mpc.as_ref().expect("load() checked mode");
    archive_config(&dir, config_path)?;
    let leader = spec.leader.build()?;
    let roll = mpc_closed_loop(
        &leader,
        mpc.horizon_steps,
        mpc.dt_s,
        mpc.x0_m,
        mpc.v0_mps,
        mpc.v_limit_mps,
        (mpc.u_min, mpc.u_max),
        mpc.min_gap_m,
        mpc.steps,
    )?;
    let mut out = String::from("t_s,x_m,v_mps,u_mps2,gap_m\n");
    for i in 0..roll.t_s.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            roll.t_s[i], roll.x_m[i], roll.v_mps[i], roll.u_mps2[i], roll.gap_m[i]
        );
    }
    std::fs::write(dir.join("rollout.csv"), out)?;
    let min_gap = roll.gap_m.iter().copied().fold(f64::INFINITY, f64::min);
    println!("rollout: {}", dir.join("rollout.csv").display());
    println!("min_gap_m = {min_gap:.4}");
    println!("fallback_ticks = {}", roll.fallback_ticks);
    if min_gap <= 0.0 {
        return Err(CliError::Collision(format!(
            "closed-loop rollout collided: minimum gap {min_gap:.3} m"
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn gen_leader(
    kind: &str,
    seed: u64,
    duration_s: f64,
    speed_mps: f64,
    v_high_mps: f64,
    v_low_mps: f64,
    dip_mps: f64,
    period_s: f64,
    start_s: f64,
    out: &Path,
) -> Result<(), CliError> {
    let traj = match kind {
        "constant" => gen_constant(speed_mps, duration_s)?,
        "pulse" => gen_pulse(speed_mps, dip_mps, period_s, start_s, duration_s)?,
        "stop_and_go" => gen_stop_and_go(seed, duration_s, v_high_mps, v_low_mps)?,
        other => {
            return Err(CliError::Config(format!(
                "unknown leader kind {other:?} (expected constant, pulse, or stop_and_go)"
            )))
        }
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    traj.write_csv(out)?;
    println!("leader profile: {} ({} samples, {:.1} s)", out.display(), traj.samples().len(), traj.duration_s());
    Ok(())
}
