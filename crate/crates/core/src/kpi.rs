//! Run-level key performance indicators and the evaluation matrix.
//!
//! Three KPIs are computed from a run artifact — fleet fuel economy,
//! corridor throughput, and network speed — and a scenario x variant sweep
//! assembles them into a report with percentage deltas against each
//! scenario's 0-AV baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::energy::{fuel_economy, EnergyModel, GRAMS_PER_GALLON};
use crate::planner::PlannerConfig;
use crate::sim::{run_scenario, RunArtifact, Scenario, SimError, TrajectoryRow, VehicleKind};

#[derive(Debug, Error)]
pub enum KpiError {
    #[error("artifact holds no trajectory rows")]
    EmptyArtifact,
    #[error("averaging window {window_s} s exceeds the run duration {duration_s} s")]
    WindowTooLong { window_s: f64, duration_s: f64 },
    #[error("scenario unusable for this KPI: {0}")]
    BadScenario(String),
    #[error("audit failed: {0}")]
    Audit(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Energy(#[from] crate::energy::EnergyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Which throughput convention a scenario calls for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Freeflow,
    Shockwave,
    Bottleneck,
}

impl ScenarioKind {
    /// Infers the kind from the scenario: a bottleneck region wins, a
    /// constant-speed leader means free flow, any disturbed leader profile
    /// is treated as a shockwave run.
    pub fn infer(sc: &Scenario) -> Self {
        use crate::sim::LeaderSource::*;
        if sc.bottleneck.is_some() {
            return ScenarioKind::Bottleneck;
        }
        match sc.leader {
            Constant { .. } => ScenarioKind::Freeflow,
            Pulse { .. } | StopAndGo { .. } | File { .. } => ScenarioKind::Shockwave,
        }
    }
}

fn grouped(rows: &[TrajectoryRow]) -> Vec<Vec<&TrajectoryRow>> {
    let mut order: Vec<&str> = Vec::new();
    let mut map: HashMap<&str, Vec<&TrajectoryRow>> = HashMap::new();
    for r in rows {
        map.entry(r.vehicle_id.as_str())
            .or_insert_with(|| {
                order.push(r.vehicle_id.as_str());
                Vec::new()
            })
            .push(r);
    }
    order.into_iter().map(|id| map.remove(id).unwrap()).collect()
}

fn time_extent(rows: &[TrajectoryRow]) -> Result<(f64, f64), KpiError> {
    if rows.is_empty() {
        return Err(KpiError::EmptyArtifact);
    }
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for r in rows {
        t_min = t_min.min(r.t_s);
        t_max = t_max.max(r.t_s);
    }
    Ok((t_min, t_max))
}

/// Count of forward crossings of plane `x = position` during `[t0, t1]`,
/// with crossing times linearly interpolated between samples.
fn crossings(groups: &[Vec<&TrajectoryRow>], position: f64, t0: f64, t1: f64) -> usize {
    let mut n = 0;
    for g in groups {
        for w in g.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a.x_m < position && position <= b.x_m {
                let s = (position - a.x_m) / (b.x_m - a.x_m);
                let tc = a.t_s + s * (b.t_s - a.t_s);
                if tc >= t0 && tc <= t1 {
                    n += 1;
                }
            }
        }
    }
    n
}

/// Throughput over the final `window_s` of the run, veh/s.
///
/// Freeflow/shockwave: mean over five equi-spaced interior corridor
/// positions of crossings per window. Bottleneck: crossings just downstream
/// of the bottleneck region (scenario must declare one).
pub fn throughput_windowed(
    art: &RunArtifact,
    kind: ScenarioKind,
    window_s: f64,
) -> Result<f64, KpiError> {
    let rows = &art.trajectories;
    let (t_min, t_max) = time_extent(rows)?;
    let duration = t_max - t_min;
    if window_s <= 0.0 || window_s > duration + 1e-9 {
        return Err(KpiError::WindowTooLong { window_s, duration_s: duration });
    }
    let t0 = t_max - window_s;
    let groups = grouped(rows);
    match kind {
        ScenarioKind::Freeflow | ScenarioKind::Shockwave => {
            let mut x_min = f64::INFINITY;
            let mut x_max = f64::NEG_INFINITY;
            for r in rows {
                x_min = x_min.min(r.x_m);
                x_max = x_max.max(r.x_m);
            }
            let mean: f64 = (1..=5)
                .map(|i| {
                    let p = x_min + i as f64 / 6.0 * (x_max - x_min);
                    crossings(&groups, p, t0, t_max) as f64 / window_s
                })
                .sum::<f64>()
                / 5.0;
            Ok(mean)
        }
        ScenarioKind::Bottleneck => {
            let sc = Scenario::from_toml_str(&art.scenario_toml)
                .map_err(|e| KpiError::BadScenario(e.to_string()))?;
            let b = sc
                .bottleneck
                .ok_or_else(|| KpiError::BadScenario("no bottleneck region declared".into()))?;
            let p = b.region_end_m + 1.0;
            Ok(crossings(&groups, p, t0, t_max) as f64 / window_s)
        }
    }
}

/// Throughput with the default windows: the whole run for freeflow and
/// shockwave, the final 20% (the steady-state read) for bottleneck runs.
pub fn throughput(art: &RunArtifact, kind: ScenarioKind) -> Result<f64, KpiError> {
    let (t_min, t_max) = time_extent(&art.trajectories)?;
    let window = match kind {
        ScenarioKind::Freeflow | ScenarioKind::Shockwave => t_max - t_min,
        ScenarioKind::Bottleneck => 0.2 * (t_max - t_min),
    };
    throughput_windowed(art, kind, window)
}

/// Total distance traveled by all vehicles divided by their total driving
/// time, m/s. Stopped time still counts as driving time.
pub fn network_speed(art: &RunArtifact) -> Result<f64, KpiError> {
    let groups = grouped(&art.trajectories);
    if groups.is_empty() {
        return Err(KpiError::EmptyArtifact);
    }
    let mut dist = 0.0;
    let mut time = 0.0;
    for g in &groups {
        if let (Some(first), Some(last)) = (g.first(), g.last()) {
            dist += last.x_m - first.x_m;
            time += last.t_s - first.t_s;
        }
    }
    if time <= 0.0 {
        return Err(KpiError::EmptyArtifact);
    }
    Ok(dist / time)
}

/// Fleet fuel in grams and fleet distance in meters, using one energy model
/// for every vehicle. Per-tick fuel uses the midpoint speed and the
/// acceleration applied over the tick, matching the macroscopic aggregation.
pub fn fleet_fuel_and_distance(art: &RunArtifact, model: &EnergyModel) -> Result<(f64, f64), KpiError> {
    let groups = grouped(&art.trajectories);
    if groups.is_empty() {
        return Err(KpiError::EmptyArtifact);
    }
    let mut fuel = 0.0;
    let mut dist = 0.0;
    for g in &groups {
        for w in g.windows(2) {
            let (a, b) = (w[0], w[1]);
            let dt = b.t_s - a.t_s;
            if dt <= 0.0 {
                continue;
            }
            let v_mid = 0.5 * (a.v_mps + b.v_mps);
            fuel += model.fuel_rate(v_mid.max(0.0), b.a_mps2, 0.0) * dt;
            dist += b.x_m - a.x_m;
        }
    }
    Ok((fuel, dist))
}

/// Fleet fuel economy, miles per gallon.
pub fn fuel_economy_mpg(art: &RunArtifact, model: &EnergyModel) -> Result<f64, KpiError> {
    let (fuel, dist) = fleet_fuel_and_distance(art, model)?;
    Ok(fuel_economy(fuel, dist, GRAMS_PER_GALLON)?)
}

/// The three KPIs of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kpis {
    pub fuel_economy_mpg: f64,
    pub throughput_vps: f64,
    pub network_speed_mps: f64,
}

pub fn kpis(art: &RunArtifact, model: &EnergyModel, kind: ScenarioKind) -> Result<Kpis, KpiError> {
    Ok(Kpis {
        fuel_economy_mpg: fuel_economy_mpg(art, model)?,
        throughput_vps: throughput(art, kind)?,
        network_speed_mps: network_speed(art)?,
    })
}

/// Runtime ids the simulator will assign to platoon slots (per-kind
/// counters, slot order). Used to keep scripted event targets pointing at
/// the same physical slot when a sweep remaps platoon kinds.
pub fn platoon_ids(platoon: &[VehicleKind]) -> Vec<String> {
    let mut human = 0;
    let mut av = 0;
    platoon
        .iter()
        .map(|k| match k {
            VehicleKind::Human => {
                let id = format!("human-{human}");
                human += 1;
                id
            }
            VehicleKind::AvAccel | VehicleKind::AvAcc => {
                let id = format!("av-{av}");
                av += 1;
                id
            }
            VehicleKind::Leader | VehicleKind::CutIn => unreachable!("not valid in a platoon"),
        })
        .collect()
}

fn remap_events(sc: &mut Scenario, old_ids: &[String]) {
    let new_ids = platoon_ids(&sc.platoon);
    let remap = |target: &mut String| {
        if let Some(i) = old_ids.iter().position(|id| id == target.as_str()) {
            *target = new_ids[i].clone();
        }
    };
    for ev in sc.events.iter_mut() {
        match ev {
            crate::sim::CutEvent::CutIn { ahead_of, .. } => remap(ahead_of),
            crate::sim::CutEvent::CutOut { vehicle, .. } => remap(vehicle),
        }
    }
}

/// One controller+planner configuration to evaluate across scenarios.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    /// AV controller kind placed into the platoon (must be an AV kind).
    pub controller: VehicleKind,
    /// Every `av_period`-th platoon slot (starting at the front) becomes an
    /// AV; the rest stay human.
    pub av_period: usize,
    /// Planner configuration, if the variant closes the loop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerConfig>,
}

impl Variant {
    /// Instantiates the variant on a base scenario with a given seed.
    pub fn apply(&self, base: &Scenario, seed: u64) -> Result<Scenario, KpiError> {
        if !self.controller.is_av() {
            return Err(KpiError::BadScenario(format!(
                "variant {} uses non-AV controller {}",
                self.name,
                self.controller.label()
            )));
        }
        if self.av_period == 0 {
            return Err(KpiError::BadScenario(format!("variant {}: av_period must be > 0", self.name)));
        }
        let mut sc = base.clone();
        let old_ids = platoon_ids(&base.platoon);
        sc.seed = seed;
        for (i, k) in sc.platoon.iter_mut().enumerate() {
            if i % self.av_period == 0 {
                *k = self.controller;
            }
        }
        remap_events(&mut sc, &old_ids);
        sc.planner = self.planner;
        Ok(sc)
    }
}

/// All-human instantiation of a scenario (the per-scenario baseline).
pub fn baseline_scenario(base: &Scenario, seed: u64) -> Scenario {
    let mut sc = base.clone();
    let old_ids = platoon_ids(&base.platoon);
    sc.seed = seed;
    for k in sc.platoon.iter_mut() {
        *k = VehicleKind::Human;
    }
    remap_events(&mut sc, &old_ids);
    sc.planner = None;
    sc
}

pub const BASELINE_NAME: &str = "baseline-0av";

/// One report row: seed-averaged KPIs plus percentage deltas against the
/// scenario's baseline row. A collision in any seed marks the cell FAILED.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KpiRow {
    pub scenario: String,
    pub variant: String,
    pub status: String,
    pub fuel_economy_mpg: Option<f64>,
    pub throughput_vps: Option<f64>,
    pub network_speed_mps: Option<f64>,
    pub d_fuel_economy_pct: Option<f64>,
    pub d_throughput_pct: Option<f64>,
    pub d_network_speed_pct: Option<f64>,
}

impl KpiRow {
    pub fn failed(&self) -> bool {
        self.status != "ok"
    }
}

/// The evaluation matrix: one row per (scenario, variant) plus one baseline
/// row per scenario, in declaration order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KpiReport {
    pub rows: Vec<KpiRow>,
}

impl KpiReport {
    pub fn write_csv(&self, path: &Path) -> Result<(), KpiError> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, KpiError> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<Result<Vec<KpiRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Color-coded HTML table: improvements green, regressions red,
    /// collisions flagged.
    pub fn write_html(&self, path: &Path) -> Result<(), KpiError> {
        let mut out = String::from(
            "<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>KPI report</title>\
             <style>table{border-collapse:collapse}td,th{border:1px solid #999;\
             padding:4px 8px;font-family:sans-serif;font-size:13px}</style></head><body>\n\
             <h2>Scenario x variant KPI matrix</h2>\n\
             <p>Deltas are percentages against each scenario's 0-AV baseline; \
             green improves, red regresses, gray is the baseline itself.</p>\n<table>\n",
        );
        out.push_str(
            "<tr><th>scenario</th><th>variant</th><th>status</th><th>mpg</th>\
             <th>veh/s</th><th>m/s</th><th>d mpg %</th><th>d veh/s %</th><th>d m/s %</th></tr>\n",
        );
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_default();
        let shade = |d: Option<f64>| match d {
            Some(d) if d > 1.0 => " style=\"background:#c8e6c9\"",
            Some(d) if d < -1.0 => " style=\"background:#ffcdd2\"",
            Some(_) => "",
            None => " style=\"background:#eeeeee\"",
        };
        for row in &self.rows {
            let tr = if row.failed() {
                "<tr style=\"background:#ef9a9a\">"
            } else if row.variant == BASELINE_NAME {
                "<tr style=\"background:#f5f5f5\">"
            } else {
                "<tr>"
            };
            let _ = writeln!(
                out,
                "{tr}<td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td>\
                 <td{}>{}</td><td{}>{}</td><td{}>{}</td></tr>",
                row.scenario,
                row.variant,
                row.status,
                fmt(row.fuel_economy_mpg),
                fmt(row.throughput_vps),
                fmt(row.network_speed_mps),
                shade(row.d_fuel_economy_pct),
                fmt(row.d_fuel_economy_pct),
                shade(row.d_throughput_pct),
                fmt(row.d_throughput_pct),
                shade(row.d_network_speed_pct),
                fmt(row.d_network_speed_pct),
            );
        }
        out.push_str("</table></body></html>\n");
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Runs every scenario under the baseline and every variant across all
/// seeds, averaging KPIs over seeds. Cells run in parallel; the report
/// order is scenario-major with the baseline row first, so output is
/// deterministic. A collision marks the cell FAILED instead of aborting.
pub fn evaluate_matrix(
    scenarios: &[Scenario],
    variants: &[Variant],
    seeds: &[u64],
) -> Result<KpiReport, KpiError> {
    if seeds.is_empty() {
        return Err(KpiError::BadScenario("no seeds given".into()));
    }
    let model = crate::energy::default_models()
        .into_iter()
        .find(|m| m.class_name == "midsize sedan")
        .expect("bundled energy models include a midsize sedan");

    // Cell list: (scenario idx, variant idx) where variant 0 is the baseline.
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for s in 0..scenarios.len() {
        for v in 0..=variants.len() {
            cells.push((s, v));
        }
    }

    let results: Vec<(usize, usize, Result<Option<Kpis>, KpiError>)> = cells
        .par_iter()
        .map(|&(s, v)| {
            let variant = if v == 0 { None } else { Some(&variants[v - 1]) };
            (s, v, evaluate_cell(&scenarios[s], variant, seeds, &model))
        })
        .collect();

    let mut per_cell: HashMap<(usize, usize), Option<Kpis>> = HashMap::new();
    for (s, v, res) in results {
        per_cell.insert((s, v), res?);
    }
    Ok(assemble_report(scenarios, variants, &per_cell))
}

/// Runs one sweep cell (the baseline when `variant` is `None`) across all
/// seeds and averages the KPIs. A collision in any seeded run marks the
/// whole cell failed (`Ok(None)`); other errors propagate.
pub fn evaluate_cell(
    base: &Scenario,
    variant: Option<&Variant>,
    seeds: &[u64],
    model: &EnergyModel,
) -> Result<Option<Kpis>, KpiError> {
    let kind = ScenarioKind::infer(base);
    let mut seeded = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let sc = match variant {
            None => baseline_scenario(base, seed),
            Some(v) => v.apply(base, seed)?,
        };
        match run_scenario(&sc) {
            Ok(art) => seeded.push(kpis(&art, model, kind)?),
            Err(SimError::Collision { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(Kpis {
        fuel_economy_mpg: mean(&seeded.iter().map(|k| k.fuel_economy_mpg).collect::<Vec<_>>()),
        throughput_vps: mean(&seeded.iter().map(|k| k.throughput_vps).collect::<Vec<_>>()),
        network_speed_mps: mean(&seeded.iter().map(|k| k.network_speed_mps).collect::<Vec<_>>()),
    }))
}

/// Builds the report (baseline row first per scenario, deltas vs that
/// baseline) from per-cell results keyed by (scenario index, variant index)
/// with variant index 0 meaning the baseline.
pub fn assemble_report(
    scenarios: &[Scenario],
    variants: &[Variant],
    per_cell: &HashMap<(usize, usize), Option<Kpis>>,
) -> KpiReport {
    let mut rows = Vec::new();
    for (s, sc) in scenarios.iter().enumerate() {
        let baseline = per_cell.get(&(s, 0)).copied().flatten();
        for v in 0..=variants.len() {
            let name = if v == 0 { BASELINE_NAME.to_string() } else { variants[v - 1].name.clone() };
            let cell = per_cell.get(&(s, v)).copied().flatten();
            let delta = |pick: fn(&Kpis) -> f64| -> Option<f64> {
                match (cell.as_ref(), baseline.as_ref()) {
                    (Some(c), Some(b)) if pick(b) != 0.0 => {
                        Some((pick(c) - pick(b)) / pick(b) * 100.0)
                    }
                    _ => None,
                }
            };
            rows.push(KpiRow {
                scenario: sc.name.clone(),
                variant: name,
                status: if cell.is_some() { "ok".into() } else { "FAILED".into() },
                fuel_economy_mpg: cell.map(|k| k.fuel_economy_mpg),
                throughput_vps: cell.map(|k| k.throughput_vps),
                network_speed_mps: cell.map(|k| k.network_speed_mps),
                d_fuel_economy_pct: delta(|k| k.fuel_economy_mpg),
                d_throughput_pct: delta(|k| k.throughput_vps),
                d_network_speed_pct: delta(|k| k.network_speed_mps),
            });
        }
    }
    KpiReport { rows }
}

/// Checks the event log for plan publications exactly on the period grid,
/// starting at t = 0, with no gaps.
pub fn audit_plan_cadence(art: &RunArtifact, period_s: f64) -> Result<usize, KpiError> {
    let times: Vec<f64> = art
        .events
        .iter()
        .filter(|e| e.event == "plan")
        .map(|e| e.t_s)
        .collect();
    if times.is_empty() {
        return Err(KpiError::Audit("no plans were published".into()));
    }
    for (i, &t) in times.iter().enumerate() {
        let want = i as f64 * period_s;
        if (t - want).abs() > 1e-6 {
            return Err(KpiError::Audit(format!(
                "plan {i} published at {t} s, expected {want} s"
            )));
        }
    }
    Ok(times.len())
}

/// Checks that no plan drew on estimates measured more recently than the
/// source latency allows, and that each plan used the freshest batch that
/// had arrived by publication time.
pub fn audit_plan_causality(art: &RunArtifact, latency_s: f64) -> Result<usize, KpiError> {
    let measured: Vec<f64> = art
        .events
        .iter()
        .filter(|e| e.event == "estimate_measured")
        .map(|e| e.t_s)
        .collect();
    let mut checked = 0;
    for e in art.events.iter().filter(|e| e.event == "plan") {
        let detail = e.detail.trim();
        let value = detail
            .strip_prefix("data_through_s =")
            .map(str::trim)
            .ok_or_else(|| KpiError::Audit(format!("plan event has no data stamp: {detail}")))?;
        let newest_arrived = measured
            .iter()
            .copied()
            .filter(|&m| m + latency_s <= e.t_s + 1e-9)
            .fold(f64::NEG_INFINITY, f64::max);
        if value == "none" {
            if newest_arrived.is_finite() {
                return Err(KpiError::Audit(format!(
                    "plan at {} s ignored a batch measured at {newest_arrived} s",
                    e.t_s
                )));
            }
        } else {
            let m: f64 = value
                .parse()
                .map_err(|_| KpiError::Audit(format!("bad data stamp: {detail}")))?;
            if m + latency_s > e.t_s + 1e-9 {
                return Err(KpiError::Audit(format!(
                    "plan at {} s used a batch measured at {m} s before it arrived",
                    e.t_s
                )));
            }
            if (m - newest_arrived).abs() > 1e-9 {
                return Err(KpiError::Audit(format!(
                    "plan at {} s used batch {m} s, freshest arrived was {newest_arrived} s",
                    e.t_s
                )));
            }
        }
        checked += 1;
    }
    if checked == 0 {
        return Err(KpiError::Audit("no plan events to audit".into()));
    }
    Ok(checked)
}
