//! Centralized speed planner.
//!
//! Every update period the planner reads its ingestion store and runs the
//! pipeline: (1) predict the segment-level speed field at "now", compensating
//! the source latency by advecting congested structure upstream at the
//! characteristic wave speed; (2) fuse in the last minute of vehicle pings,
//! which take precedence lane-by-lane wherever they exist; (3) smooth each
//! lane with a forward-window kernel; (4) identify a persistent bottleneck,
//! if any; (5) prepend a linear deceleration buffer upstream of it; and
//! (6) publish the per-lane target speed profile.

pub mod field;
pub mod store;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use field::{interp_points, KernelKind, SpeedField};
pub use store::{ArrivedEstimate, PlannerStore, SegmentEstimate, VehiclePing};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("speed field needs at least one sample")]
    EmptyField,
    #[error("duplicate sample position in speed field")]
    DuplicatePosition,
    #[error("kernel window must be positive, got {0}")]
    BadWindow(f64),
    #[error("out-of-order ingest from {source_id}: t = {t} s is more than 5 s behind {last} s")]
    OutOfOrder { source_id: String, t: f64, last: f64 },
    #[error("no segment-estimate history has arrived")]
    EmptyHistory,
    #[error("planner config invalid: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Corridor extent, m.
    pub corridor_start_m: f64,
    pub corridor_end_m: f64,
    /// Number of lanes the plan is published for (ids `0..lanes`).
    pub lanes: u32,
    /// Forward smoothing window length, m.
    pub window_m: f64,
    pub kernel: KernelKind,
    /// Plan resolution: fine segment length, m.
    pub fine_segment_m: f64,
    /// Plan publication period, s.
    pub update_period_s: f64,
    /// Delay between a segment estimate's measurement and its availability, s.
    pub source_latency_s: f64,
    /// Ping lookback window for fusion, s.
    pub ping_window_s: f64,
    /// Nominal free speed of the corridor, m/s.
    pub free_speed_mps: f64,
    /// Fraction of free speed below which a segment counts as congested; used
    /// both for latency-compensation blending and bottleneck detection.
    pub congestion_threshold_frac: f64,
    /// Updates a slow region must persist before it is declared a bottleneck.
    pub bottleneck_persistence: u32,
    /// Deceleration buffer length upstream of a bottleneck, m.
    pub buffer_length_m: f64,
    /// Characteristic speed of congested backward-traveling waves, m/s
    /// (negative: upstream).
    pub wave_speed_mps: f64,
    /// Hard cap on published targets, m/s.
    pub max_target_mps: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            corridor_start_m: 0.0,
            corridor_end_m: 8000.0,
            lanes: 1,
            window_m: 500.0,
            kernel: KernelKind::Uniform,
            fine_segment_m: 200.0,
            update_period_s: 60.0,
            source_latency_s: 180.0,
            ping_window_s: 60.0,
            free_speed_mps: 30.0,
            congestion_threshold_frac: 0.6,
            bottleneck_persistence: 3,
            buffer_length_m: 1000.0,
            wave_speed_mps: -5.0,
            max_target_mps: 33.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |msg: &str| Err(PlannerError::BadConfig(msg.to_string()));
        if self.corridor_end_m <= self.corridor_start_m {
            return bad("corridor end must exceed start");
        }
        if self.window_m <= 0.0 || self.fine_segment_m <= 0.0 {
            return bad("window and fine segment length must be positive");
        }
        if self.update_period_s <= 0.0 || self.ping_window_s <= 0.0 {
            return bad("update period and ping window must be positive");
        }
        if self.lanes == 0 {
            return bad("at least one lane required");
        }
        if !(0.0..=1.0).contains(&self.congestion_threshold_frac) {
            return bad("congestion threshold fraction must lie in [0, 1]");
        }
        if self.free_speed_mps <= 0.0 || self.max_target_mps <= 0.0 {
            return bad("speeds must be positive");
        }
        Ok(())
    }

    /// Centers of the fine segments tiling the corridor.
    pub fn fine_centers(&self) -> Vec<f64> {
        let n = ((self.corridor_end_m - self.corridor_start_m) / self.fine_segment_m).ceil()
            as usize;
        (0..n)
            .map(|i| self.corridor_start_m + (i as f64 + 0.5) * self.fine_segment_m)
            .collect()
    }

    fn congestion_threshold(&self) -> f64 {
        self.congestion_threshold_frac * self.free_speed_mps
    }
}

/// Target profile for one lane: `(fine segment center m, target m/s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LanePlan {
    pub lane: u32,
    pub points: Vec<(f64, f64)>,
}

/// A published plan: per-lane target speed profiles at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedPlan {
    pub t_s: f64,
    pub lanes: Vec<LanePlan>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanRow {
    t_s: f64,
    lane: u32,
    x_center_m: f64,
    target_mps: f64,
}

impl SpeedPlan {
    /// Target speed at position `x` for `lane`: piecewise-linear between fine
    /// segment centers, constant beyond the corridor ends. An unknown lane
    /// falls back to the lane-averaged profile.
    pub fn query(&self, x: f64, lane: u32) -> f64 {
        if let Some(lp) = self.lanes.iter().find(|lp| lp.lane == lane) {
            return interp_points(&lp.points, x);
        }
        let sum: f64 = self.lanes.iter().map(|lp| interp_points(&lp.points, x)).sum();
        sum / self.lanes.len() as f64
    }

    /// Appends this plan's rows to a CSV writer (`t_s,lane,x_center_m,target_mps`).
    pub fn write_csv<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<(), PlannerError> {
        for lp in &self.lanes {
            for &(x, v) in &lp.points {
                w.serialize(PlanRow { t_s: self.t_s, lane: lp.lane, x_center_m: x, target_mps: v })?;
            }
        }
        Ok(())
    }

    /// Reads every plan from a CSV file, grouped by publication timestamp.
    pub fn read_csv(path: &Path) -> Result<Vec<SpeedPlan>, PlannerError> {
        let mut r = csv::Reader::from_path(path)?;
        let mut plans: Vec<SpeedPlan> = Vec::new();
        for row in r.deserialize::<PlanRow>() {
            let row = row?;
            if plans.last().map(|p| p.t_s != row.t_s).unwrap_or(true) {
                plans.push(SpeedPlan { t_s: row.t_s, lanes: Vec::new() });
            }
            let plan = plans.last_mut().unwrap();
            match plan.lanes.iter_mut().find(|lp| lp.lane == row.lane) {
                Some(lp) => lp.points.push((row.x_center_m, row.target_mps)),
                None => plan
                    .lanes
                    .push(LanePlan { lane: row.lane, points: vec![(row.x_center_m, row.target_mps)] }),
            }
        }
        Ok(plans)
    }
}

/// The planner: owns the ingestion store and the bottleneck persistence
/// counters; `update(now)` runs the full pipeline on arrived data only.
#[derive(Debug, Clone)]
pub struct SpeedPlanner {
    cfg: PlannerConfig,
    store: PlannerStore,
    below_counts: Vec<u32>,
    last_plan: Option<SpeedPlan>,
}

impl SpeedPlanner {
    pub fn new(cfg: PlannerConfig) -> Result<Self, PlannerError> {
        cfg.validate()?;
        let n = cfg.fine_centers().len();
        Ok(Self {
            store: PlannerStore::new(cfg.source_latency_s),
            cfg,
            below_counts: vec![0; n],
            last_plan: None,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    pub fn store(&self) -> &PlannerStore {
        &self.store
    }

    pub fn ingest_ping(&mut self, ping: VehiclePing) -> Result<bool, PlannerError> {
        self.store.ingest_ping(ping)
    }

    pub fn ingest_estimate(&mut self, est: SegmentEstimate) -> Result<bool, PlannerError> {
        self.store.ingest_estimate(est)
    }

    pub fn last_plan(&self) -> Option<&SpeedPlan> {
        self.last_plan.as_ref()
    }

    /// Latency-compensated segment speed field at `now`, from the most recent
    /// arrived estimate batch: congested structure is advected upstream by the
    /// wave speed times the batch's actual age, free-flow values persist.
    /// Errors if no batch has arrived yet.
    pub fn predict_tse(&self, now: f64) -> Result<SpeedField, PlannerError> {
        let batches = self.store.estimate_batches_arrived_by(now);
        let (measured_t, batch) = batches.last().ok_or(PlannerError::EmptyHistory)?;
        let base = SpeedField::new(
            batch.iter().map(|e| (e.x_center_m, e.speed_mps)).collect(),
        )?;
        let age = (now - measured_t).max(0.0);
        let advected = base.shifted(self.cfg.wave_speed_mps * age);
        let thr = self.cfg.congestion_threshold();
        let blended: Vec<(f64, f64)> = self
            .cfg
            .fine_centers()
            .into_iter()
            .map(|x| {
                let v_adv = advected.value(x);
                let v_pers = base.value(x);
                // Congestion (in either picture) travels with the wave;
                // free flow is better explained by persistence.
                let v = if v_adv < thr || v_pers < thr { v_adv } else { v_pers };
                (x, v)
            })
            .collect();
        SpeedField::new(blended)
    }

    /// Lane-level fusion: per fine segment, the mean speed of that lane's
    /// pings in the lookback window wins over the prediction.
    pub fn fused_lane_values(
        &self,
        prediction: &SpeedField,
        now: f64,
        centers: &[f64],
    ) -> Vec<Vec<f64>> {
        let pings = self.store.pings_in_window(now - self.cfg.ping_window_s, now);
        let half = 0.5 * self.cfg.fine_segment_m;
        (0..self.cfg.lanes)
            .map(|lane| {
                centers
                    .iter()
                    .map(|&x| {
                        let (mut sum, mut n) = (0.0, 0usize);
                        for p in &pings {
                            if p.lane == lane
                                && p.position_m >= x - half
                                && p.position_m < x + half
                            {
                                sum += p.speed_mps;
                                n += 1;
                            }
                        }
                        if n > 0 { sum / n as f64 } else { prediction.value(x) }
                    })
                    .collect()
            })
            .collect()
    }

    /// Forward-window kernel smoothing of each lane's fused values.
    fn smooth(
        &self,
        fused: &[Vec<f64>],
        centers: &[f64],
    ) -> Result<Vec<Vec<f64>>, PlannerError> {
        fused
            .iter()
            .map(|lane_vals| {
                let field = SpeedField::new(
                    centers.iter().copied().zip(lane_vals.iter().copied()).collect(),
                )?;
                centers
                    .iter()
                    .map(|&x| field.kernel_smooth(x, self.cfg.window_m, self.cfg.kernel))
                    .collect()
            })
            .collect()
    }

    /// Updates the persistence counters with the lane-mean smoothed profile
    /// and returns the most-downstream maximal run of congested segments that
    /// has persisted long enough, as an inclusive segment index range.
    pub fn identify_bottleneck(&mut self, mean_smoothed: &[f64]) -> Option<(usize, usize)> {
        let thr = self.cfg.congestion_threshold();
        for (i, &v) in mean_smoothed.iter().enumerate() {
            if v < thr {
                self.below_counts[i] += 1;
            } else {
                self.below_counts[i] = 0;
            }
        }
        let mut best: Option<(usize, usize)> = None;
        let mut i = 0;
        while i < mean_smoothed.len() {
            if mean_smoothed[i] < thr {
                let start = i;
                while i < mean_smoothed.len() && mean_smoothed[i] < thr {
                    i += 1;
                }
                let end = i - 1;
                // The run qualifies once its core has persisted; the extent
                // may still be growing.
                let persisted = (start..=end)
                    .any(|j| self.below_counts[j] >= self.cfg.bottleneck_persistence);
                if persisted {
                    best = Some((start, end));
                }
            } else {
                i += 1;
            }
        }
        best
    }

    /// Builds the lane profiles: smoothed targets everywhere, with a linear
    /// deceleration ramp over the buffer length upstream of the bottleneck.
    pub fn design_buffer(
        &self,
        smoothed: &[Vec<f64>],
        region: Option<(usize, usize)>,
        centers: &[f64],
    ) -> Vec<LanePlan> {
        smoothed
            .iter()
            .enumerate()
            .map(|(lane, vals)| {
                let mut targets = vals.clone();
                if let Some((start, end)) = region {
                    let lane_field: Vec<(f64, f64)> =
                        centers.iter().copied().zip(vals.iter().copied()).collect();
                    let x_b = centers[start];
                    let v_b = vals[start..=end].iter().sum::<f64>() / (end - start + 1) as f64;
                    let x_up = x_b - self.cfg.buffer_length_m;
                    let v_up = interp_points(&lane_field, x_up);
                    let (lo, hi) = (v_b.min(v_up), v_b.max(v_up));
                    for (i, &x) in centers.iter().enumerate() {
                        if x >= x_up && x < x_b {
                            let ramp =
                                v_b + (v_up - v_b) * (x_b - x) / self.cfg.buffer_length_m;
                            targets[i] = ramp.clamp(lo, hi);
                        }
                    }
                }
                for t in &mut targets {
                    *t = t.clamp(0.0, self.cfg.max_target_mps);
                }
                LanePlan {
                    lane: lane as u32,
                    points: centers.iter().copied().zip(targets).collect(),
                }
            })
            .collect()
    }

    /// Full pipeline at simulated time `now`, reading only arrived data.
    /// With no estimate history the prediction falls back to the free speed,
    /// so early plans are ping-driven where pings exist and neutral elsewhere.
    pub fn update(&mut self, now: f64) -> Result<SpeedPlan, PlannerError> {
        let centers = self.cfg.fine_centers();
        let prediction = match self.predict_tse(now) {
            Ok(f) => f,
            Err(PlannerError::EmptyHistory) => {
                SpeedField::constant(self.cfg.corridor_start_m, self.cfg.free_speed_mps)
            }
            Err(e) => return Err(e),
        };
        let fused = self.fused_lane_values(&prediction, now, &centers);
        let smoothed = self.smooth(&fused, &centers)?;
        let n_lanes = smoothed.len() as f64;
        let mean_smoothed: Vec<f64> = (0..centers.len())
            .map(|i| smoothed.iter().map(|lane| lane[i]).sum::<f64>() / n_lanes)
            .collect();
        let region = self.identify_bottleneck(&mean_smoothed);
        let plan = SpeedPlan { t_s: now, lanes: self.design_buffer(&smoothed, region, &centers) };
        self.last_plan = Some(plan.clone());
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn cfg() -> PlannerConfig {
        PlannerConfig { corridor_end_m: 4000.0, ..PlannerConfig::default() }
    }

    fn ping(id: &str, t: f64, x: f64, v: f64, lane: u32) -> VehiclePing {
        VehiclePing {
            vehicle_id: id.to_string(),
            timestamp_s: t,
            position_m: x,
            speed_mps: v,
            lane,
        }
    }

    /// Feeds one estimate batch measured at `t` with speeds from `profile`.
    fn feed_batch(p: &mut SpeedPlanner, t: f64, profile: impl Fn(f64) -> f64) {
        // Coarse source segments: 800 m, the nominal half-mile granularity.
        let (a, b) = (p.cfg.corridor_start_m, p.cfg.corridor_end_m);
        let n = ((b - a) / 800.0).ceil() as u32;
        for j in 0..n {
            let x = a + (j as f64 + 0.5) * 800.0;
            p.ingest_estimate(SegmentEstimate {
                segment_id: j,
                x_center_m: x,
                speed_mps: profile(x),
                measured_t_s: t,
            })
            .unwrap();
        }
    }

    #[test]
    fn constant_free_flow_is_a_fixed_point() {
        let mut p = SpeedPlanner::new(cfg()).unwrap();
        feed_batch(&mut p, 0.0, |_| 30.0);
        let plan = p.update(200.0).unwrap();
        for lp in &plan.lanes {
            for &(_, v) in &lp.points {
                assert_abs_diff_eq!(v, 30.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn no_history_falls_back_to_free_speed() {
        let mut p = SpeedPlanner::new(cfg()).unwrap();
        assert!(matches!(p.predict_tse(100.0), Err(PlannerError::EmptyHistory)));
        let plan = p.update(0.0).unwrap();
        assert_abs_diff_eq!(plan.query(1000.0, 0), 30.0, epsilon = 1e-12);
    }

    #[test]
    fn estimates_invisible_before_latency_elapses() {
        // A dip measured at t = 0 must not influence the t = 60 plan
        // (arrival is t = 180), but must influence the t = 240 one.
        let mut p = SpeedPlanner::new(cfg()).unwrap();
        feed_batch(&mut p, 0.0, |x| if (1600.0..2400.0).contains(&x) { 8.0 } else { 30.0 });
        let early = p.update(60.0).unwrap();
        assert_abs_diff_eq!(early.query(2000.0, 0), 30.0, epsilon = 1e-12);
        let later = p.update(240.0).unwrap();
        let min_target = later.lanes[0]
            .points
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::INFINITY, f64::min);
        assert!(min_target < 0.6 * 30.0, "dip should be visible, got min {min_target}");
    }

    #[test]
    fn ping_means_override_prediction_per_lane() {
        let mut p = SpeedPlanner::new(PlannerConfig { lanes: 2, ..cfg() }).unwrap();
        // Two vehicles in lane 0 in the segment centered at 1100 m.
        p.ingest_ping(ping("av-1", 95.0, 1060.0, 10.0, 0)).unwrap();
        p.ingest_ping(ping("av-2", 96.0, 1140.0, 20.0, 0)).unwrap();
        let prediction = SpeedField::constant(0.0, 25.0);
        let centers = p.cfg.fine_centers();
        let fused = p.fused_lane_values(&prediction, 100.0, &centers);
        let seg = centers.iter().position(|&x| x == 1100.0).unwrap();
        assert_relative_eq!(fused[0][seg], 15.0, max_relative = 1e-12);
        // The other lane and other segments keep the prediction.
        assert_relative_eq!(fused[1][seg], 25.0, max_relative = 1e-12);
        assert_relative_eq!(fused[0][seg + 1], 25.0, max_relative = 1e-12);
    }

    #[test]
    fn stale_pings_do_not_fuse() {
        let mut p = SpeedPlanner::new(cfg()).unwrap();
        p.ingest_ping(ping("av-1", 30.0, 1100.0, 10.0, 0)).unwrap();
        let prediction = SpeedField::constant(0.0, 25.0);
        let centers = p.cfg.fine_centers();
        // At t = 100 the ping is 70 s old, outside the 60 s window.
        let fused = p.fused_lane_values(&prediction, 100.0, &centers);
        let seg = centers.iter().position(|&x| x == 1100.0).unwrap();
        assert_relative_eq!(fused[0][seg], 25.0, max_relative = 1e-12);
    }

    /// Where pings cover the whole smoothing span, the published plan is
    /// independent of the stale source values.
    #[test]
    fn ping_covered_plan_ignores_stale_source()  {
        let run = |source_speed: f64| -> Vec<f64> {
            let mut p = SpeedPlanner::new(cfg()).unwrap();
            feed_batch(&mut p, 0.0, |_| source_speed);
            // One ping per fine segment, everywhere, just before the update.
            for (i, x) in p.cfg.fine_centers().into_iter().enumerate() {
                p.ingest_ping(ping(&format!("av-{i}"), 239.0, x, 17.0, 0)).unwrap();
            }
            p.update(240.0)
                .unwrap()
                .lanes[0]
                .points
                .iter()
                .map(|&(_, v)| v)
                .collect()
        };
        let a = run(30.0);
        let b = run(9.0);
        for (va, vb) in a.iter().zip(&b) {
            assert_abs_diff_eq!(va, vb, epsilon = 1e-12);
        }
    }

    #[test]
    fn advected_wave_lands_within_one_fine_segment() {
        // Ground truth: a dip translating upstream at the wave speed. The
        // planner sees it where it was `latency` seconds ago and must place
        // it within one fine segment of where it is now.
        let cfg = PlannerConfig { corridor_end_m: 8000.0, ..cfg() };
        let mut p = SpeedPlanner::new(cfg).unwrap();
        let dip = |x: f64, center: f64| {
            if (x - center).abs() <= 600.0 {
                8.0
            } else {
                30.0
            }
        };
        let measured_center = 5500.0;
        feed_batch(&mut p, 0.0, |x| dip(x, measured_center));
        let now = 180.0;
        let predicted = p.predict_tse(now).unwrap();
        let true_center = measured_center + cfg.wave_speed_mps * now;
        // Locate the predicted dip as the weighted center of congested mass.
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
            "predicted dip at {predicted_center}, true at {true_center}"
        );
        // Persistence (no shift) would be off by the full advection distance.
        assert!((measured_center - true_center).abs() > 4.0 * cfg.fine_segment_m);
    }

    #[test]
    fn bottleneck_needs_persistence_and_picks_downstream_run() {
        let mut p = SpeedPlanner::new(cfg()).unwrap();
        let n = p.cfg.fine_centers().len();
        let mut profile = vec![30.0; n];
        for i in 5..8 {
            profile[i] = 10.0;
        }
        assert_eq!(p.identify_bottleneck(&profile), None);
        assert_eq!(p.identify_bottleneck(&profile), None);
        assert_eq!(p.identify_bottleneck(&profile), Some((5, 7)));
        // A second, more-downstream run that has also persisted wins.
        for i in 12..14 {
            profile[i] = 9.0;
        }
        for _ in 0..2 {
            p.identify_bottleneck(&profile);
        }
        assert_eq!(p.identify_bottleneck(&profile), Some((12, 13)));
        // Recovery clears the counters.
        let free = vec![30.0; n];
        assert_eq!(p.identify_bottleneck(&free), None);
        assert_eq!(p.identify_bottleneck(&profile), None);
    }

    #[test]
    fn buffer_ramps_linearly_to_the_bottleneck() {
        // Upstream 30 m/s, bottleneck 10 m/s, L = 1000 m: the ramp midpoint
        // targets 20 m/s and the ramp never leaves [10, 30].
        let p = SpeedPlanner::new(cfg()).unwrap();
        let centers = p.cfg.fine_centers();
        let n = centers.len();
        let start = centers.iter().position(|&x| x == 3100.0).unwrap();
        let mut smoothed = vec![30.0; n];
        for v in smoothed.iter_mut().skip(start) {
            *v = 10.0;
        }
        let lanes = p.design_buffer(&[smoothed], Some((start, n - 1)), &centers);
        let plan = SpeedPlan { t_s: 0.0, lanes };
        assert_relative_eq!(plan.query(2600.0, 0), 20.0, max_relative = 1e-9);
        for &(x, v) in &plan.lanes[0].points {
            if (2100.0..3100.0).contains(&x) {
                assert!((10.0..=30.0).contains(&v), "ramp target {v} at {x} out of bounds");
            }
        }
        // Inside the bottleneck the plan keeps the smoothed value.
        assert_relative_eq!(plan.query(3500.0, 0), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn no_bottleneck_keeps_smoothed_profile() {
        let p = SpeedPlanner::new(cfg()).unwrap();
        let centers = p.cfg.fine_centers();
        let smoothed: Vec<f64> = centers.iter().map(|&x| 20.0 + x / 1000.0).collect();
        let lanes = p.design_buffer(&[smoothed.clone()], None, &centers);
        for (i, &(_, v)) in lanes[0].points.iter().enumerate() {
            assert_relative_eq!(v, smoothed[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn plan_query_interpolates_and_extrapolates() {
        let plan = SpeedPlan {
            t_s: 0.0,
            lanes: vec![
                LanePlan { lane: 0, points: vec![(100.0, 10.0), (300.0, 20.0)] },
                LanePlan { lane: 1, points: vec![(100.0, 30.0), (300.0, 40.0)] },
            ],
        };
        assert_eq!(plan.query(100.0, 0), 10.0);
        assert_relative_eq!(plan.query(200.0, 0), 15.0, max_relative = 1e-12);
        assert_eq!(plan.query(-50.0, 0), 10.0);
        assert_eq!(plan.query(900.0, 0), 20.0);
        // Unknown lane: lane-averaged profile.
        assert_relative_eq!(plan.query(200.0, 7), 25.0, max_relative = 1e-12);
    }

    #[test]
    fn plan_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plans.csv");
        let mut p = SpeedPlanner::new(cfg()).unwrap();
        feed_batch(&mut p, 0.0, |x| if x > 2400.0 { 12.0 } else { 30.0 });
        let plan1 = p.update(240.0).unwrap();
        let plan2 = p.update(300.0).unwrap();
        {
            let mut w = csv::Writer::from_path(&path).unwrap();
            plan1.write_csv(&mut w).unwrap();
            plan2.write_csv(&mut w).unwrap();
            w.flush().unwrap();
        }
        let back = SpeedPlan::read_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], plan1);
        assert_eq!(back[1], plan2);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SpeedPlanner::new(PlannerConfig { lanes: 0, ..cfg() }).is_err());
        assert!(
            SpeedPlanner::new(PlannerConfig { corridor_end_m: -1.0, ..cfg() }).is_err()
        );
        assert!(SpeedPlanner::new(PlannerConfig { window_m: 0.0, ..cfg() }).is_err());
    }
}
