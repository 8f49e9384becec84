//! In-process ingestion store for vehicle pings and segment speed estimates.
//!
//! The store is the planner's only data source: pings arrive at their
//! measurement time, segment estimates are stamped with a simulated arrival
//! delay so the planner can only read them once that latency has elapsed.
//! Inserts are idempotent on the natural key and each source must deliver
//! near-monotone timestamps (a small reordering tolerance is allowed).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PlannerError;

/// Reordering slack per source before an ingest is rejected, s.
pub const OUT_OF_ORDER_TOLERANCE_S: f64 = 5.0;

/// One once-per-second report from a connected vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehiclePing {
    pub vehicle_id: String,
    pub timestamp_s: f64,
    pub position_m: f64,
    pub speed_mps: f64,
    pub lane: u32,
}

/// Mean-speed estimate for one roadway segment, as measured at the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEstimate {
    pub segment_id: u32,
    pub x_center_m: f64,
    pub speed_mps: f64,
    pub measured_t_s: f64,
}

/// A stored estimate plus the simulated time it became visible.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivedEstimate {
    pub est: SegmentEstimate,
    pub arrival_t_s: f64,
}

/// Single-writer store with snapshot reads.
#[derive(Debug, Clone)]
pub struct PlannerStore {
    latency_s: f64,
    pings: Vec<VehiclePing>,
    ping_keys: HashSet<(String, u64)>,
    ping_last_t: HashMap<String, f64>,
    estimates: Vec<ArrivedEstimate>,
    estimate_keys: HashSet<(u32, u64)>,
    estimate_last_t: HashMap<u32, f64>,
}

impl PlannerStore {
    /// `latency_s` is the delay between an estimate's measurement and its
    /// availability to the planner.
    pub fn new(latency_s: f64) -> Self {
        Self {
            latency_s,
            pings: Vec::new(),
            ping_keys: HashSet::new(),
            ping_last_t: HashMap::new(),
            estimates: Vec::new(),
            estimate_keys: HashSet::new(),
            estimate_last_t: HashMap::new(),
        }
    }

    pub fn latency_s(&self) -> f64 {
        self.latency_s
    }

    /// Inserts a ping; re-inserting the same (vehicle, timestamp) is a no-op.
    /// Returns whether the ping was newly stored.
    pub fn ingest_ping(&mut self, ping: VehiclePing) -> Result<bool, PlannerError> {
        let key = (ping.vehicle_id.clone(), ping.timestamp_s.to_bits());
        if self.ping_keys.contains(&key) {
            return Ok(false);
        }
        if let Some(&last) = self.ping_last_t.get(&ping.vehicle_id) {
            if ping.timestamp_s < last - OUT_OF_ORDER_TOLERANCE_S {
                return Err(PlannerError::OutOfOrder {
                    source_id: ping.vehicle_id,
                    t: ping.timestamp_s,
                    last,
                });
            }
        }
        let entry = self.ping_last_t.entry(key.0.clone()).or_insert(ping.timestamp_s);
        *entry = entry.max(ping.timestamp_s);
        self.ping_keys.insert(key);
        self.pings.push(ping);
        Ok(true)
    }

    /// Inserts an estimate, stamping its arrival time with the configured
    /// latency. Idempotent on (segment, measurement time).
    pub fn ingest_estimate(&mut self, est: SegmentEstimate) -> Result<bool, PlannerError> {
        let key = (est.segment_id, est.measured_t_s.to_bits());
        if self.estimate_keys.contains(&key) {
            return Ok(false);
        }
        if let Some(&last) = self.estimate_last_t.get(&est.segment_id) {
            if est.measured_t_s < last - OUT_OF_ORDER_TOLERANCE_S {
                return Err(PlannerError::OutOfOrder {
                    source_id: format!("segment-{}", est.segment_id),
                    t: est.measured_t_s,
                    last,
                });
            }
        }
        let entry = self.estimate_last_t.entry(est.segment_id).or_insert(est.measured_t_s);
        *entry = entry.max(est.measured_t_s);
        self.estimate_keys.insert(key);
        let arrival_t_s = est.measured_t_s + self.latency_s;
        self.estimates.push(ArrivedEstimate { est, arrival_t_s });
        Ok(true)
    }

    /// Pings with timestamp in the half-open window `(t0, t1]`.
    pub fn pings_in_window(&self, t0: f64, t1: f64) -> Vec<&VehiclePing> {
        self.pings
            .iter()
            .filter(|p| p.timestamp_s > t0 && p.timestamp_s <= t1)
            .collect()
    }

    /// Estimate batches visible at `now`, grouped by measurement time in
    /// ascending order. Each batch carries the segments sorted by center.
    pub fn estimate_batches_arrived_by(&self, now: f64) -> Vec<(f64, Vec<&SegmentEstimate>)> {
        let mut groups: BTreeMap<u64, Vec<&SegmentEstimate>> = BTreeMap::new();
        for rec in self.estimates.iter().filter(|r| r.arrival_t_s <= now) {
            groups.entry(rec.est.measured_t_s.to_bits()).or_default().push(&rec.est);
        }
        groups
            .into_values()
            .map(|mut batch| {
                batch.sort_by(|a, b| a.x_center_m.total_cmp(&b.x_center_m));
                (batch[0].measured_t_s, batch)
            })
            .collect()
    }

    pub fn ping_count(&self) -> usize {
        self.pings.len()
    }

    pub fn write_pings_csv(&self, path: &Path) -> Result<(), PlannerError> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.pings {
            w.serialize(p)?;
        }
        w.flush().map_err(PlannerError::Io)?;
        Ok(())
    }

    pub fn read_pings_csv(&mut self, path: &Path) -> Result<usize, PlannerError> {
        let mut r = csv::Reader::from_path(path)?;
        let mut n = 0;
        for rec in r.deserialize::<VehiclePing>() {
            if self.ingest_ping(rec?)? {
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn write_estimates_csv(&self, path: &Path) -> Result<(), PlannerError> {
        let mut w = csv::Writer::from_path(path)?;
        for rec in &self.estimates {
            w.serialize(&rec.est)?;
        }
        w.flush().map_err(PlannerError::Io)?;
        Ok(())
    }

    pub fn read_estimates_csv(&mut self, path: &Path) -> Result<usize, PlannerError> {
        let mut r = csv::Reader::from_path(path)?;
        let mut n = 0;
        for rec in r.deserialize::<SegmentEstimate>() {
            if self.ingest_estimate(rec?)? {
                n += 1;
            }
        }
        Ok(n)
    }
}
