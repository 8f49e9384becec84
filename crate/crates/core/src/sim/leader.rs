//! Leader speed trajectories: validated 10 Hz replay profiles.
//!
//! A platoon run replays a recorded (or generated) speed profile at the
//! front. Profiles are strictly 10 Hz — re-timed data must be resampled
//! before loading — and interpolate linearly between samples.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::planner::field::interp_points;

/// Nominal sample spacing, s.
pub const SAMPLE_DT_S: f64 = 0.1;
/// Cadence slack before a file is rejected, s.
pub const CADENCE_TOLERANCE_S: f64 = 1e-6;
/// Largest tolerated inter-sample gap, s.
pub const MAX_GAP_S: f64 = 0.2;

/// A leader speed profile sampled at 10 Hz, with an optional road grade
/// profile on the same timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderTrajectory {
    /// (t s, v m/s), strictly increasing t at 0.1 s spacing.
    samples: Vec<(f64, f64)>,
    /// Grade (rad) per sample, when provided.
    grades: Option<Vec<f64>>,
}

impl LeaderTrajectory {
    pub fn new(samples: Vec<(f64, f64)>, grades: Option<Vec<f64>>) -> Result<Self, SimError> {
        if samples.is_empty() {
            return Err(SimError::EmptyTrajectory);
        }
        for (i, w) in samples.windows(2).enumerate() {
            let gap = w[1].0 - w[0].0;
            if gap <= 0.0 || gap > MAX_GAP_S {
                return Err(SimError::BadCadence { index: i + 1, gap_s: gap });
            }
            if (gap - SAMPLE_DT_S).abs() > CADENCE_TOLERANCE_S {
                return Err(SimError::BadCadence { index: i + 1, gap_s: gap });
            }
        }
        if let Some((i, &(_, v))) = samples.iter().enumerate().find(|(_, s)| s.1 < 0.0) {
            return Err(SimError::NegativeSpeed { index: i, v_mps: v });
        }
        if let Some(g) = &grades {
            if g.len() != samples.len() {
                return Err(SimError::BadScenario(
                    "grade profile length must match speed samples".into(),
                ));
            }
        }
        Ok(Self { samples, grades })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn duration_s(&self) -> f64 {
        self.samples[self.samples.len() - 1].0 - self.samples[0].0
    }

    /// Speed at `t`, linearly interpolated, constant beyond the ends.
    pub fn speed_at(&self, t: f64) -> f64 {
        interp_points(&self.samples, t)
    }

    /// Grade at `t` (0 when no profile was provided).
    pub fn grade_at(&self, t: f64) -> f64 {
        match &self.grades {
            None => 0.0,
            Some(g) => {
                let pts: Vec<(f64, f64)> = self
                    .samples
                    .iter()
                    .zip(g)
                    .map(|(&(ts, _), &gr)| (ts, gr))
                    .collect();
                interp_points(&pts, t)
            }
        }
    }

    pub fn has_grades(&self) -> bool {
        self.grades.is_some()
    }

    /// Writes `t_s,speed_mps[,grade_rad]` CSV. Floats use the shortest
    /// round-trip form, so save/load reproduces the samples bit-exactly.
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut out = String::new();
        match &self.grades {
            None => {
                out.push_str("t_s,speed_mps\n");
                for &(t, v) in &self.samples {
                    out.push_str(&format!("{t},{v}\n"));
                }
            }
            Some(g) => {
                out.push_str("t_s,speed_mps,grade_rad\n");
                for (&(t, v), &gr) in self.samples.iter().zip(g) {
                    out.push_str(&format!("{t},{v},{gr}\n"));
                }
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or(SimError::EmptyTrajectory)?;
        let with_grade = match header.trim() {
            "t_s,speed_mps" => false,
            "t_s,speed_mps,grade_rad" => true,
            other => {
                return Err(SimError::Parse(format!("unexpected leader CSV header: {other}")))
            }
        };
        let mut samples = Vec::new();
        let mut grades = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut field = |name: &str| -> Result<f64, SimError> {
                parts
                    .next()
                    .ok_or_else(|| {
                        SimError::Parse(format!("line {}: missing {name}", lineno + 2))
                    })?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| SimError::Parse(format!("line {}: {e}", lineno + 2)))
            };
            let t = field("t_s")?;
            let v = field("speed_mps")?;
            samples.push((t, v));
            if with_grade {
                grades.push(field("grade_rad")?);
            }
        }
        Self::new(samples, with_grade.then_some(grades))
    }
}

/// Constant-speed profile.
pub fn gen_constant(speed_mps: f64, duration_s: f64) -> Result<LeaderTrajectory, SimError> {
    let n = (duration_s / SAMPLE_DT_S).round() as usize;
    LeaderTrajectory::new(
        (0..=n).map(|k| (k as f64 * SAMPLE_DT_S, speed_mps)).collect(),
        None,
    )
}

/// Cruise at `v_eq` with one smooth raised-cosine dip of depth `dip_mps`
/// lasting `period_s`, starting at `start_s`. The canonical seed disturbance
/// for string-stability studies: smooth enough that amplification growth down
/// a platoon is monotone rather than masked by impulse transients.
pub fn gen_pulse(
    v_eq_mps: f64,
    dip_mps: f64,
    period_s: f64,
    start_s: f64,
    duration_s: f64,
) -> Result<LeaderTrajectory, SimError> {
    let n = (duration_s / SAMPLE_DT_S).round() as usize;
    let samples = (0..=n)
        .map(|k| {
            let t = k as f64 * SAMPLE_DT_S;
            let v = if t >= start_s && t < start_s + period_s {
                let phase = (t - start_s) / period_s;
                v_eq_mps
                    - 0.5 * dip_mps * (1.0 - (2.0 * std::f64::consts::PI * phase).cos())
            } else {
                v_eq_mps
            };
            (t, v.max(0.0))
        })
        .collect();
    LeaderTrajectory::new(samples, None)
}

/// Seeded stop-and-go cycles: hold `v_high`, ramp down at 1.5 m/s² to a
/// jittered low speed near `v_low`, hold, ramp back up at 1.0 m/s². Hold
/// durations and the low speed vary per cycle from the seeded generator.
pub fn gen_stop_and_go(
    seed: u64,
    duration_s: f64,
    v_high_mps: f64,
    v_low_mps: f64,
) -> Result<LeaderTrajectory, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Build (duration, v_start, v_end) linear pieces covering the horizon.
    let mut pieces: Vec<(f64, f64, f64)> = Vec::new();
    let mut total = 0.0;
    while total < duration_s + 60.0 {
        let hold_hi: f64 = rng.gen_range(10.0..25.0);
        let lo = v_low_mps * rng.gen_range(0.8..1.3);
        let hold_lo: f64 = rng.gen_range(8.0..20.0);
        let down = (v_high_mps - lo) / 1.5;
        let up = (v_high_mps - lo) / 1.0;
        pieces.push((hold_hi, v_high_mps, v_high_mps));
        pieces.push((down, v_high_mps, lo));
        pieces.push((hold_lo, lo, lo));
        pieces.push((up, lo, v_high_mps));
        total += hold_hi + down + hold_lo + up;
    }
    let n = (duration_s / SAMPLE_DT_S).round() as usize;
    let mut samples = Vec::with_capacity(n + 1);
    let mut piece_idx = 0;
    let mut piece_start = 0.0;
    for k in 0..=n {
        let t = k as f64 * SAMPLE_DT_S;
        while t >= piece_start + pieces[piece_idx].0 {
            piece_start += pieces[piece_idx].0;
            piece_idx += 1;
        }
        let (len, v0, v1) = pieces[piece_idx];
        let v = v0 + (v1 - v0) * (t - piece_start) / len;
        samples.push((t, v.max(0.0)));
    }
    LeaderTrajectory::new(samples, None)
}
