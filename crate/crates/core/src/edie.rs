//! Macroscopic traffic fields from trajectories.
//!
//! Counts the exact vehicle-time and vehicle-distance spent in half-open
//! space-time boxes `[t, t+h_t) x [x, x+h_x)`, splitting each tick segment at
//! box boundaries by linear interpolation, plus the fuel burned there. The
//! generalized definitions fall out as ratios: density is time per box area,
//! flow is distance per box area, and the bulk speed is their quotient.

use rayon::prelude::*;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::energy::EnergyModel;
use crate::sim::TrajectoryRow;

#[derive(Debug, Error)]
pub enum EdieError {
    #[error("trajectory sampling {dt_s} s is coarser than h_t/10 = {max_dt_s} s")]
    SamplingTooCoarse { dt_s: f64, max_dt_s: f64 },
    #[error("grid shapes or origins differ; cannot merge")]
    GridMismatch,
    #[error("box sizes and counts must be positive")]
    BadBoxes,
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Derived field selector for exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    /// veh/m
    Density,
    /// veh/s
    Flow,
    /// g/(s·m)
    FuelFlux,
    /// m/s (no-data in empty boxes)
    Speed,
    /// g per vehicle-second (no-data in empty boxes)
    FuelPerVehicleTime,
    /// g per vehicle-meter (no-data in boxes without movement)
    FuelPerDistance,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::Density => "density",
            Field::Flow => "flow",
            Field::FuelFlux => "fuel_flux",
            Field::Speed => "speed",
            Field::FuelPerVehicleTime => "fuel_per_vehicle_time",
            Field::FuelPerDistance => "fuel_per_distance",
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            Field::Density => "veh/m",
            Field::Flow => "veh/s",
            Field::FuelFlux => "g/(s*m)",
            Field::Speed => "m/s",
            Field::FuelPerVehicleTime => "g/(veh*s)",
            Field::FuelPerDistance => "g/(veh*m)",
        }
    }
}

/// Space-time grid of vehicle-time, vehicle-distance, and fuel sums.
///
/// Sums are stored raw, so grids merge exactly and the derived fields are
/// pure ratios of what was accumulated.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroGrid {
    pub t0: f64,
    pub x0: f64,
    pub h_t: f64,
    pub h_x: f64,
    pub n_t: usize,
    pub n_x: usize,
    /// Vehicle-seconds per box, row-major `[it * n_x + ix]`.
    time_s: Vec<f64>,
    /// Vehicle-meters per box.
    dist_m: Vec<f64>,
    /// Fuel grams per box.
    fuel_g: Vec<f64>,
}

impl MacroGrid {
    pub fn new(
        t0: f64,
        x0: f64,
        h_t: f64,
        h_x: f64,
        n_t: usize,
        n_x: usize,
    ) -> Result<Self, EdieError> {
        if !(h_t > 0.0) || !(h_x > 0.0) || n_t == 0 || n_x == 0 {
            return Err(EdieError::BadBoxes);
        }
        Ok(Self {
            t0,
            x0,
            h_t,
            h_x,
            n_t,
            n_x,
            time_s: vec![0.0; n_t * n_x],
            dist_m: vec![0.0; n_t * n_x],
            fuel_g: vec![0.0; n_t * n_x],
        })
    }

    /// Grid whose boxes cover `[t_min, t_max] x [x_min, x_max]`.
    pub fn covering(
        t_min: f64,
        t_max: f64,
        x_min: f64,
        x_max: f64,
        h_t: f64,
        h_x: f64,
    ) -> Result<Self, EdieError> {
        if !(h_t > 0.0) || !(h_x > 0.0) || t_max < t_min || x_max < x_min {
            return Err(EdieError::BadBoxes);
        }
        let n_t = ((t_max - t_min) / h_t).floor() as usize + 1;
        let n_x = ((x_max - x_min) / h_x).floor() as usize + 1;
        Self::new(t_min, x_min, h_t, h_x, n_t, n_x)
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.t0 == other.t0
            && self.x0 == other.x0
            && self.h_t == other.h_t
            && self.h_x == other.h_x
            && self.n_t == other.n_t
            && self.n_x == other.n_x
    }

    /// Adds another grid's sums (associative; used for parallel merges).
    pub fn merge(&mut self, other: &Self) -> Result<(), EdieError> {
        if !self.same_shape(other) {
            return Err(EdieError::GridMismatch);
        }
        for (a, b) in self.time_s.iter_mut().zip(&other.time_s) {
            *a += b;
        }
        for (a, b) in self.dist_m.iter_mut().zip(&other.dist_m) {
            *a += b;
        }
        for (a, b) in self.fuel_g.iter_mut().zip(&other.fuel_g) {
            *a += b;
        }
        Ok(())
    }

    /// Accumulates one linear trajectory segment, splitting it exactly at
    /// every box boundary it crosses; `fuel_g` is spread proportionally to
    /// time. Parts outside the grid are ignored.
    pub fn accumulate_segment(&mut self, t0: f64, x0: f64, t1: f64, x1: f64, fuel_g: f64) {
        let dt = t1 - t0;
        if dt <= 0.0 {
            return;
        }
        let dx = x1 - x0;
        // Parameter values in (0, 1) where the segment crosses a boundary.
        let mut cuts: Vec<f64> = Vec::new();
        fn boundary_cuts(cuts: &mut Vec<f64>, p0: f64, p1: f64, origin: f64, h: f64) {
            let (lo, hi) = if p0 <= p1 { (p0, p1) } else { (p1, p0) };
            if hi - lo <= 0.0 {
                return;
            }
            let mut k = ((lo - origin) / h).floor() + 1.0;
            loop {
                let b = origin + k * h;
                if b >= hi {
                    break;
                }
                if b > lo {
                    cuts.push((b - lo) / (hi - lo));
                }
                k += 1.0;
            }
        }
        boundary_cuts(&mut cuts, t0, t1, self.t0, self.h_t);
        // Time cuts are fractions of |t1-t0| measured from the smaller end;
        // since t0 < t1 they are already oriented. Space cuts need flipping
        // when the segment moves backward (never for forward traffic, but
        // keep the accumulation correct regardless).
        let n_time_cuts = cuts.len();
        boundary_cuts(&mut cuts, x0, x1, self.x0, self.h_x);
        if dx < 0.0 {
            for c in cuts.iter_mut().skip(n_time_cuts) {
                *c = 1.0 - *c;
            }
        }
        cuts.push(0.0);
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        for w in cuts.windows(2) {
            let (sa, sb) = (w[0], w[1]);
            let frac = sb - sa;
            if frac <= 0.0 {
                continue;
            }
            let sm = 0.5 * (sa + sb);
            let tm = t0 + sm * dt;
            let xm = x0 + sm * dx;
            let it = ((tm - self.t0) / self.h_t).floor();
            let ix = ((xm - self.x0) / self.h_x).floor();
            if it < 0.0 || ix < 0.0 {
                continue;
            }
            let (it, ix) = (it as usize, ix as usize);
            if it >= self.n_t || ix >= self.n_x {
                continue;
            }
            let cell = it * self.n_x + ix;
            self.time_s[cell] += frac * dt;
            self.dist_m[cell] += frac * dx;
            self.fuel_g[cell] += frac * fuel_g;
        }
    }

    pub fn time_in_box(&self, it: usize, ix: usize) -> f64 {
        self.time_s[it * self.n_x + ix]
    }

    pub fn distance_in_box(&self, it: usize, ix: usize) -> f64 {
        self.dist_m[it * self.n_x + ix]
    }

    pub fn fuel_in_box(&self, it: usize, ix: usize) -> f64 {
        self.fuel_g[it * self.n_x + ix]
    }

    fn area(&self) -> f64 {
        self.h_t * self.h_x
    }

    /// veh/m.
    pub fn density(&self, it: usize, ix: usize) -> f64 {
        self.time_in_box(it, ix) / self.area()
    }

    /// veh/s.
    pub fn flow(&self, it: usize, ix: usize) -> f64 {
        self.distance_in_box(it, ix) / self.area()
    }

    /// g/(s·m).
    pub fn fuel_flux(&self, it: usize, ix: usize) -> f64 {
        self.fuel_in_box(it, ix) / self.area()
    }

    /// Was any vehicle present in the box?
    pub fn occupied(&self, it: usize, ix: usize) -> bool {
        self.time_in_box(it, ix) > 0.0
    }

    /// Bulk speed q/rho, m/s; `None` where no vehicle was present.
    pub fn speed(&self, it: usize, ix: usize) -> Option<f64> {
        self.occupied(it, ix)
            .then(|| self.distance_in_box(it, ix) / self.time_in_box(it, ix))
    }

    /// Fuel per vehicle-time f/rho, g/(veh·s); `None` in empty boxes.
    pub fn fuel_per_vehicle_time(&self, it: usize, ix: usize) -> Option<f64> {
        self.occupied(it, ix)
            .then(|| self.fuel_in_box(it, ix) / self.time_in_box(it, ix))
    }

    /// Fuel per distance f/q, g/(veh·m); `None` where nothing moved.
    pub fn fuel_per_distance(&self, it: usize, ix: usize) -> Option<f64> {
        (self.distance_in_box(it, ix) > 0.0)
            .then(|| self.fuel_in_box(it, ix) / self.distance_in_box(it, ix))
    }

    /// Field value for exports: zero-valued sums export as 0, undefined
    /// ratios as no-data.
    pub fn field_value(&self, field: Field, it: usize, ix: usize) -> Option<f64> {
        match field {
            Field::Density => Some(self.density(it, ix)),
            Field::Flow => Some(self.flow(it, ix)),
            Field::FuelFlux => Some(self.fuel_flux(it, ix)),
            Field::Speed => self.speed(it, ix),
            Field::FuelPerVehicleTime => self.fuel_per_vehicle_time(it, ix),
            Field::FuelPerDistance => self.fuel_per_distance(it, ix),
        }
    }

    pub fn total_distance_m(&self) -> f64 {
        self.dist_m.iter().sum()
    }

    pub fn total_time_s(&self) -> f64 {
        self.time_s.iter().sum()
    }

    pub fn total_fuel_g(&self) -> f64 {
        self.fuel_g.iter().sum()
    }

    fn meta_line(&self) -> String {
        format!(
            "# h_t_s = {}, h_x_m = {}, t0_s = {}, x0_m = {}, n_t = {}, n_x = {}",
            self.h_t, self.h_x, self.t0, self.x0, self.n_t, self.n_x
        )
    }

    /// Writes the raw sums (`it,ix,time_s,dist_m,fuel_g`, nonzero boxes only)
    /// with a units/meta comment header. Shortest round-trip float formatting
    /// makes export/import/export byte-identical.
    pub fn write_sums_csv(&self, path: &Path) -> Result<(), EdieError> {
        let mut out = String::new();
        out.push_str(&self.meta_line());
        out.push('\n');
        out.push_str("it,ix,time_s,dist_m,fuel_g\n");
        for it in 0..self.n_t {
            for ix in 0..self.n_x {
                let cell = it * self.n_x + ix;
                if self.time_s[cell] != 0.0 || self.dist_m[cell] != 0.0 || self.fuel_g[cell] != 0.0
                {
                    let _ = writeln!(
                        out,
                        "{it},{ix},{},{},{}",
                        self.time_s[cell], self.dist_m[cell], self.fuel_g[cell]
                    );
                }
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_sums_csv(path: &Path) -> Result<Self, EdieError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let meta = lines
            .next()
            .ok_or_else(|| EdieError::Parse("empty sums file".into()))?;
        let mut grid = parse_meta(meta)?;
        let header = lines.next().unwrap_or("");
        if header.trim() != "it,ix,time_s,dist_m,fuel_g" {
            return Err(EdieError::Parse(format!("unexpected sums header: {header}")));
        }
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 5 {
                return Err(EdieError::Parse(format!("line {}: expected 5 fields", lineno + 3)));
            }
            let it: usize = parts[0]
                .parse()
                .map_err(|e| EdieError::Parse(format!("line {}: {e}", lineno + 3)))?;
            let ix: usize = parts[1]
                .parse()
                .map_err(|e| EdieError::Parse(format!("line {}: {e}", lineno + 3)))?;
            if it >= grid.n_t || ix >= grid.n_x {
                return Err(EdieError::Parse(format!("line {}: box out of range", lineno + 3)));
            }
            let cell = it * grid.n_x + ix;
            let f = |s: &str| -> Result<f64, EdieError> {
                s.parse()
                    .map_err(|e| EdieError::Parse(format!("line {}: {e}", lineno + 3)))
            };
            grid.time_s[cell] = f(parts[2])?;
            grid.dist_m[cell] = f(parts[3])?;
            grid.fuel_g[cell] = f(parts[4])?;
        }
        Ok(grid)
    }

    /// Dense per-field CSV: rows are x bins (start coordinate), columns are
    /// t bins. No-data cells are written empty, distinct from zero.
    pub fn write_field_csv(&self, field: Field, path: &Path) -> Result<(), EdieError> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# field = {}, units = {}, {}",
            field.name(),
            field.units(),
            &self.meta_line()[2..]
        );
        out.push_str("x_m_then_t_s");
        for it in 0..self.n_t {
            let _ = write!(out, ",{}", self.t0 + it as f64 * self.h_t);
        }
        out.push('\n');
        for ix in 0..self.n_x {
            let _ = write!(out, "{}", self.x0 + ix as f64 * self.h_x);
            for it in 0..self.n_t {
                match self.field_value(field, it, ix) {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn parse_meta(line: &str) -> Result<MacroGrid, EdieError> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| EdieError::Parse("expected meta comment line".into()))?;
    let mut vals: HashMap<&str, f64> = HashMap::new();
    for part in body.split(',') {
        let mut kv = part.splitn(2, '=');
        let k = kv.next().unwrap_or("").trim();
        let v = kv
            .next()
            .ok_or_else(|| EdieError::Parse(format!("bad meta entry: {part}")))?
            .trim();
        vals.insert(
            k,
            v.parse()
                .map_err(|e| EdieError::Parse(format!("meta {k}: {e}")))?,
        );
    }
    let get = |k: &str| -> Result<f64, EdieError> {
        vals.get(k)
            .copied()
            .ok_or_else(|| EdieError::Parse(format!("meta missing {k}")))
    };
    MacroGrid::new(
        get("t0_s")?,
        get("x0_m")?,
        get("h_t_s")?,
        get("h_x_m")?,
        get("n_t")? as usize,
        get("n_x")? as usize,
    )
}

/// Reads a dense field CSV back as `(values[ix][it], t bins, x bins)`.
/// Empty cells come back as `None`.
pub fn read_field_csv(path: &Path) -> Result<(Vec<Vec<Option<f64>>>, Vec<f64>, Vec<f64>), EdieError>
{
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let _meta = lines
        .next()
        .ok_or_else(|| EdieError::Parse("empty field file".into()))?;
    let header = lines
        .next()
        .ok_or_else(|| EdieError::Parse("missing field header".into()))?;
    let t_bins: Vec<f64> = header
        .split(',')
        .skip(1)
        .map(|s| s.parse().map_err(|e| EdieError::Parse(format!("t bin: {e}"))))
        .collect::<Result<_, _>>()?;
    let mut x_bins = Vec::new();
    let mut values = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let x: f64 = parts
            .next()
            .unwrap()
            .parse()
            .map_err(|e| EdieError::Parse(format!("x bin: {e}")))?;
        x_bins.push(x);
        let row: Vec<Option<f64>> = parts
            .map(|s| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| EdieError::Parse(format!("cell: {e}")))
                }
            })
            .collect::<Result<_, _>>()?;
        if row.len() != t_bins.len() {
            return Err(EdieError::Parse("ragged field row".into()));
        }
        values.push(row);
    }
    Ok((values, t_bins, x_bins))
}

/// Builds the macroscopic grid for a set of trajectory rows using one fuel
/// model for every vehicle. Rows are grouped by vehicle id; each vehicle's
/// consecutive samples form the segments. Per-vehicle partial grids are
/// computed in parallel and merged in first-appearance order, so results do
/// not depend on thread scheduling.
pub fn edie_fields(
    rows: &[TrajectoryRow],
    model: &EnergyModel,
    h_t: f64,
    h_x: f64,
) -> Result<MacroGrid, EdieError> {
    if rows.is_empty() {
        return MacroGrid::new(0.0, 0.0, h_t, h_x, 1, 1);
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&TrajectoryRow>> = HashMap::new();
    for r in rows {
        groups
            .entry(r.vehicle_id.as_str())
            .or_insert_with(|| {
                order.push(r.vehicle_id.as_str());
                Vec::new()
            })
            .push(r);
    }

    let (mut t_min, mut t_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in rows {
        t_min = t_min.min(r.t_s);
        t_max = t_max.max(r.t_s);
        x_min = x_min.min(r.x_m);
        x_max = x_max.max(r.x_m);
    }
    let template = MacroGrid::covering(t_min, t_max, x_min, x_max, h_t, h_x)?;

    for g in groups.values() {
        for w in g.windows(2) {
            let dt = w[1].t_s - w[0].t_s;
            if dt > h_t / 10.0 + 1e-9 {
                return Err(EdieError::SamplingTooCoarse { dt_s: dt, max_dt_s: h_t / 10.0 });
            }
        }
    }

    let partials: Vec<MacroGrid> = order
        .par_iter()
        .map(|id| {
            let mut grid = template.clone();
            let g = &groups[id];
            for w in g.windows(2) {
                let (a, b) = (w[0], w[1]);
                let dt = b.t_s - a.t_s;
                if dt <= 0.0 {
                    continue;
                }
                let v_mid = 0.5 * (a.v_mps + b.v_mps);
                let fuel = model.fuel_rate(v_mid.max(0.0), b.a_mps2, 0.0) * dt;
                grid.accumulate_segment(a.t_s, a.x_m, b.t_s, b.x_m, fuel);
            }
            grid
        })
        .collect();

    let mut grid = template;
    for p in &partials {
        grid.merge(p)?;
    }
    Ok(grid)
}

/// One vehicle's overlay track for heatmap rendering.
#[derive(Debug, Clone)]
pub struct OverlayTrack {
    pub id: String,
    /// `(t s, x m, engaged)` per sample.
    pub points: Vec<(f64, f64, bool)>,
}

/// Overlay tracks for all automated vehicles in an artifact.
pub fn av_overlays(rows: &[TrajectoryRow]) -> Vec<OverlayTrack> {
    let mut order: Vec<&str> = Vec::new();
    let mut map: HashMap<&str, Vec<(f64, f64, bool)>> = HashMap::new();
    for r in rows {
        if r.kind == "av_accel" || r.kind == "av_acc" {
            map.entry(r.vehicle_id.as_str())
                .or_insert_with(|| {
                    order.push(r.vehicle_id.as_str());
                    Vec::new()
                })
                .push((r.t_s, r.x_m, r.engaged));
        }
    }
    order
        .into_iter()
        .map(|id| OverlayTrack { id: id.to_string(), points: map.remove(id).unwrap() })
        .collect()
}

fn colormap(norm: f64) -> String {
    // Dark blue -> teal -> green -> yellow, perceptually reasonable and
    // readable on white.
    const STOPS: [(f64, f64, f64); 5] = [
        (0.267, 0.005, 0.329),
        (0.229, 0.322, 0.545),
        (0.127, 0.566, 0.551),
        (0.369, 0.788, 0.383),
        (0.993, 0.906, 0.144),
    ];
    let s = norm.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (s.floor() as usize).min(STOPS.len() - 2);
    let f = s - i as f64;
    let lerp = |a: f64, b: f64| a + f * (b - a);
    let (r, g, b) = (
        lerp(STOPS[i].0, STOPS[i + 1].0),
        lerp(STOPS[i].1, STOPS[i + 1].1),
        lerp(STOPS[i].2, STOPS[i + 1].2),
    );
    format!(
        "#{:02x}{:02x}{:02x}",
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8
    )
}

/// Renders one field as a standalone SVG heatmap (time rightward, position
/// upward) with optional vehicle overlays: engaged samples draw bright,
/// disengaged ones gray.
pub fn export_heatmap_svg(
    grid: &MacroGrid,
    field: Field,
    overlays: &[OverlayTrack],
    path: &Path,
) -> Result<(), EdieError> {
    let cell_w: f64 = (900.0 / grid.n_t as f64).clamp(2.0, 24.0);
    let cell_h: f64 = (600.0 / grid.n_x as f64).clamp(2.0, 24.0);
    let (ml, mt, mr, mb) = (70.0, 40.0, 110.0, 45.0);
    let plot_w = cell_w * grid.n_t as f64;
    let plot_h = cell_h * grid.n_x as f64;
    let (w, h) = (ml + plot_w + mr, mt + plot_h + mb);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for it in 0..grid.n_t {
        for ix in 0..grid.n_x {
            if let Some(v) = grid.field_value(field, it, ix) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi <= lo {
        hi = lo + 1.0;
    }

    let t_end = grid.t0 + grid.n_t as f64 * grid.h_t;
    let x_end = grid.x0 + grid.n_x as f64 * grid.h_x;
    // Data -> pixel transforms (x axis up).
    let px = |t: f64| ml + (t - grid.t0) / (t_end - grid.t0) * plot_w;
    let py = |x: f64| mt + (1.0 - (x - grid.x0) / (x_end - grid.x0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" \
         viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{ml}\" y=\"24\">{} ({}) over t in [{}, {}) s, x in [{}, {}) m</text>",
        field.name(),
        field.units(),
        grid.t0,
        t_end,
        grid.x0,
        x_end
    );
    let _ = writeln!(
        svg,
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" fill=\"#e8e8e8\"/>"
    );
    for it in 0..grid.n_t {
        for ix in 0..grid.n_x {
            if let Some(v) = grid.field_value(field, it, ix) {
                let color = colormap((v - lo) / (hi - lo));
                let _ = writeln!(
                    svg,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                    ml + it as f64 * cell_w,
                    mt + (grid.n_x - 1 - ix) as f64 * cell_h,
                    cell_w,
                    cell_h,
                    color
                );
            }
        }
    }
    for track in overlays {
        for wpair in track.points.windows(2) {
            let (a, b) = (wpair[0], wpair[1]);
            let color = if a.2 { "#ff2d78" } else { "#909090" };
            let _ = writeln!(
                svg,
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{}\" \
                 stroke-width=\"1.4\"/>",
                px(a.0),
                py(a.1),
                px(b.0),
                py(b.1),
                color
            );
        }
    }
    // Color bar.
    let bar_x = ml + plot_w + 20.0;
    let bar_h = plot_h.min(240.0);
    let steps = 24;
    for i in 0..steps {
        let frac = i as f64 / (steps - 1) as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{bar_x:.1}\" y=\"{:.1}\" width=\"16\" height=\"{:.1}\" fill=\"{}\"/>",
            mt + (1.0 - frac) * (bar_h - bar_h / steps as f64),
            bar_h / steps as f64 + 0.5,
            colormap(frac)
        );
    }
    let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\">{hi:.3}</text>", bar_x + 20.0, mt + 10.0);
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\">{lo:.3}</text>",
        bar_x + 20.0,
        mt + bar_h
    );
    // Axis labels.
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\">t = {} s</text>",
        ml,
        mt + plot_h + 18.0,
        grid.t0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">t = {} s</text>",
        ml + plot_w,
        mt + plot_h + 18.0,
        t_end
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">x = {} m</text>",
        ml - 6.0,
        mt + plot_h,
        grid.x0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">x = {} m</text>",
        ml - 6.0,
        mt + 12.0,
        x_end
    );
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}
