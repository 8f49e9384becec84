//! Polynomial fuel-rate models.
//!
//! Instantaneous fuel rate (g/s) is a polynomial in speed, acceleration, and
//! road grade, floored at a per-class minimum rate, with the squared
//! acceleration clamped from below at the vertex of the quadratic so that
//! braking cannot be credited with negative consumption:
//!
//! ```text
//! f(v, a, theta) = max(beta, C(v) + P(v)*a + Q(v)*a_plus^2 + Z(v)*theta)
//! a_plus = max(-P(v) / (2 Q(v)), a)
//! ```
//!
//! The linear term uses the raw acceleration by default;
//! `linear_term_uses_clamped` switches it to the clamped value for studies of
//! that alternative. Coefficient sets shipped with the crate are illustrative
//! per-class values, not calibrated measurements.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::METERS_PER_MILE;

/// Default conversion between grams of fuel and gallons (gasoline).
pub const GRAMS_PER_GALLON: f64 = 2839.0;

/// Speed range (m/s) over which coefficient validity is checked.
const VALIDATION_SPEED_MAX: f64 = 40.0;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("vehicle class {class:?}: {reason}")]
    BadCoefficients { class: String, reason: String },
    #[error("speed and grade series lengths differ: {speeds} vs {grades}")]
    LengthMismatch { speeds: usize, grades: usize },
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("fuel economy undefined for non-positive fuel mass {0} g")]
    NoFuel(f64),
    #[error("distance must be nonnegative, got {0} m")]
    NegativeDistance(f64),
    #[error("unknown vehicle class {0:?}")]
    UnknownClass(String),
    #[error("failed to read coefficient file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse coefficient file: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Fuel-rate coefficients for one vehicle class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub class_name: String,
    /// Minimum fuel rate, g/s (zero when fuel cut on braking is assumed).
    pub beta: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub q0: f64,
    pub q1: f64,
    pub z0: f64,
    pub z1: f64,
    pub z2: f64,
    /// Use the clamped acceleration in the linear term as well (off keeps the
    /// raw acceleration there, the default reading).
    #[serde(default)]
    pub linear_term_uses_clamped: bool,
}

impl EnergyModel {
    pub fn c(&self, v: f64) -> f64 {
        self.c0 + self.c1 * v + self.c2 * v * v + self.c3 * v * v * v
    }

    pub fn p(&self, v: f64) -> f64 {
        self.p0 + self.p1 * v + self.p2 * v * v
    }

    pub fn q(&self, v: f64) -> f64 {
        self.q0 + self.q1 * v
    }

    pub fn z(&self, v: f64) -> f64 {
        self.z0 + self.z1 * v + self.z2 * v * v
    }

    /// Instantaneous fuel rate in g/s at speed `v` (m/s, nonnegative),
    /// acceleration `a` (m/s^2), and road grade `theta` (rad).
    pub fn fuel_rate(&self, v: f64, a: f64, theta: f64) -> f64 {
        debug_assert!(v >= 0.0, "fuel_rate expects v >= 0, got {v}");
        let q = self.q(v);
        let p = self.p(v);
        let a_plus = (-p / (2.0 * q)).max(a);
        let a_lin = if self.linear_term_uses_clamped { a_plus } else { a };
        (self.c(v) + p * a_lin + q * a_plus * a_plus + self.z(v) * theta).max(self.beta)
    }

    /// Check the structural requirements on the coefficients: beta >= 0,
    /// positive idle rate, and Q, Z positive over the validated speed range.
    pub fn validate(&self) -> Result<(), EnergyError> {
        let bad = |reason: String| EnergyError::BadCoefficients {
            class: self.class_name.clone(),
            reason,
        };
        if !(self.beta >= 0.0) {
            return Err(bad(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.c0 > self.beta) {
            return Err(bad(format!(
                "idle rate c0 = {} must exceed the floor beta = {}",
                self.c0, self.beta
            )));
        }
        // Q is linear: endpoint checks cover the range.
        for v in [0.0, VALIDATION_SPEED_MAX] {
            if !(self.q(v) > 0.0) {
                return Err(bad(format!("Q({v}) = {} must be positive", self.q(v))));
            }
        }
        // Z is quadratic: endpoints plus the interior vertex, if any.
        let mut zs = vec![0.0, VALIDATION_SPEED_MAX];
        if self.z2 != 0.0 {
            let vertex = -self.z1 / (2.0 * self.z2);
            if (0.0..=VALIDATION_SPEED_MAX).contains(&vertex) {
                zs.push(vertex);
            }
        }
        for v in zs {
            if !(self.z(v) > 0.0) {
                return Err(bad(format!("Z({v}) = {} must be positive", self.z(v))));
            }
        }
        Ok(())
    }
}

/// Fuel burned (grams) over a sampled speed profile.
///
/// Accelerations are finite-differenced from the speeds: central differences
/// in the interior, one-sided at the ends. `grades`, when provided, must have
/// the same length as `speeds`. An empty profile burns no fuel.
pub fn trajectory_fuel(
    speeds: &[f64],
    grades: Option<&[f64]>,
    dt: f64,
    model: &EnergyModel,
) -> Result<f64, EnergyError> {
    if dt <= 0.0 {
        return Err(EnergyError::BadTimeStep(dt));
    }
    if let Some(g) = grades {
        if g.len() != speeds.len() {
            return Err(EnergyError::LengthMismatch {
                speeds: speeds.len(),
                grades: g.len(),
            });
        }
    }
    let n = speeds.len();
    if n == 0 {
        return Ok(0.0);
    }
    let grade_at = |i: usize| grades.map_or(0.0, |g| g[i]);
    let accel_at = |i: usize| -> f64 {
        if n == 1 {
            0.0
        } else if i == 0 {
            (speeds[1] - speeds[0]) / dt
        } else if i == n - 1 {
            (speeds[n - 1] - speeds[n - 2]) / dt
        } else {
            (speeds[i + 1] - speeds[i - 1]) / (2.0 * dt)
        }
    };
    let mut total = 0.0;
    for i in 0..n {
        total += model.fuel_rate(speeds[i], accel_at(i), grade_at(i)) * dt;
    }
    Ok(total)
}

/// Miles per gallon for a total fuel mass (g) and distance (m).
pub fn fuel_economy(fuel_g: f64, distance_m: f64, grams_per_gallon: f64) -> Result<f64, EnergyError> {
    if fuel_g <= 0.0 {
        return Err(EnergyError::NoFuel(fuel_g));
    }
    if distance_m < 0.0 {
        return Err(EnergyError::NegativeDistance(distance_m));
    }
    Ok((distance_m / METERS_PER_MILE) / (fuel_g / grams_per_gallon))
}

#[derive(Debug, Deserialize, Serialize)]
struct EnergyFile {
    vehicle_class: Vec<EnergyModel>,
}

/// Parse and validate a coefficient file (TOML, one `[[vehicle_class]]`
/// record per class).
pub fn parse_models(text: &str) -> Result<Vec<EnergyModel>, EnergyError> {
    let file: EnergyFile = toml::from_str(text)?;
    for m in &file.vehicle_class {
        m.validate()?;
    }
    Ok(file.vehicle_class)
}

/// Load and validate a coefficient file from disk.
pub fn load_models(path: &std::path::Path) -> Result<Vec<EnergyModel>, EnergyError> {
    parse_models(&std::fs::read_to_string(path)?)
}

/// The coefficient sets shipped with the crate (six vehicle classes).
pub fn default_models() -> Vec<EnergyModel> {
    parse_models(include_str!("../data/energy_models.toml"))
        .expect("bundled coefficient data must be valid")
}

/// Look up a class by name in a model list.
pub fn model_by_class<'a>(
    models: &'a [EnergyModel],
    class: &str,
) -> Result<&'a EnergyModel, EnergyError> {
    models
        .iter()
        .find(|m| m.class_name == class)
        .ok_or_else(|| EnergyError::UnknownClass(class.to_string()))
}
