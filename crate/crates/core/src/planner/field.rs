//! Piecewise-linear speed fields over corridor position.
//!
//! Sparse segment estimates become a continuous field by linear interpolation
//! between sample positions with constant extrapolation past the ends. The
//! integral of such a field is exact (trapezoids), which makes the uniform
//! forward-window smoother an exact window mean rather than a quadrature
//! approximation.

use serde::{Deserialize, Serialize};

use super::PlannerError;

/// Smoothing kernel applied over the forward window `[x, x + w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Plain window mean (exact integral).
    #[default]
    Uniform,
    /// Hat profile peaked at the window midpoint.
    Triangular,
    /// Gaussian centered on the window midpoint, sigma = w/6.
    Gaussian,
}

/// Piecewise-linear lookup over `(x, value)` points sorted by x, constant
/// beyond the ends. Shared by speed fields and published plan profiles.
pub fn interp_points(samples: &[(f64, f64)], x: f64) -> f64 {
    debug_assert!(!samples.is_empty());
    if x <= samples[0].0 {
        return samples[0].1;
    }
    let last = samples[samples.len() - 1];
    if x >= last.0 {
        return last.1;
    }
    let i = samples.partition_point(|&(xs, _)| xs <= x);
    let (x0, v0) = samples[i - 1];
    let (x1, v1) = samples[i];
    v0 + (v1 - v0) * (x - x0) / (x1 - x0)
}

/// Speed as a function of corridor position, piecewise-linear between sample
/// points and constant beyond the first/last sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedField {
    /// Sample points (position m, speed m/s), strictly increasing in x.
    samples: Vec<(f64, f64)>,
}

impl SpeedField {
    /// Builds a field from unsorted samples. Duplicate positions are rejected.
    pub fn new(mut samples: Vec<(f64, f64)>) -> Result<Self, PlannerError> {
        if samples.is_empty() {
            return Err(PlannerError::EmptyField);
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        if samples.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(PlannerError::DuplicatePosition);
        }
        Ok(Self { samples })
    }

    /// A spatially constant field (still needs a nominal position).
    pub fn constant(x: f64, v: f64) -> Self {
        Self { samples: vec![(x, v)] }
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Interpolated speed at `x`.
    pub fn value(&self, x: f64) -> f64 {
        interp_points(&self.samples, x)
    }

    /// Exact integral of the field over `[a, b]` (`a <= b`).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a <= b);
        // Integrate trapezoid pieces between consecutive breakpoints clipped
        // to [a, b]; the constant tails contribute rectangle areas.
        let trapezoid = |lo: f64, hi: f64| -> f64 {
            if hi <= lo {
                return 0.0;
            }
            0.5 * (self.value(lo) + self.value(hi)) * (hi - lo)
        };
        let mut total = 0.0;
        let mut cursor = a;
        for &(xs, _) in &self.samples {
            if xs <= cursor {
                continue;
            }
            if xs >= b {
                break;
            }
            total += trapezoid(cursor, xs);
            cursor = xs;
        }
        total + trapezoid(cursor, b)
    }

    /// Window mean over `[a, b]`.
    pub fn mean(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return self.value(a);
        }
        self.integral(a, b) / (b - a)
    }

    /// Translates the field by `dx` (sample positions shift downstream for
    /// positive `dx`).
    pub fn shifted(&self, dx: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|&(x, v)| (x + dx, v)).collect(),
        }
    }

    /// Kernel-weighted mean over the forward window `[x0, x0 + w]`.
    ///
    /// The uniform kernel is evaluated exactly; the others use composite
    /// Simpson quadrature with the kernel normalized on the same nodes, so a
    /// constant field is reproduced exactly for every kernel.
    pub fn kernel_smooth(&self, x0: f64, w: f64, kind: KernelKind) -> Result<f64, PlannerError> {
        if w <= 0.0 {
            return Err(PlannerError::BadWindow(w));
        }
        match kind {
            KernelKind::Uniform => Ok(self.mean(x0, x0 + w)),
            KernelKind::Triangular | KernelKind::Gaussian => {
                let kernel = |x: f64| -> f64 {
                    let mid = x0 + 0.5 * w;
                    match kind {
                        KernelKind::Triangular => 1.0 - (x - mid).abs() / (0.5 * w),
                        KernelKind::Gaussian => {
                            let sigma = w / 6.0;
                            (-0.5 * ((x - mid) / sigma).powi(2)).exp()
                        }
                        KernelKind::Uniform => unreachable!(),
                    }
                };
                // Composite Simpson with an even node count fine enough to
                // resolve 200 m segment structure inside kilometer windows.
                let n = 400usize;
                let h = w / n as f64;
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..=n {
                    let x = x0 + i as f64 * h;
                    let wt = if i == 0 || i == n {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    let k = kernel(x);
                    num += wt * k * self.value(x);
                    den += wt * k;
                }
                Ok(num / den)
            }
        }
    }
}
