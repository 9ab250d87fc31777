use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of `[0, T]` into `steps` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimeGridSpec", into = "TimeGridSpec")]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

#[derive(Serialize, Deserialize)]
struct TimeGridSpec {
    #[serde(rename = "T")]
    horizon: f64,
    steps: usize,
}

impl TryFrom<TimeGridSpec> for TimeGrid {
    type Error = Error;
    fn try_from(s: TimeGridSpec) -> Result<Self> {
        TimeGrid::new(s.horizon, s.steps)
    }
}

impl From<TimeGrid> for TimeGridSpec {
    fn from(g: TimeGrid) -> Self {
        Self {
            horizon: g.horizon,
            steps: g.steps,
        }
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be at least 1".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn node_count(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.node(k))
    }

    /// Index of the cell containing `t`, clamped to `[0, steps - 1]`.
    pub fn cell_of(&self, t: f64) -> usize {
        let k = (t / self.dt()).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.steps - 1)
        }
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }

    pub(crate) fn ensure_same(&self, other: &TimeGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "(T={}, steps={}) vs (T={}, steps={})",
                self.horizon, self.steps, other.horizon, other.steps
            )))
        }
    }
}

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_n, hi_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxSpec")]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Deserialize)]
struct BoxSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<BoxSpec> for BoxRegion {
    type Error = Error;
    fn try_from(s: BoxSpec) -> Result<Self> {
        BoxRegion::new(s.lo, s.hi)
    }
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidGrid(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(Error::InvalidGrid(format!("bad box interval [{a}, {b}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    /// Euclidean diameter.
    pub fn diameter(&self) -> f64 {
        self.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Scales every half-width by `factor` about the center.
    pub fn inflated(&self, factor: f64) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| {
                let c = 0.5 * (a + b);
                let h = 0.5 * (b - a) * factor;
                (c - h, c + h)
            })
            .unzip();
        Self { lo, hi }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *v >= a - tol && *v <= b + tol)
    }

    pub fn contains_box(&self, other: &BoxRegion, tol: f64) -> bool {
        self.contains(&other.lo, tol) && self.contains(&other.hi, tol)
    }

    pub fn clamp(&self, x: &mut [f64]) -> bool {
        let mut clamped = false;
        for (v, (a, b)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            if *v < *a {
                *v = *a;
                clamped = true;
            } else if *v > *b {
                *v = *b;
                clamped = true;
            }
        }
        clamped
    }

    /// Tensor lattice with `per_axis` points per axis (corners included).
    pub fn lattice(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let per_axis = per_axis.max(2);
        let n = self.dim();
        let total = per_axis.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                (0..n)
                    .map(|d| {
                        let i = idx % per_axis;
                        idx /= per_axis;
                        let s = i as f64 / (per_axis - 1) as f64;
                        self.lo[d] + s * (self.hi[d] - self.lo[d])
                    })
                    .collect()
            })
            .collect()
    }

    pub fn corners(&self) -> Vec<Vec<f64>> {
        self.lattice(2)
    }
}
