use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::BoxRegion;

/// Largest supported state dimension; the tensor lattice grows as
/// `nodes^n`.
pub const MAX_STATE_DIM: usize = 3;

/// Tensor lattice over an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateGridSpec", into = "StateGridSpec")]
pub struct StateGrid {
    region: BoxRegion,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct StateGridSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
    nodes: Vec<usize>,
}

impl TryFrom<StateGridSpec> for StateGrid {
    type Error = Error;
    fn try_from(s: StateGridSpec) -> Result<Self> {
        StateGrid::new(BoxRegion::new(s.lo, s.hi)?, s.nodes)
    }
}

impl From<StateGrid> for StateGridSpec {
    fn from(g: StateGrid) -> Self {
        Self {
            lo: g.region.lo,
            hi: g.region.hi,
            nodes: g.counts,
        }
    }
}

impl StateGrid {
    pub fn new(region: BoxRegion, counts: Vec<usize>) -> Result<Self> {
        let n = region.dim();
        if counts.len() != n {
            return Err(Error::InvalidGrid(format!(
                "{} node counts for a {n}-dimensional box",
                counts.len()
            )));
        }
        if n > MAX_STATE_DIM {
            return Err(Error::InvalidGrid(format!(
                "state dimension {n} exceeds the supported maximum {MAX_STATE_DIM}"
            )));
        }
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::InvalidGrid("need at least 2 nodes per axis".into()));
        }
        let widths = region.widths();
        if widths.iter().any(|w| *w <= 0.0) {
            return Err(Error::InvalidGrid("state box has an empty axis".into()));
        }
        let spacing: Vec<f64> = widths
            .iter()
            .zip(&counts)
            .map(|(w, c)| w / (*c - 1) as f64)
            .collect();
        let mut strides = vec![1; n];
        for d in 1..n {
            strides[d] = strides[d - 1] * counts[d - 1];
        }
        let len = counts.iter().try_fold(1usize, |a, c| a.checked_mul(*c));
        let Some(len) = len.filter(|l| *l <= 50_000_000) else {
            return Err(Error::InvalidGrid("state lattice too large".into()));
        };
        Ok(Self {
            region,
            counts,
            spacing,
            strides,
            len,
        })
    }

    pub fn uniform(region: BoxRegion, per_axis: usize) -> Result<Self> {
        let n = region.dim();
        Self::new(region, vec![per_axis; n])
    }

    /// Invariant box inflated by 10%, with 101 nodes per axis in 1D, 61 in 2D
    /// and 31 in 3D.
    pub fn default_for(invariant: &BoxRegion) -> Result<Self> {
        let per_axis = match invariant.dim() {
            1 => 101,
            2 => 61,
            _ => 31,
        };
        let mut region = invariant.inflated(1.1);
        for d in 0..region.dim() {
            if region.hi[d] - region.lo[d] <= 0.0 {
                region.lo[d] -= 0.5;
                region.hi[d] += 0.5;
            }
        }
        Self::uniform(region, per_axis)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn region(&self) -> &BoxRegion {
        &self.region
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn coord(&self, d: usize, i: usize) -> f64 {
        if i + 1 == self.counts[d] {
            self.region.hi[d]
        } else {
            self.region.lo[d] + i as f64 * self.spacing[d]
        }
    }

    pub fn node_into(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for d in 0..self.dim() {
            let i = rem % self.counts[d];
            rem /= self.counts[d];
            out[d] = self.coord(d, i);
        }
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_into(idx, &mut x);
        x
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len).map(|i| self.node(i))
    }

    /// Flat index of the lattice node with per-axis indices `multi`.
    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Calls `visit(node, weight)` for the multilinear stencil of `x`,
    /// clamped into the box.
    pub fn for_each_corner(&self, x: &[f64], mut visit: impl FnMut(usize, f64)) {
        let n = self.dim();
        let mut base = [0usize; MAX_STATE_DIM];
        let mut frac = [0.0f64; MAX_STATE_DIM];
        for d in 0..n {
            let mut s = ((x[d] - self.region.lo[d]) / self.spacing[d]).max(0.0);
            // Points within rounding of a node land exactly on it.
            let r = s.round();
            if (s - r).abs() <= 1e-10 {
                s = r;
            }
            let last = (self.counts[d] - 2) as f64;
            let i = s.floor().min(last);
            base[d] = i as usize;
            frac[d] = (s - i).clamp(0.0, 1.0);
        }
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = 0;
            for d in 0..n {
                let up = (corner >> d) & 1;
                w *= if up == 1 { frac[d] } else { 1.0 - frac[d] };
                idx += (base[d] + up) * self.strides[d];
            }
            visit(idx, w);
        }
    }

    /// Multilinear interpolation of nodal `values` at `x` (clamped).
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_corner(x, |i, w| {
            if w != 0.0 {
                acc += w * values[i];
            }
        });
        acc
    }
}
