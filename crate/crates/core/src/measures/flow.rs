use rayon::prelude::*;

use crate::error::{Error, Result};

use super::grid::TimeGrid;
use super::particle::ParticleMeasure;
use super::transport::w1_distance;

/// Time-indexed family of particle measures, one snapshot per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    grid: TimeGrid,
    snapshots: Vec<ParticleMeasure>,
}

impl MeasureFlow {
    pub fn new(grid: TimeGrid, snapshots: Vec<ParticleMeasure>) -> Result<Self> {
        if snapshots.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "{} snapshots for {} grid nodes",
                snapshots.len(),
                grid.node_count()
            )));
        }
        let dim = snapshots[0].dim();
        if let Some(s) = snapshots.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.dim(),
            });
        }
        Ok(Self { grid, snapshots })
    }

    /// The flow that stays at `m` for all times.
    pub fn constant(grid: TimeGrid, m: &ParticleMeasure) -> Self {
        Self {
            grid,
            snapshots: vec![m.clone(); grid.node_count()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.snapshots[0].dim()
    }

    pub fn snapshot(&self, k: usize) -> &ParticleMeasure {
        &self.snapshots[k]
    }

    pub fn snapshots(&self) -> &[ParticleMeasure] {
        &self.snapshots
    }

    pub fn into_snapshots(self) -> Vec<ParticleMeasure> {
        self.snapshots
    }

    /// Per-node W1 distances to `other`.
    pub fn node_distances(&self, other: &MeasureFlow) -> Result<Vec<f64>> {
        self.grid.ensure_same(&other.grid)?;
        self.snapshots
            .par_iter()
            .zip(other.snapshots.par_iter())
            .map(|(a, b)| w1_distance(a, b))
            .collect()
    }
}

/// `sup_t W(mu[t], nu[t])` over the grid nodes.
pub fn flow_distance(mu: &MeasureFlow, nu: &MeasureFlow) -> Result<f64> {
    Ok(mu
        .node_distances(nu)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// Largest excess of `W(mu[t_{k+1}], mu[t_k])` over `K * dt`; zero when the
/// flow is K-Lipschitz in time at the grid nodes.
pub fn flow_lipschitz_defect(mu: &MeasureFlow, speed: f64) -> Result<f64> {
    let dt = mu.grid.dt();
    let excess: Result<Vec<f64>> = mu
        .snapshots
        .par_windows(2)
        .map(|w| w1_distance(&w[1], &w[0]).map(|d| (d - speed * dt).max(0.0)))
        .collect();
    Ok(excess?.into_iter().fold(0.0, f64::max))
}

/// Trapezoid-rule integral of node values over `[0, t_k]`.
pub fn trapezoid_prefix(values: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * dt * (values[k - 1] + v);
        }
        out.push(acc);
    }
    out
}
