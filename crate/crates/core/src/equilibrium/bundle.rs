use serde::{Deserialize, Serialize};

use crate::dynamics::{FlowContext, RelaxedControl, Trajectory};
use crate::error::{Error, Result};
use crate::measures::{BoxRegion, MeasureFlow, ParticleMeasure, TimeGrid, MASS_TOL};
use crate::model::MeanFieldModel;
use crate::value::ValueField;

#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry {
    pub weight: f64,
    pub x0: Vec<f64>,
    pub control: RelaxedControl,
    pub trajectory: Trajectory,
}

/// Weighted family of controlled trajectories; its node-wise push-forward is
/// a measure flow.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    grid: TimeGrid,
    dim: usize,
    entries: Vec<BundleEntry>,
}

impl TrajectoryBundle {
    pub fn new(entries: Vec<BundleEntry>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::InvalidMeasure("empty bundle".into()));
        };
        let grid = *first.trajectory.grid();
        let dim = first.trajectory.dim();
        for e in &entries {
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::InvalidMeasure(format!("bundle weight {}", e.weight)));
            }
            grid.ensure_same(e.trajectory.grid())?;
            grid.ensure_same(e.control.grid())?;
            if e.trajectory.dim() != dim || e.x0.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: e.trajectory.dim().max(e.x0.len()),
                });
            }
            if e.trajectory.state(0) != e.x0.as_slice() {
                return Err(Error::Inconsistent(format!(
                    "trajectory starts at {:?}, entry origin is {:?}",
                    e.trajectory.state(0),
                    e.x0
                )));
            }
        }
        let total: f64 = entries.iter().map(|e| e.weight).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("bundle weights sum to {total}")));
        }
        Ok(Self { grid, dim, entries })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[BundleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distribution of states at node `k`, coincident atoms merged.
    pub fn node_measure(&self, k: usize) -> Result<ParticleMeasure> {
        let mut coords = Vec::with_capacity(self.entries.len() * self.dim);
        let mut weights = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            coords.extend_from_slice(e.trajectory.state(k));
            weights.push(e.weight);
        }
        Ok(ParticleMeasure::normalized(self.dim, coords, weights)?.merged(0.0))
    }

    /// The flow `t -> e_t # bundle`.
    pub fn flow(&self) -> Result<MeasureFlow> {
        let snaps = (0..self.grid.node_count())
            .map(|k| self.node_measure(k))
            .collect::<Result<Vec<_>>>()?;
        MeasureFlow::new(self.grid, snaps)
    }

    /// Largest state or cost deviation after re-integrating every control
    /// from its origin against `ctx`.
    pub fn reintegration_defect(&self, model: &dyn MeanFieldModel, ctx: &FlowContext) -> Result<f64> {
        let mut worst = 0.0f64;
        for e in &self.entries {
            let tr = ctx.integrate(model, 0, &e.x0, &e.control)?;
            for k in 0..self.grid.node_count() {
                for (a, b) in tr.state(k).iter().zip(e.trajectory.state(k)) {
                    worst = worst.max((a - b).abs());
                }
                worst = worst.max((tr.cost(k) - e.trajectory.cost(k)).abs());
            }
        }
        Ok(worst)
    }

    /// `max |J(entry) - V(0, x0)|`: how far the discrete payoffs of the
    /// bundle's own controls sit from the value they are supposed to attain.
    pub fn dp_consistency(&self, model: &dyn MeanFieldModel, ctx: &FlowContext, vfield: &ValueField) -> f64 {
        self.entries
            .iter()
            .map(|e| (ctx.payoff_of(model, &e.trajectory) - vfield.value_at(0, &e.x0)).abs())
            .fold(0.0, f64::max)
    }
}

/// Uniform partition of a box into rectangular cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPartition {
    region: BoxRegion,
    cells: Vec<usize>,
}

impl CellPartition {
    pub fn new(region: BoxRegion, cells: Vec<usize>) -> Result<Self> {
        if cells.len() != region.dim() {
            return Err(Error::DimensionMismatch {
                expected: region.dim(),
                found: cells.len(),
            });
        }
        if cells.contains(&0) {
            return Err(Error::InvalidGrid("a partition needs at least one cell per axis".into()));
        }
        if region.widths().iter().any(|w| *w <= 0.0) {
            return Err(Error::InvalidGrid("partition box has an empty axis".into()));
        }
        Ok(Self { region, cells })
    }

    pub fn uniform(region: BoxRegion, per_axis: usize) -> Result<Self> {
        let n = region.dim();
        Self::new(region, vec![per_axis; n])
    }

    pub fn region(&self) -> &BoxRegion {
        &self.region
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// Multi-index of the cell holding `x`; points outside are assigned to
    /// the nearest boundary cell.
    pub fn cell_of(&self, x: &[f64]) -> Vec<usize> {
        (0..self.cells.len())
            .map(|d| {
                let w = (self.region.hi[d] - self.region.lo[d]) / self.cells[d] as f64;
                let s = ((x[d] - self.region.lo[d]) / w).floor();
                (s.max(0.0) as usize).min(self.cells[d] - 1)
            })
            .collect()
    }

    pub fn center(&self, cell: &[usize]) -> Vec<f64> {
        (0..self.cells.len())
            .map(|d| {
                let w = (self.region.hi[d] - self.region.lo[d]) / self.cells[d] as f64;
                self.region.lo[d] + (cell[d] as f64 + 0.5) * w
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellVelocity {
    pub cell: Vec<usize>,
    pub center: Vec<f64>,
    /// Mass-weighted mean of `(x_{k+1} - x_k) / dt` over entries in the cell.
    pub b: Vec<f64>,
    pub mass: f64,
}

/// Averaged bundle velocity per nonempty cell at node `k < steps`, ordered
/// by cell multi-index.
pub fn mean_field_velocity(
    bundle: &TrajectoryBundle,
    k: usize,
    partition: &CellPartition,
) -> Result<Vec<CellVelocity>> {
    if k >= bundle.grid().steps() {
        return Err(Error::GridMismatch(format!(
            "node {k} has no following cell (steps = {})",
            bundle.grid().steps()
        )));
    }
    if partition.region().dim() != bundle.dim() {
        return Err(Error::DimensionMismatch {
            expected: bundle.dim(),
            found: partition.region().dim(),
        });
    }
    let mut acc: std::collections::BTreeMap<Vec<usize>, (Vec<f64>, f64)> = Default::default();
    for e in bundle.entries() {
        let cell = partition.cell_of(e.trajectory.state(k));
        let v = e.trajectory.velocity(k);
        let slot = acc
            .entry(cell)
            .or_insert_with(|| (vec![0.0; bundle.dim()], 0.0));
        for (s, vi) in slot.0.iter_mut().zip(&v) {
            *s += e.weight * vi;
        }
        slot.1 += e.weight;
    }
    Ok(acc
        .into_iter()
        .map(|(cell, (sum, mass))| CellVelocity {
            center: partition.center(&cell),
            b: sum.iter().map(|s| s / mass).collect(),
            cell,
            mass,
        })
        .collect())
}

/// `max_k |d/dt int phi d mu - sum_cells mass <b, grad phi(center)>|`, with
/// the time derivative taken as the forward difference of the bundle flow.
pub fn integral_transform_defect(
    bundle: &TrajectoryBundle,
    partition: &CellPartition,
    phi: impl Fn(&[f64]) -> f64,
    grad_phi: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<f64> {
    let dt = bundle.grid().dt();
    let mut worst = 0.0f64;
    for k in 0..bundle.grid().steps() {
        let lhs: f64 = bundle
            .entries()
            .iter()
            .map(|e| e.weight * (phi(e.trajectory.state(k + 1)) - phi(e.trajectory.state(k))) / dt)
            .sum();
        let rhs: f64 = mean_field_velocity(bundle, k, partition)?
            .iter()
            .map(|c| {
                let g = grad_phi(&c.center);
                c.mass * c.b.iter().zip(&g).map(|(b, g)| b * g).sum::<f64>()
            })
            .sum();
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}
