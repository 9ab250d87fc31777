use rayon::prelude::*;

use crate::dynamics::{FlowContext, RelaxedControl};
use crate::error::{Error, Result};
use crate::measures::{MeasureFlow, TimeGrid};
use crate::model::{is_tied, MeanFieldModel};

use super::StateGrid;

/// Largest contamination weight at which a point still counts as trusted.
pub const TRUST_TOL: f64 = 1e-6;

/// Value function on a time grid times a state lattice.
///
/// Alongside the values, every node carries a contamination weight: the
/// share of its value that can depend on feet clamped to the box boundary,
/// propagated backwards through the interpolation weights of the optimal
/// controls. Clamped controls whose linear extrapolation past the boundary
/// could compete with the optimum contaminate fully. Points with weight at
/// most [`TRUST_TOL`] are trusted.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    time: TimeGrid,
    sgrid: StateGrid,
    values: Vec<f64>,
    contamination: Vec<f64>,
    argmax: Vec<Vec<u32>>,
}

impl ValueField {
    /// Rebuilds argmax sets and contamination weights for stored node-major
    /// values (`k * len + i`), e.g. after loading from disk. The values
    /// themselves are kept as given.
    pub fn from_values(
        model: &dyn MeanFieldModel,
        ctx: &FlowContext,
        sgrid: &StateGrid,
        values: Vec<f64>,
    ) -> Result<Self> {
        let time = *ctx.grid();
        if values.len() != time.node_count() * sgrid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} x {} nodes",
                values.len(),
                time.node_count(),
                sgrid.len()
            )));
        }
        sweep(model, ctx, sgrid, Some(values))
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time
    }

    pub fn state_grid(&self) -> &StateGrid {
        &self.sgrid
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.sgrid.len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn contamination(&self, k: usize) -> &[f64] {
        let n = self.sgrid.len();
        &self.contamination[k * n..(k + 1) * n]
    }

    /// Optimal control indices at time node `k < steps`, state node `i`.
    pub fn argmax(&self, k: usize, i: usize) -> &[u32] {
        &self.argmax[k * self.sgrid.len() + i]
    }

    /// `V(t_k, x)` by multilinear interpolation (x clamped into the box).
    pub fn value_at(&self, k: usize, x: &[f64]) -> f64 {
        self.sgrid.interpolate(self.slice(k), x)
    }

    /// `V(t, x)`, linear in time between nodes.
    pub fn value_at_time(&self, t: f64, x: &[f64]) -> f64 {
        let dt = self.time.dt();
        let s = (t / dt).clamp(0.0, self.time.steps() as f64);
        let k = (s.floor() as usize).min(self.time.steps() - 1);
        let w = s - k as f64;
        let a = self.value_at(k, x);
        if w == 0.0 {
            return a;
        }
        (1.0 - w) * a + w * self.value_at(k + 1, x)
    }

    /// Whether `x` lies in the box and every stencil node used to
    /// interpolate at `x` is trusted at node `k`.
    pub fn is_trusted(&self, k: usize, x: &[f64]) -> bool {
        if !self.sgrid.region().contains(x, 1e-12) {
            return false;
        }
        let c = self.contamination(k);
        let mut ok = true;
        self.sgrid.for_each_corner(x, |i, w| {
            if w > 0.0 && c[i] > TRUST_TOL {
                ok = false;
            }
        });
        ok
    }

    pub fn trusted_mask(&self, k: usize) -> Vec<bool> {
        self.contamination(k).iter().map(|c| *c <= TRUST_TOL).collect()
    }

    /// Largest `|V_k - max_u [-dt g + V_{k+1}(foot)]|` over trusted nodes:
    /// zero for a field produced by the sweep.
    pub fn dp_residual(&self, model: &dyn MeanFieldModel, ctx: &FlowContext) -> Result<f64> {
        let fresh = sweep_from(model, ctx, &self.sgrid, &self.values)?;
        let mut worst = 0.0f64;
        for (i, (a, b)) in self.values.iter().zip(&fresh).enumerate() {
            if self.contamination[i] <= TRUST_TOL {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

/// Backward semi-Lagrangian sweep against the frozen flow `mu`.
pub fn solve_value(
    model: &dyn MeanFieldModel,
    mu: &MeasureFlow,
    sgrid: &StateGrid,
) -> Result<ValueField> {
    let ctx = FlowContext::new(model, mu)?;
    solve_value_in(model, &ctx, sgrid)
}

pub fn solve_value_in(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    sgrid: &StateGrid,
) -> Result<ValueField> {
    let field = sweep(model, ctx, sgrid, None)?;
    let m0 = model.initial_measure();
    if let Some((x, _)) = m0.iter().find(|(x, _)| !field.is_trusted(0, x)) {
        return Err(Error::StateGridTooSmall(format!(
            "initial atom {x:?} depends on clamped boundary values of the state box {:?}..{:?}; enlarge the box",
            sgrid.region().lo,
            sgrid.region().hi
        )));
    }
    Ok(field)
}

struct NodeResult {
    value: f64,
    argmax: Vec<u32>,
    contamination: f64,
}

struct Slice<'a> {
    values: &'a [f64],
    contamination: &'a [f64],
}

fn terminal(model: &dyn MeanFieldModel, ctx: &FlowContext, sgrid: &StateGrid) -> Result<Vec<f64>> {
    let last = ctx.features(ctx.grid().steps());
    (0..sgrid.len())
        .map(|i| {
            let v = model.terminal_payoff(&sgrid.node(i), last);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite {
                    what: "terminal payoff",
                    control: 0,
                })
            }
        })
        .collect()
}

/// Linear extrapolation of the interpolant past the box along clamped axes.
fn extrapolate(sgrid: &StateGrid, values: &[f64], foot: &[f64], clamped: &[f64]) -> f64 {
    let base = sgrid.interpolate(values, clamped);
    let b = sgrid.region();
    let h = sgrid.spacing();
    let mut ext = base;
    let mut probe = clamped.to_vec();
    for d in 0..foot.len() {
        let over = foot[d] - clamped[d];
        if over == 0.0 {
            continue;
        }
        let inward = if foot[d] > b.hi[d] { -h[d] } else { h[d] };
        probe[d] = clamped[d] + inward;
        let slope = (base - sgrid.interpolate(values, &probe)) / (-inward);
        probe[d] = clamped[d];
        ext += slope * over;
    }
    ext
}

fn node_update(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    sgrid: &StateGrid,
    k: usize,
    i: usize,
    next: &Slice<'_>,
) -> Result<NodeResult> {
    let n = sgrid.dim();
    let dt = ctx.grid().dt();
    let t = ctx.grid().node(k);
    let feats = ctx.features(k);
    let x = sgrid.node(i);
    let mut f = vec![0.0; n];
    let nc = model.controls().len();
    let mut objs = Vec::with_capacity(nc);
    let mut feet: Vec<(Vec<f64>, bool)> = Vec::with_capacity(nc);
    let mut runs = Vec::with_capacity(nc);
    for (j, u) in model.controls().iter().enumerate() {
        model.velocity(t, &x, feats, u, &mut f);
        let g = model.running_cost(t, &x, feats, u);
        if !g.is_finite() || f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "coefficient",
                control: j,
            });
        }
        let foot: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + dt * b).collect();
        let mut c = foot.clone();
        let clamped = sgrid.region().clamp(&mut c);
        objs.push(-dt * g + sgrid.interpolate(next.values, &c));
        runs.push(-dt * g);
        feet.push((if clamped { foot } else { c }, clamped));
    }
    let best = objs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut contamination = 0.0f64;
    let mut argmax = Vec::new();
    for j in 0..nc {
        let (foot, clamped) = &feet[j];
        if is_tied(objs[j], best) {
            argmax.push(j as u32);
            if *clamped {
                contamination = 1.0;
            } else {
                let mut c = 0.0;
                sgrid.for_each_corner(foot, |idx, w| c += w * next.contamination[idx]);
                contamination = contamination.max(c.min(1.0));
            }
        } else if *clamped {
            let mut c = foot.clone();
            sgrid.region().clamp(&mut c);
            if runs[j] + extrapolate(sgrid, next.values, foot, &c) >= best {
                contamination = 1.0;
            }
        }
    }
    Ok(NodeResult {
        value: best,
        argmax,
        contamination,
    })
}

/// Runs the backward recursion. With `stored`, the recursion reads the
/// stored values at `k + 1` and keeps them; otherwise it fills in its own.
fn sweep(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    sgrid: &StateGrid,
    stored: Option<Vec<f64>>,
) -> Result<ValueField> {
    let n = model.dim();
    if sgrid.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: sgrid.dim(),
        });
    }
    let time = *ctx.grid();
    let steps = time.steps();
    let len = sgrid.len();
    let keep = stored.is_some();
    let mut values = match stored {
        Some(v) => v,
        None => {
            let mut v = vec![0.0; time.node_count() * len];
            v[steps * len..].copy_from_slice(&terminal(model, ctx, sgrid)?);
            v
        }
    };
    let mut contamination = vec![0.0; time.node_count() * len];
    let mut argmax = vec![Vec::new(); steps * len];
    for k in (0..steps).rev() {
        let (vh, vt) = values.split_at_mut((k + 1) * len);
        let (ch, ct) = contamination.split_at_mut((k + 1) * len);
        let next = Slice {
            values: &vt[..len],
            contamination: &ct[..len],
        };
        let results: Vec<Result<NodeResult>> = (0..len)
            .into_par_iter()
            .map(|i| node_update(model, ctx, sgrid, k, i, &next))
            .collect();
        for (i, r) in results.into_iter().enumerate() {
            let r = r?;
            if !keep {
                vh[k * len + i] = r.value;
            }
            ch[k * len + i] = r.contamination;
            argmax[k * len + i] = r.argmax;
        }
    }
    Ok(ValueField {
        time,
        sgrid: sgrid.clone(),
        values,
        contamination,
        argmax,
    })
}

/// Recomputes every slice from the stored next slice: `V_N = sigma` and
/// `V_k = max_u [...]` applied to the stored `V_{k+1}`.
fn sweep_from(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    sgrid: &StateGrid,
    values: &[f64],
) -> Result<Vec<f64>> {
    let time = *ctx.grid();
    let steps = time.steps();
    let len = sgrid.len();
    let zeros = vec![0.0; len];
    let mut out = vec![0.0; values.len()];
    out[steps * len..].copy_from_slice(&terminal(model, ctx, sgrid)?);
    for k in 0..steps {
        let next = Slice {
            values: &values[(k + 1) * len..(k + 2) * len],
            contamination: &zeros,
        };
        let slice: Vec<Result<f64>> = (0..len)
            .into_par_iter()
            .map(|i| node_update(model, ctx, sgrid, k, i, &next).map(|r| r.value))
            .collect();
        for (i, v) in slice.into_iter().enumerate() {
            out[k * len + i] = v?;
        }
    }
    Ok(out)
}

/// DP one-step objectives at an arbitrary state `x` and node `k < steps`.
pub fn step_objectives(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    vfield: &ValueField,
    k: usize,
    x: &[f64],
) -> Vec<f64> {
    let n = x.len();
    let dt = ctx.grid().dt();
    let t = ctx.grid().node(k);
    let feats = ctx.features(k);
    let next = vfield.slice(k + 1);
    let mut f = vec![0.0; n];
    let mut foot = vec![0.0; n];
    model
        .controls()
        .iter()
        .map(|u| {
            model.velocity(t, x, feats, u, &mut f);
            for d in 0..n {
                foot[d] = x[d] + dt * f[d];
            }
            -dt * model.running_cost(t, x, feats, u) + vfield.state_grid().interpolate(next, &foot)
        })
        .collect()
}

/// Indices attaining the DP one-step maximum at `(k, x)`, ascending.
pub fn tied_controls(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    vfield: &ValueField,
    k: usize,
    x: &[f64],
) -> Vec<usize> {
    let objs = step_objectives(model, ctx, vfield, k, x);
    let best = objs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    objs.iter()
        .enumerate()
        .filter(|(_, v)| is_tied(**v, best))
        .map(|(j, _)| j)
        .collect()
}

/// Greedy forward extraction from `x0` at node 0: at every node the first
/// control (in index order) maximizing the DP one-step objective. With
/// `first` set, the control of the first cell is forced.
pub fn best_response_in(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    vfield: &ValueField,
    x0: &[f64],
    first: Option<usize>,
) -> Result<RelaxedControl> {
    let n = model.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x0.len(),
        });
    }
    ctx.grid().ensure_same(vfield.time_grid())?;
    let steps = ctx.grid().steps();
    let nc = model.controls().len();
    let mut x = x0.to_vec();
    let mut picks = Vec::with_capacity(steps);
    let mut cell = vec![0.0; nc];
    for k in 0..steps {
        if !vfield.is_trusted(k, &x) {
            return Err(Error::StateGridTooSmall(format!(
                "best response reached {x:?} at node {k}, outside the trusted part of the state box"
            )));
        }
        let j = match (k, first) {
            (0, Some(j)) if j < nc => j,
            (0, Some(j)) => {
                return Err(Error::InvalidControl(format!("control index {j} out of range")))
            }
            _ => tied_controls(model, ctx, vfield, k, &x)[0],
        };
        picks.push(j);
        cell.iter_mut().for_each(|w| *w = 0.0);
        cell[j] = 1.0;
        ctx.step(model, k, &mut x, &cell);
    }
    RelaxedControl::from_indices(*ctx.grid(), nc, &picks)
}

pub fn best_response(
    model: &dyn MeanFieldModel,
    mu: &MeasureFlow,
    vfield: &ValueField,
    x0: &[f64],
) -> Result<RelaxedControl> {
    let ctx = FlowContext::new(model, mu)?;
    best_response_in(model, &ctx, vfield, x0, None)
}
