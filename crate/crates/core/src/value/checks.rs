use serde::{Deserialize, Serialize};

use crate::dynamics::{FlowContext, Trajectory};
use crate::error::Result;
use crate::model::{conjugate_with, project_to_velocity_hull, MeanFieldModel};

use super::ValueField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViabilityReport {
    /// `max_k |V(t_k, x_k) - (V(0, x_0) - w_k)|`.
    pub graph_defect: f64,
    /// `max_k max(0, H*(xi_k) - zeta_k)` over cells.
    pub e_minus_defect: f64,
    /// Largest distance of a discrete velocity from the velocity hull.
    pub hull_gap: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Checks that `(x, z)` with `z = V(0, x_0) - w` stays on the graph of `V`
/// and that its discrete derivative lies in `E-`.
///
/// The `E-` test evaluates the conjugate at the cell midpoint, after
/// projecting the discrete velocity onto the velocity hull there; the
/// projection distance is reported as `hull_gap`.
pub fn check_viability(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    vfield: &ValueField,
    traj: &Trajectory,
    tol: f64,
) -> Result<ViabilityReport> {
    ctx.grid().ensure_same(traj.grid())?;
    ctx.grid().ensure_same(vfield.time_grid())?;
    let grid = *ctx.grid();
    let dt = grid.dt();
    let v0 = vfield.value_at(0, traj.state(0));
    let mut graph = 0.0f64;
    for k in 0..grid.node_count() {
        let z = v0 - traj.cost(k);
        graph = graph.max((vfield.value_at(k, traj.state(k)) - z).abs());
    }
    let mut e_minus = 0.0f64;
    let mut gap = 0.0f64;
    let n = traj.dim();
    let mut mid = vec![0.0; n];
    for k in 0..grid.steps() {
        let xi = traj.velocity(k);
        let zeta = -(traj.cost(k + 1) - traj.cost(k)) / dt;
        for d in 0..n {
            mid[d] = 0.5 * (traj.state(k)[d] + traj.state(k + 1)[d]);
        }
        let t_mid = grid.node(k) + 0.5 * dt;
        let feats = ctx.features(k);
        let (proj, dist) = project_to_velocity_hull(model, t_mid, &mid, feats, &xi)?;
        gap = gap.max(dist);
        let hstar = conjugate_with(model, t_mid, &mid, feats, &proj)?;
        e_minus = e_minus.max((hstar - zeta).max(0.0));
    }
    Ok(ViabilityReport {
        graph_defect: graph,
        e_minus_defect: e_minus,
        hull_gap: gap,
        tol,
        pass: graph <= tol && e_minus <= tol && gap <= tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HadamardReport {
    /// `max(0, -min_samples sup_{E-} (d+V(1, xi) - zeta))`.
    pub upper_defect: f64,
    /// `max(0, max_samples max_u (d-V(1, f(u)) - g(u)))`.
    pub lower_defect: f64,
    /// Smallest sample value of `sup_{E-} (d+V - zeta)`; should be `>= 0`.
    pub upper_worst: f64,
    /// Largest sample value of `max_u (d-V - g)`; should be `<= 0`.
    pub lower_worst: f64,
    pub samples: usize,
}

/// Mixture weights used between pairs of `E-` vertices.
const MIX: [f64; 3] = [0.25, 0.5, 0.75];

/// Difference-quotient estimates of the directional Hadamard derivatives of
/// `V` at `(t_k, x)` for each sample, tested against `E-` (vertices
/// `(f(u), g(u))` and pairwise mixtures) and the singleton `E+` selections.
///
/// `deltas` are step sizes; the two smallest are used, `d+` taking the larger
/// quotient and `d-` the smaller.
pub fn check_hadamard(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    vfield: &ValueField,
    samples: &[(usize, Vec<f64>)],
    deltas: &[f64],
) -> Result<HadamardReport> {
    ctx.grid().ensure_same(vfield.time_grid())?;
    let mut ds: Vec<f64> = deltas.iter().copied().filter(|d| *d > 0.0).collect();
    ds.sort_by(f64::total_cmp);
    ds.truncate(2);
    if ds.is_empty() {
        return Err(crate::Error::InvalidGrid("no positive deltas".into()));
    }
    let grid = *ctx.grid();
    let n = model.dim();
    let mut upper_worst = f64::INFINITY;
    let mut lower_worst = f64::NEG_INFINITY;
    let mut used = 0;
    for (k, x) in samples {
        if *k >= grid.steps() || x.len() != n {
            continue;
        }
        used += 1;
        let t = grid.node(*k);
        let feats = ctx.features(*k);
        let base = vfield.value_at(*k, x);
        let quotients = |xi: &[f64]| -> (f64, f64) {
            let mut hi = f64::NEG_INFINITY;
            let mut lo = f64::INFINITY;
            let mut y = vec![0.0; n];
            for &d in &ds {
                for j in 0..n {
                    y[j] = x[j] + d * xi[j];
                }
                let q = (vfield.value_at_time(t + d, &y) - base) / d;
                hi = hi.max(q);
                lo = lo.min(q);
            }
            (lo, hi)
        };
        let verts: Vec<(Vec<f64>, f64)> = model
            .controls()
            .iter()
            .map(|u| {
                let mut f = vec![0.0; n];
                model.velocity(t, x, feats, u, &mut f);
                (f, model.running_cost(t, x, feats, u))
            })
            .collect();

        let mut lower = f64::NEG_INFINITY;
        let mut upper = f64::NEG_INFINITY;
        for (f, g) in &verts {
            let (dm, dp) = quotients(f);
            lower = lower.max(dm - g);
            upper = upper.max(dp - g);
        }
        for a in 0..verts.len() {
            for b in a + 1..verts.len() {
                for &w in &MIX {
                    let xi: Vec<f64> = verts[a]
                        .0
                        .iter()
                        .zip(&verts[b].0)
                        .map(|(p, q)| (1.0 - w) * p + w * q)
                        .collect();
                    let zeta = (1.0 - w) * verts[a].1 + w * verts[b].1;
                    let (_, dp) = quotients(&xi);
                    upper = upper.max(dp - zeta);
                }
            }
        }
        upper_worst = upper_worst.min(upper);
        lower_worst = lower_worst.max(lower);
    }
    if used == 0 {
        upper_worst = 0.0;
        lower_worst = 0.0;
    }
    Ok(HadamardReport {
        upper_defect: (-upper_worst).max(0.0),
        lower_defect: lower_worst.max(0.0),
        upper_worst,
        lower_worst,
        samples: used,
    })
}
