//! Exact Wasserstein-1 transport between particle measures.
//!
//! One-dimensional problems use the monotone (sorted-quantile) coupling,
//! which is optimal for the cost `|x - y|`. Higher dimensions solve the
//! transportation LP with a primal network simplex on the bipartite support
//! graph.

use std::collections::VecDeque;

use crate::error::{Error, Result};

use super::particle::{euclid, ParticleMeasure};

/// Default cap on `|supp a| * |supp b|` for the LP route.
pub const DEFAULT_SUPPORT_CAP: usize = 2000 * 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// A coupling between two particle measures, indexed by atom positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub entries: Vec<PlanEntry>,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMethod {
    /// Quantile coupling in 1D, network simplex otherwise.
    Auto,
    Quantile,
    NetworkSimplex,
}

#[derive(Debug, Clone, Copy)]
pub struct TransportOptions {
    pub method: TransportMethod,
    pub support_cap: usize,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self {
            method: TransportMethod::Auto,
            support_cap: DEFAULT_SUPPORT_CAP,
        }
    }
}

pub fn w1_distance(a: &ParticleMeasure, b: &ParticleMeasure) -> Result<f64> {
    w1_distance_with(a, b, &TransportOptions::default())
}

pub fn w1_distance_with(
    a: &ParticleMeasure,
    b: &ParticleMeasure,
    opts: &TransportOptions,
) -> Result<f64> {
    check_dims(a, b)?;
    if a.dim() == 1 && opts.method != TransportMethod::NetworkSimplex {
        return Ok(w1_1d(a, b));
    }
    optimal_plan_with(a, b, opts).map(|p| p.cost)
}

pub fn optimal_plan(a: &ParticleMeasure, b: &ParticleMeasure) -> Result<TransportPlan> {
    optimal_plan_with(a, b, &TransportOptions::default())
}

pub fn optimal_plan_with(
    a: &ParticleMeasure,
    b: &ParticleMeasure,
    opts: &TransportOptions,
) -> Result<TransportPlan> {
    check_dims(a, b)?;
    let use_quantile = match opts.method {
        TransportMethod::Auto => a.dim() == 1,
        TransportMethod::Quantile => {
            if a.dim() != 1 {
                return Err(Error::Transport(
                    "quantile coupling is only defined in dimension 1".into(),
                ));
            }
            true
        }
        TransportMethod::NetworkSimplex => false,
    };
    if use_quantile {
        return Ok(quantile_coupling(a, b));
    }
    let (m, n) = (a.len(), b.len());
    if m.saturating_mul(n) > opts.support_cap {
        return Err(Error::SupportTooLarge {
            rows: m,
            cols: n,
            cap: opts.support_cap,
        });
    }
    let mut cost = vec![0.0; m * n];
    for i in 0..m {
        let x = a.point(i);
        for j in 0..n {
            cost[i * n + j] = euclid(x, b.point(j));
        }
    }
    let flows = solve_transportation(a.weights(), b.weights(), &cost)?;
    let mut total = 0.0;
    let entries = flows
        .into_iter()
        .filter(|&(_, _, f)| f > 0.0)
        .map(|(i, j, f)| {
            total += f * cost[i * n + j];
            PlanEntry {
                source: i,
                target: j,
                mass: f,
            }
        })
        .collect();
    Ok(TransportPlan {
        entries,
        cost: total,
    })
}

fn check_dims(a: &ParticleMeasure, b: &ParticleMeasure) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

fn sorted_order(m: &ParticleMeasure) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m.len()).collect();
    idx.sort_by(|&i, &j| m.point(i)[0].total_cmp(&m.point(j)[0]).then(i.cmp(&j)));
    idx
}

/// Monotone coupling of two 1D measures. When both current atoms run out at
/// the same cumulative weight, the atom of `a` is consumed first.
pub fn quantile_coupling(a: &ParticleMeasure, b: &ParticleMeasure) -> TransportPlan {
    let oa = sorted_order(a);
    let ob = sorted_order(b);
    let mut entries = Vec::with_capacity(oa.len() + ob.len());
    let mut cost = 0.0;
    let (mut i, mut j) = (0, 0);
    let mut ra = a.weight(oa[0]);
    let mut rb = b.weight(ob[0]);
    loop {
        let x = ra.min(rb);
        if x > 0.0 {
            let (s, t) = (oa[i], ob[j]);
            cost += x * (a.point(s)[0] - b.point(t)[0]).abs();
            entries.push(PlanEntry {
                source: s,
                target: t,
                mass: x,
            });
        }
        ra -= x;
        rb -= x;
        if ra <= rb {
            i += 1;
            if i == oa.len() {
                break;
            }
            ra = a.weight(oa[i]);
        } else {
            j += 1;
            if j == ob.len() {
                break;
            }
            rb = b.weight(ob[j]);
        }
    }
    TransportPlan { entries, cost }
}

/// `W1` in 1D without materializing the plan.
pub(crate) fn w1_1d(a: &ParticleMeasure, b: &ParticleMeasure) -> f64 {
    // Integral of |F_a - F_b| over the merged breakpoints.
    let oa = sorted_order(a);
    let ob = sorted_order(b);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut last = f64::NAN;
    let mut total = 0.0;
    while i < oa.len() || j < ob.len() {
        let xa = oa.get(i).map(|&k| a.point(k)[0]).unwrap_or(f64::INFINITY);
        let xb = ob.get(j).map(|&k| b.point(k)[0]).unwrap_or(f64::INFINITY);
        let x = xa.min(xb);
        if last.is_finite() {
            total += (fa - fb).abs() * (x - last);
        }
        while i < oa.len() && a.point(oa[i])[0] == x {
            fa += a.weight(oa[i]);
            i += 1;
        }
        while j < ob.len() && b.point(ob[j])[0] == x {
            fb += b.weight(ob[j]);
            j += 1;
        }
        last = x;
    }
    total
}

/// Solves `min sum c_ij f_ij` over transport plans with the given marginals
/// using the primal network simplex on a spanning-tree basis. Returns the
/// basic cells with their flows (zero flows included).
pub(crate) fn solve_transportation(
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
) -> Result<Vec<(usize, usize, f64)>> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 || cost.len() != m * n {
        return Err(Error::Transport("empty or malformed transport problem".into()));
    }
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(m + n - 1);
    let mut flow: Vec<f64> = Vec::with_capacity(m + n - 1);

    // North-west corner start: a staircase, hence a spanning tree.
    let (mut i, mut j) = (0, 0);
    let mut ra = supply[0];
    let mut rb = demand[0];
    loop {
        let x = ra.min(rb).max(0.0);
        basis.push((i, j));
        flow.push(x);
        ra -= x;
        rb -= x;
        if i + 1 == m && j + 1 == n {
            break;
        }
        if (ra <= rb && i + 1 < m) || j + 1 == n {
            i += 1;
            ra = supply[i];
        } else {
            j += 1;
            rb = demand[j];
        }
    }
    debug_assert_eq!(basis.len(), m + n - 1);

    let scale = cost.iter().fold(0.0f64, |s, c| s.max(c.abs())) + 1.0;
    let eps = 1e-12 * scale;
    let nodes = m + n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let mut parent_edge = vec![usize::MAX; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut pot = vec![0.0f64; nodes];
    let mut queue = VecDeque::with_capacity(nodes);

    let max_iter = 20 * (m + n) * (m + n).max(50) + 10_000;
    let mut degenerate_run = 0usize;
    let mut bland = false;
    let mut cursor = 0usize;
    let block = ((m * n) as f64).sqrt().ceil() as usize + n;

    for _ in 0..max_iter {
        // Rebuild tree structure and potentials (u_i for rows, v_j for cols).
        for a in &mut adj {
            a.clear();
        }
        for (e, &(r, c)) in basis.iter().enumerate() {
            adj[r].push(e);
            adj[m + c].push(e);
        }
        parent_edge.iter_mut().for_each(|p| *p = usize::MAX);
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        queue.clear();
        queue.push_back(0);
        pot[0] = 0.0;
        depth[0] = 0;
        parent[0] = 0;
        let mut seen = 1;
        while let Some(v) = queue.pop_front() {
            for &e in &adj[v] {
                let (r, c) = basis[e];
                let w = if v < m { m + c } else { r };
                if parent[w] != usize::MAX {
                    continue;
                }
                parent[w] = v;
                parent_edge[w] = e;
                depth[w] = depth[v] + 1;
                let cij = cost[r * n + c];
                pot[w] = cij - pot[v];
                seen += 1;
                queue.push_back(w);
            }
        }
        if seen != nodes {
            return Err(Error::Transport("basis is not a spanning tree".into()));
        }

        // Pricing.
        let total = m * n;
        let mut entering = None;
        if bland {
            for idx in 0..total {
                let (r, c) = (idx / n, idx % n);
                if cost[idx] - pot[r] - pot[m + c] < -eps {
                    entering = Some((r, c));
                    break;
                }
            }
        } else {
            let mut best = -eps;
            let mut scanned = 0;
            while scanned < total {
                let end = (scanned + block).min(total);
                for _ in scanned..end {
                    let idx = cursor;
                    cursor += 1;
                    if cursor == total {
                        cursor = 0;
                    }
                    let (r, c) = (idx / n, idx % n);
                    let rc = cost[idx] - pot[r] - pot[m + c];
                    if rc < best {
                        best = rc;
                        entering = Some((r, c));
                    }
                }
                scanned = end;
                if entering.is_some() {
                    break;
                }
            }
        }
        let Some((er, ec)) = entering else {
            return Ok(basis
                .iter()
                .zip(&flow)
                .map(|(&(r, c), &f)| (r, c, f))
                .collect());
        };

        // Tree path from row node `er` to column node `m + ec`.
        let (mut a, mut b) = (er, m + ec);
        let mut side_a = Vec::new();
        let mut side_b = Vec::new();
        while depth[a] > depth[b] {
            side_a.push(parent_edge[a]);
            a = parent[a];
        }
        while depth[b] > depth[a] {
            side_b.push(parent_edge[b]);
            b = parent[b];
        }
        while a != b {
            side_a.push(parent_edge[a]);
            a = parent[a];
            side_b.push(parent_edge[b]);
            b = parent[b];
        }
        side_b.reverse();
        let path: Vec<usize> = side_a.into_iter().chain(side_b).collect();

        // Even positions lose flow, odd positions gain.
        let mut theta = f64::INFINITY;
        let mut leave_pos = usize::MAX;
        for (pos, &e) in path.iter().enumerate().step_by(2) {
            let f = flow[e];
            let better = if f < theta {
                true
            } else {
                bland && f == theta && basis[e] < basis[path[leave_pos]]
            };
            if better {
                theta = f;
                leave_pos = pos;
            }
        }
        for (pos, &e) in path.iter().enumerate() {
            if pos % 2 == 0 {
                flow[e] -= theta;
            } else {
                flow[e] += theta;
            }
        }
        let leave = path[leave_pos];
        basis[leave] = (er, ec);
        flow[leave] = theta;

        if theta == 0.0 {
            degenerate_run += 1;
            if degenerate_run > 2 * nodes {
                bland = true;
            }
        } else {
            degenerate_run = 0;
        }
    }
    Err(Error::Transport(format!(
        "network simplex did not terminate within {max_iter} pivots"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp_opts() -> TransportOptions {
        TransportOptions {
            method: TransportMethod::NetworkSimplex,
            ..Default::default()
        }
    }

    #[test]
    fn identical_diracs_are_at_distance_zero() {
        let d = ParticleMeasure::dirac(&[0.0]);
        assert_eq!(w1_distance(&d, &d).unwrap(), 0.0);
        assert_eq!(w1_distance_with(&d, &d, &lp_opts()).unwrap(), 0.0);
    }

    #[test]
    fn two_diracs() {
        let a = ParticleMeasure::dirac(&[0.0]);
        let b = ParticleMeasure::dirac(&[2.0]);
        assert_eq!(w1_distance(&a, &b).unwrap(), 2.0);
        assert_eq!(w1_distance_with(&a, &b, &lp_opts()).unwrap(), 2.0);
    }

    #[test]
    fn split_mass_onto_midpoint() {
        // The only feasible plan sends both halves to 0.5.
        let a = ParticleMeasure::uniform_1d(&[0.0, 1.0]).unwrap();
        let b = ParticleMeasure::dirac(&[0.5]);
        assert!((w1_distance(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert!((w1_distance_with(&a, &b, &lp_opts()).unwrap() - 0.5).abs() < 1e-15);
        let plan = quantile_coupling(&a, &b);
        assert_eq!(plan.entries.len(), 2);
        assert!((plan.cost - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = ParticleMeasure::dirac(&[0.0]);
        let b = ParticleMeasure::dirac(&[0.0, 1.0]);
        assert!(matches!(
            w1_distance(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn support_cap_is_enforced() {
        let a = ParticleMeasure::uniform(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let b = ParticleMeasure::uniform(&[vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let opts = TransportOptions {
            support_cap: 3,
            ..Default::default()
        };
        assert!(matches!(
            w1_distance_with(&a, &b, &opts),
            Err(Error::SupportTooLarge { .. })
        ));
    }

    #[test]
    fn two_dimensional_assignment() {
        // Unit square corners: optimal matching pairs horizontal neighbours.
        let a = ParticleMeasure::uniform(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = ParticleMeasure::uniform(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!((w1_distance(&a, &b).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn left_atom_consumed_first_on_ties() {
        let a = ParticleMeasure::uniform_1d(&[0.0, 1.0]).unwrap();
        let b = ParticleMeasure::uniform_1d(&[0.0, 1.0]).unwrap();
        let plan = quantile_coupling(&a, &b);
        assert_eq!(plan.entries.len(), 2);
        assert_eq!(plan.cost, 0.0);
    }

    #[test]
    fn degenerate_lp_terminates() {
        // Many equal weights and equal costs produce heavy degeneracy.
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|k| vec![(k % 3) as f64, (k / 3) as f64])
            .collect();
        let a = ParticleMeasure::uniform(&pts).unwrap();
        let mut rev = pts.clone();
        rev.reverse();
        let b = ParticleMeasure::uniform(&rev).unwrap();
        assert!(w1_distance(&a, &b).unwrap().abs() < 1e-14);
    }
}
