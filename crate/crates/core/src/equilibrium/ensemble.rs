use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::Result;
use crate::measures::{euclid, MeasureFlow, ParticleMeasure, TimeGrid};

use super::bundle::TrajectoryBundle;

#[derive(Debug, Clone)]
struct Path {
    origin: usize,
    weight: f64,
    states: Vec<f64>,
}

/// Weighted state paths grouped by the initial atom they start from. The
/// iterate flows of the fixed-point driver live here so that mixing and
/// consolidation never move mass between initial atoms.
#[derive(Debug, Clone)]
pub(crate) struct PathEnsemble {
    grid: TimeGrid,
    dim: usize,
    m0: ParticleMeasure,
    paths: Vec<Path>,
}

impl PathEnsemble {
    /// Every atom of `m0` at rest.
    pub fn frozen(grid: TimeGrid, m0: &ParticleMeasure) -> Self {
        let nodes = grid.node_count();
        let paths = m0
            .iter()
            .enumerate()
            .map(|(i, (x, w))| Path {
                origin: i,
                weight: w,
                states: x.repeat(nodes),
            })
            .collect();
        Self {
            grid,
            dim: m0.dim(),
            m0: m0.clone(),
            paths,
        }
    }

    /// Paths of a bundle started from the atoms of `m0`; `origins[i]` is the
    /// initial atom of entry `i`.
    pub fn from_bundle(m0: &ParticleMeasure, bundle: &TrajectoryBundle, origins: &[usize]) -> Self {
        let nodes = bundle.grid().node_count();
        let paths = bundle
            .entries()
            .iter()
            .zip(origins)
            .map(|(e, &origin)| {
                let mut states = Vec::with_capacity(nodes * bundle.dim());
                for k in 0..nodes {
                    states.extend_from_slice(e.trajectory.state(k));
                }
                Path {
                    origin,
                    weight: e.weight,
                    states,
                }
            })
            .collect();
        Self {
            grid: *bundle.grid(),
            dim: bundle.dim(),
            m0: m0.clone(),
            paths,
        }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    /// `(1 - beta) * self + beta * other`, identical paths merged.
    pub fn mix(&mut self, other: PathEnsemble, beta: f64) {
        if beta >= 1.0 {
            self.paths = other.paths;
        } else {
            for p in &mut self.paths {
                p.weight *= 1.0 - beta;
            }
            self.paths.extend(other.paths.into_iter().map(|mut p| {
                p.weight *= beta;
                p
            }));
        }
        self.dedupe();
        self.renormalize();
    }

    fn dedupe(&mut self) {
        let mut seen: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
        let mut kept: Vec<Path> = Vec::with_capacity(self.paths.len());
        for p in self.paths.drain(..) {
            if p.weight <= 0.0 {
                continue;
            }
            let key = (p.origin, p.states.iter().map(|v| v.to_bits()).collect());
            match seen.get(&key) {
                Some(&i) => kept[i].weight += p.weight,
                None => {
                    seen.insert(key, kept.len());
                    kept.push(p);
                }
            }
        }
        self.paths = kept;
    }

    fn renormalize(&mut self) {
        let total: f64 = self.paths.iter().map(|p| p.weight).sum();
        for p in &mut self.paths {
            p.weight /= total;
        }
    }

    /// Merges smallest-weight paths into their nearest neighbour (sup-norm
    /// over nodes, same initial atom) until at most `cap` remain. Returns an
    /// upper bound on the induced change of every snapshot in W1.
    pub fn consolidate(&mut self, cap: usize) -> f64 {
        if self.paths.len() <= cap {
            return 0.0;
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, p) in self.paths.iter().enumerate() {
            groups.entry(p.origin).or_default().push(i);
        }
        let mut order: Vec<usize> = (0..self.paths.len()).collect();
        order.sort_by(|&a, &b| {
            self.paths[a]
                .weight
                .total_cmp(&self.paths[b].weight)
                .then(a.cmp(&b))
        });
        let mut alive = vec![true; self.paths.len()];
        let mut excess = self.paths.len() - cap;
        let mut moved = 0.0;
        for i in order {
            if excess == 0 {
                break;
            }
            let origin = self.paths[i].origin;
            let group = &groups[&origin];
            let mut best: Option<(f64, usize)> = None;
            for &j in group {
                if j == i || !alive[j] {
                    continue;
                }
                let d = self.sup_distance(i, j);
                if best.is_none_or(|(bd, bj)| d < bd || (d == bd && j < bj)) {
                    best = Some((d, j));
                }
            }
            let Some((d, j)) = best else { continue };
            let w = self.paths[i].weight;
            self.paths[j].weight += w;
            alive[i] = false;
            moved += w * d;
            excess -= 1;
        }
        let mut idx = 0;
        self.paths.retain(|_| {
            let keep = alive[idx];
            idx += 1;
            keep
        });
        moved
    }

    fn sup_distance(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (&self.paths[a].states, &self.paths[b].states);
        pa.chunks_exact(self.dim)
            .zip(pb.chunks_exact(self.dim))
            .map(|(x, y)| euclid(x, y))
            .fold(0.0, f64::max)
    }

    /// Node-wise distribution of the paths. Node 0 is `m0` itself: every
    /// group carries its atom's mass, up to rounding.
    pub fn flow(&self) -> Result<MeasureFlow> {
        let nodes = self.grid.node_count();
        let weights: Vec<f64> = self.paths.iter().map(|p| p.weight).collect();
        let snaps = (0..nodes)
            .into_par_iter()
            .map(|k| {
                if k == 0 {
                    return Ok(self.m0.clone());
                }
                let mut coords = Vec::with_capacity(self.paths.len() * self.dim);
                for p in &self.paths {
                    coords.extend_from_slice(&p.states[k * self.dim..(k + 1) * self.dim]);
                }
                Ok(ParticleMeasure::normalized(self.dim, coords, weights.clone())?.merged(0.0))
            })
            .collect::<Result<Vec<_>>>()?;
        MeasureFlow::new(self.grid, snaps)
    }
}
