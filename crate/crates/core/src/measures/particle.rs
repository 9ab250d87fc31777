use std::cmp::Ordering;

use crate::error::{Error, Result};

use super::grid::BoxRegion;

/// Tolerance on the total mass of a probability measure.
pub const MASS_TOL: f64 = 1e-12;

/// Finitely supported probability measure on `R^n`.
///
/// Atoms are stored flat: point `i` occupies `coords[i*dim..(i+1)*dim]`.
/// Zero-weight atoms are dropped on construction; coincident atoms are kept
/// apart unless explicitly merged.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleMeasure {
    /// Builds a measure whose weights must already sum to one.
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = Self::build(dim, coords, weights)?;
        let total: f64 = m.weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(m)
    }

    /// Builds a measure from nonnegative weights, rescaling them to unit mass.
    pub fn normalized(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::build(dim, coords, weights)?;
        let total: f64 = m.weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidMeasure(format!("total mass {total}")));
        }
        for w in &mut m.weights {
            *w /= total;
        }
        Ok(m)
    }

    fn build(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if coords.len() != weights.len() * dim {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates for {} atoms of dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("bad weight {w}")));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite coordinate".into()));
        }
        let (coords, weights) = if weights.contains(&0.0) {
            let mut c = Vec::with_capacity(coords.len());
            let mut ws = Vec::with_capacity(weights.len());
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 {
                    c.extend_from_slice(&coords[i * dim..(i + 1) * dim]);
                    ws.push(*w);
                }
            }
            (c, ws)
        } else {
            (coords, weights)
        };
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("no atoms with positive weight".into()));
        }
        Ok(Self {
            dim,
            coords,
            weights,
        })
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self::new(point.len(), point.to_vec(), vec![1.0]).expect("valid dirac")
    }

    /// Uniform measure on the given points (duplicates keep separate atoms).
    pub fn uniform(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        let w = 1.0 / points.len().max(1) as f64;
        Self::normalized(dim, coords, vec![w; points.len()])
    }

    /// Uniform measure on scalar points.
    pub fn uniform_1d(points: &[f64]) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        Self::normalized(1, points.to_vec(), vec![w; points.len()])
    }

    pub fn from_atoms(atoms: &[(Vec<f64>, f64)]) -> Result<Self> {
        let dim = atoms.first().map(|a| a.0.len()).unwrap_or(0);
        let mut coords = Vec::with_capacity(atoms.len() * dim);
        let mut weights = Vec::with_capacity(atoms.len());
        for (p, w) in atoms {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
            weights.push(*w);
        }
        Self::new(dim, coords, weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.coords
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, mut phi: impl FnMut(&[f64]) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * phi(x)).sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (x, w) in self.iter() {
            for (a, b) in m.iter_mut().zip(x) {
                *a += w * b;
            }
        }
        m
    }

    pub fn support_box(&self) -> BoxRegion {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for (x, _) in self.iter() {
            for d in 0..self.dim {
                lo[d] = lo[d].min(x[d]);
                hi[d] = hi[d].max(x[d]);
            }
        }
        BoxRegion { lo, hi }
    }

    /// Image measure under `map`; images within `merge_radius` of an earlier
    /// image are merged into it (radius 0 merges exact coincidences only).
    pub fn push_forward(
        &self,
        mut map: impl FnMut(&[f64]) -> Vec<f64>,
        merge_radius: f64,
    ) -> Result<Self> {
        let mut coords = Vec::with_capacity(self.coords.len());
        let mut dim = None;
        for (x, _) in self.iter() {
            let y = map(x);
            match dim {
                None => dim = Some(y.len()),
                Some(d) if d != y.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: y.len(),
                    })
                }
                _ => {}
            }
            coords.extend(y);
        }
        let out = Self::build(dim.unwrap_or(self.dim), coords, self.weights.clone())?;
        Ok(out.merged(merge_radius))
    }

    /// Merges atoms lying within `radius` of each other (greedy, in index
    /// order). Radius 0 merges exact duplicates only.
    pub fn merged(&self, radius: f64) -> Self {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| lex_cmp(self.point(a), self.point(b)).then(a.cmp(&b)));
        let mut coords = Vec::with_capacity(self.coords.len());
        let mut weights: Vec<f64> = Vec::with_capacity(n);
        if radius <= 0.0 {
            for &i in &order {
                let p = self.point(i);
                if let Some(last) = weights.last_mut() {
                    let start = coords.len() - self.dim;
                    if coords[start..] == *p {
                        *last += self.weights[i];
                        continue;
                    }
                }
                coords.extend_from_slice(p);
                weights.push(self.weights[i]);
            }
        } else {
            let mut reps: Vec<usize> = Vec::new();
            for &i in &order {
                let p = self.point(i);
                let hit = reps
                    .iter()
                    .position(|&r| euclid(&coords[r * self.dim..(r + 1) * self.dim], p) <= radius);
                match hit {
                    Some(r) => weights[reps[r]] += self.weights[i],
                    None => {
                        reps.push(weights.len());
                        coords.extend_from_slice(p);
                        weights.push(self.weights[i]);
                    }
                }
            }
        }
        Self {
            dim: self.dim,
            coords,
            weights,
        }
    }

    /// Convex combination `(1 - beta) * self + beta * other` as a particle union.
    pub fn mix(&self, other: &ParticleMeasure, beta: f64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        let mut weights: Vec<f64> = self.weights.iter().map(|w| w * (1.0 - beta)).collect();
        weights.extend(other.weights.iter().map(|w| w * beta));
        Self::build(self.dim, coords, weights)
    }
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        return (a[0] - b[0]).abs();
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
