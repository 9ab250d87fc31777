use crate::error::{Error, Result};

use super::particle::{euclid, ParticleMeasure};
use super::transport::{optimal_plan_with, TransportOptions, TransportPlan};

/// Splitting of an initial measure into `N` equal-mass pieces matched to
/// empirical sites by an optimal plan.
#[derive(Debug, Clone)]
pub struct EmpiricalDecomposition {
    /// `parts[i]` is `N` times the mass routed to site `i`, a probability measure.
    pub parts: Vec<ParticleMeasure>,
    /// `W(m0, delta_x^N)`.
    pub distance: f64,
    /// Optimal plan from the atoms of `m0` to the sites (targets are site indices).
    pub plan: TransportPlan,
    /// For each part atom, the index of the `m0` atom it came from.
    pub part_sources: Vec<Vec<usize>>,
}

pub fn decompose_to_empirical(
    m0: &ParticleMeasure,
    sites: &[Vec<f64>],
) -> Result<EmpiricalDecomposition> {
    decompose_to_empirical_with(m0, sites, &TransportOptions::default())
}

pub fn decompose_to_empirical_with(
    m0: &ParticleMeasure,
    sites: &[Vec<f64>],
    opts: &TransportOptions,
) -> Result<EmpiricalDecomposition> {
    if sites.is_empty() {
        return Err(Error::InvalidMeasure("no sites given".into()));
    }
    let n = sites.len();
    let empirical = ParticleMeasure::uniform(sites)?;
    if empirical.len() != n {
        return Err(Error::Inconsistent("empirical measure lost sites".into()));
    }
    let plan = optimal_plan_with(m0, &empirical, opts)?;

    let mut buckets: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in &plan.entries {
        buckets[e.target].push((e.source, e.mass));
    }
    let mut parts = Vec::with_capacity(n);
    let mut part_sources = Vec::with_capacity(n);
    for (i, bucket) in buckets.into_iter().enumerate() {
        if bucket.is_empty() {
            return Err(Error::Transport(format!("site {i} received no mass")));
        }
        let mut coords = Vec::with_capacity(bucket.len() * m0.dim());
        let mut weights = Vec::with_capacity(bucket.len());
        let mut sources = Vec::with_capacity(bucket.len());
        for (src, mass) in bucket {
            coords.extend_from_slice(m0.point(src));
            weights.push(mass * n as f64);
            sources.push(src);
        }
        parts.push(ParticleMeasure::normalized(m0.dim(), coords, weights)?);
        part_sources.push(sources);
    }
    Ok(EmpiricalDecomposition {
        parts,
        distance: plan.cost,
        plan,
        part_sources,
    })
}

impl EmpiricalDecomposition {
    /// `sum_i (1/N) part_i`, which reproduces `m0`.
    pub fn reconstruct(&self) -> Result<ParticleMeasure> {
        let n = self.parts.len() as f64;
        let dim = self.parts[0].dim();
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for p in &self.parts {
            for (x, w) in p.iter() {
                coords.extend_from_slice(x);
                weights.push(w / n);
            }
        }
        ParticleMeasure::normalized(dim, coords, weights).map(|m| m.merged(0.0))
    }

    /// `sum_i (1/N) int |x - x_i| part_i(dx)`; equals `distance` for an optimal plan.
    pub fn transport_cost(&self, sites: &[Vec<f64>]) -> f64 {
        let n = self.parts.len() as f64;
        self.parts
            .iter()
            .zip(sites)
            .map(|(p, s)| p.integrate(|x| euclid(x, s)) / n)
            .sum()
    }

    /// `max_i int |x - x_i| part_i(dx)`.
    pub fn max_part_spread(&self, sites: &[Vec<f64>]) -> f64 {
        self.parts
            .iter()
            .zip(sites)
            .map(|(p, s)| p.integrate(|x| euclid(x, s)))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_equal_to_m0() {
        let m0 = ParticleMeasure::uniform_1d(&[-1.0, 2.0]).unwrap();
        let d = decompose_to_empirical(&m0, &[vec![-1.0], vec![2.0]]).unwrap();
        assert_eq!(d.distance, 0.0);
        assert_eq!(d.parts[0], ParticleMeasure::dirac(&[-1.0]));
        assert_eq!(d.parts[1], ParticleMeasure::dirac(&[2.0]));
    }

    #[test]
    fn four_atoms_two_sites() {
        let m0 = ParticleMeasure::uniform_1d(&[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]).unwrap();
        let sites = [vec![1.0 / 6.0], vec![5.0 / 6.0]];
        let d = decompose_to_empirical(&m0, &sites).unwrap();
        assert!((d.distance - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(d.parts[0], ParticleMeasure::uniform_1d(&[0.0, 1.0 / 3.0]).unwrap());
        assert_eq!(d.parts[1], ParticleMeasure::uniform_1d(&[2.0 / 3.0, 1.0]).unwrap());
        assert!((d.transport_cost(&sites) - d.distance).abs() < 1e-15);
    }

    #[test]
    fn single_site() {
        let m0 = ParticleMeasure::dirac(&[0.25]);
        let d = decompose_to_empirical(&m0, &[vec![0.25]]).unwrap();
        assert_eq!(d.distance, 0.0);
        assert_eq!(d.parts[0], m0);
    }

    #[test]
    fn no_sites_is_an_error() {
        let m0 = ParticleMeasure::dirac(&[0.25]);
        assert!(decompose_to_empirical(&m0, &[]).is_err());
    }
}
