use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;

use super::lp::{minimize, LpOutcome};
use crate::measures::euclid;
use super::{MeanFieldModel, MeasureFeatures};

/// Relative tolerance under which two objective values count as tied.
pub(crate) const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianEval {
    pub value: f64,
    /// Indices of maximizing controls, ascending.
    pub argmax_controls: Vec<usize>,
}

pub(crate) fn is_tied(v: f64, best: f64) -> bool {
    v >= best - TIE_TOL * (1.0 + best.abs())
}

pub fn hamiltonian(
    model: &dyn MeanFieldModel,
    t: f64,
    x: &[f64],
    m: &ParticleMeasure,
    p: &[f64],
) -> Result<HamiltonianEval> {
    hamiltonian_with(model, t, x, &model.features(m), p)
}

/// `H(t,x,m,p) = max_u [<p, f(t,x,m,u)> - g(t,x,m,u)]`, exact over the
/// finite control set.
pub fn hamiltonian_with(
    model: &dyn MeanFieldModel,
    t: f64,
    x: &[f64],
    feats: &MeasureFeatures,
    p: &[f64],
) -> Result<HamiltonianEval> {
    let n = model.dim();
    if x.len() != n || p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if x.len() != n { x.len() } else { p.len() },
        });
    }
    let mut f = vec![0.0; n];
    let mut vals = Vec::with_capacity(model.controls().len());
    for (i, u) in model.controls().iter().enumerate() {
        model.velocity(t, x, feats, u, &mut f);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "velocity",
                control: i,
            });
        }
        let g = model.running_cost(t, x, feats, u);
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: "running cost",
                control: i,
            });
        }
        vals.push(p.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() - g);
    }
    let value = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let argmax_controls = vals
        .iter()
        .enumerate()
        .filter(|(_, v)| is_tied(**v, value))
        .map(|(i, _)| i)
        .collect();
    Ok(HamiltonianEval {
        value,
        argmax_controls,
    })
}

pub fn conjugate(
    model: &dyn MeanFieldModel,
    t: f64,
    x: &[f64],
    m: &ParticleMeasure,
    xi: &[f64],
) -> Result<f64> {
    conjugate_with(model, t, x, &model.features(m), xi)
}

/// Convex conjugate `H*(t,x,m,xi)`: the cheapest relaxed mixture of controls
/// realizing velocity `xi`, or `+inf` when `xi` is outside the velocity hull.
pub fn conjugate_with(
    model: &dyn MeanFieldModel,
    t: f64,
    x: &[f64],
    feats: &MeasureFeatures,
    xi: &[f64],
) -> Result<f64> {
    let n = model.dim();
    if xi.len() != n || x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: xi.len(),
        });
    }
    let k = model.controls().len();
    let mut a = vec![0.0; (n + 1) * k];
    let mut c = vec![0.0; k];
    let mut f = vec![0.0; n];
    for (j, u) in model.controls().iter().enumerate() {
        model.velocity(t, x, feats, u, &mut f);
        for d in 0..n {
            a[d * k + j] = f[d];
        }
        a[n * k + j] = 1.0;
        c[j] = model.running_cost(t, x, feats, u);
        if !c[j].is_finite() || f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "coefficient",
                control: j,
            });
        }
    }
    let mut b = xi.to_vec();
    b.push(1.0);
    match minimize(&c, &a, &b)? {
        LpOutcome::Optimal { value, .. } => Ok(value),
        LpOutcome::Infeasible => Ok(f64::INFINITY),
    }
}

/// Closest point of the velocity hull `co{f(t,x,m,u)}` to `xi` in the L1
/// sense, and its L1 distance.
pub fn project_to_velocity_hull(
    model: &dyn MeanFieldModel,
    t: f64,
    x: &[f64],
    feats: &MeasureFeatures,
    xi: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let n = model.dim();
    if xi.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: xi.len(),
        });
    }
    let k = model.controls().len();
    let vel: Vec<Vec<f64>> = model
        .controls()
        .iter()
        .map(|u| {
            let mut f = vec![0.0; n];
            model.velocity(t, x, feats, u, &mut f);
            f
        })
        .collect();
    // Variables: lambda (k), s_plus (n), s_minus (n).
    let cols = k + 2 * n;
    let mut a = vec![0.0; (n + 1) * cols];
    let mut c = vec![0.0; cols];
    for d in 0..n {
        for j in 0..k {
            a[d * cols + j] = vel[j][d];
        }
        a[d * cols + k + d] = 1.0;
        a[d * cols + k + n + d] = -1.0;
        c[k + d] = 1.0;
        c[k + n + d] = 1.0;
    }
    for j in 0..k {
        a[n * cols + j] = 1.0;
    }
    let mut b = xi.to_vec();
    b.push(1.0);
    match minimize(&c, &a, &b)? {
        LpOutcome::Optimal { x: lam, .. } => {
            let mut p = vec![0.0; n];
            for (j, v) in vel.iter().enumerate() {
                for d in 0..n {
                    p[d] += lam[j] * v[d];
                }
            }
            let dist = euclid(&p, xi);
            Ok((p, dist))
        }
        LpOutcome::Infeasible => Err(Error::LinearProgram("hull projection infeasible".into())),
    }
}
