use crate::error::{Error, Result};
use crate::measures::{euclid, norm, w1_distance, BoxRegion, ParticleMeasure, TimeGrid};

use super::{LipschitzLedger, MeanFieldModel, MeasureFeatures};

#[derive(Debug, Clone, Copy)]
pub struct BoundOptions {
    /// Half-width inflation of the reachable box, also applied to `K`.
    pub safety_factor: f64,
    pub samples_per_axis: usize,
    /// Growth factor of the box width beyond which expansion is declared divergent.
    pub blowup: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            safety_factor: 1.1,
            samples_per_axis: 9,
            blowup: 1e6,
        }
    }
}

/// Outer approximation `G` of the states reachable from `supp m0` and the
/// speed bound `K` over it.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantRegion {
    pub region: BoxRegion,
    /// Sampled `sup |f|` times the safety factor.
    pub speed_bound: f64,
    /// Sampled `sup |f|` before inflation.
    pub raw_speed: f64,
}

fn sample_measures(model: &dyn MeanFieldModel, region: &BoxRegion) -> Vec<MeasureFeatures> {
    let mut ms = vec![model.initial_measure().clone()];
    ms.push(ParticleMeasure::dirac(&region.center()));
    let corners = region.corners();
    for c in &corners {
        ms.push(ParticleMeasure::dirac(c));
    }
    if let Ok(u) = ParticleMeasure::uniform(&corners) {
        ms.push(u);
    }
    ms.iter().map(|m| model.features(m)).collect()
}

fn sample_times(grid: &TimeGrid) -> Vec<f64> {
    let stride = (grid.steps() / 16).max(1);
    let mut ts: Vec<f64> = (0..=grid.steps()).step_by(stride).map(|k| grid.node(k)).collect();
    if *ts.last().unwrap() != grid.horizon() {
        ts.push(grid.horizon());
    }
    ts
}

/// Expands the support box of `m0` face by face along outward velocities,
/// one grid step at a time, then inflates it and samples `K` over it.
pub fn bound_box_and_k(
    model: &dyn MeanFieldModel,
    grid: &TimeGrid,
    opts: &BoundOptions,
) -> Result<InvariantRegion> {
    super::validate_model(model)?;
    let n = model.dim();
    let mut region = model.initial_measure().support_box();
    let start_width = region.widths().iter().fold(0.0f64, |a, w| a.max(*w));
    let limit = opts.blowup * (start_width + 1.0);
    let dt = grid.dt();
    let mut f = vec![0.0; n];

    for k in 0..grid.steps() {
        let feats = sample_measures(model, &region);
        let lattice = region.lattice(opts.samples_per_axis);
        let times = [grid.node(k), grid.node(k + 1)];
        let mut grow_lo = vec![0.0f64; n];
        let mut grow_hi = vec![0.0f64; n];
        for d in 0..n {
            let mut best_lo = 0.0f64;
            let mut best_hi = 0.0f64;
            for p in &lattice {
                let mut x = p.clone();
                for (side, target) in [(0, region.lo[d]), (1, region.hi[d])] {
                    x[d] = target;
                    for &t in &times {
                        for m in &feats {
                            for u in model.controls().iter() {
                                model.velocity(t, &x, m, u, &mut f);
                                if f.iter().any(|v| !v.is_finite()) {
                                    return Err(Error::InvariantBoxNotFound(
                                        "non-finite velocity during expansion".into(),
                                    ));
                                }
                                if side == 0 {
                                    best_lo = best_lo.max(-f[d]);
                                } else {
                                    best_hi = best_hi.max(f[d]);
                                }
                            }
                        }
                    }
                }
            }
            grow_lo[d] = best_lo;
            grow_hi[d] = best_hi;
        }
        for d in 0..n {
            region.lo[d] -= dt * grow_lo[d];
            region.hi[d] += dt * grow_hi[d];
        }
        let w = region.widths().iter().fold(0.0f64, |a, w| a.max(*w));
        if !w.is_finite() || w > limit {
            return Err(Error::InvariantBoxNotFound(format!(
                "box width {w} exceeded {limit} after {} steps (superlinear growth?)",
                k + 1
            )));
        }
    }

    let region = region.inflated(opts.safety_factor);
    let raw_speed = sampled_speed(model, grid, &region, opts.samples_per_axis)?;
    Ok(InvariantRegion {
        region,
        speed_bound: raw_speed * opts.safety_factor,
        raw_speed,
    })
}

fn sampled_speed(
    model: &dyn MeanFieldModel,
    grid: &TimeGrid,
    region: &BoxRegion,
    per_axis: usize,
) -> Result<f64> {
    let feats = sample_measures(model, region);
    let lattice = region.lattice(per_axis);
    let mut f = vec![0.0; model.dim()];
    let mut k = 0.0f64;
    for t in sample_times(grid) {
        for m in &feats {
            for x in &lattice {
                for u in model.controls().iter() {
                    model.velocity(t, x, m, u, &mut f);
                    let s = norm(&f);
                    if !s.is_finite() {
                        return Err(Error::InvariantBoxNotFound("non-finite speed".into()));
                    }
                    k = k.max(s);
                }
            }
        }
    }
    Ok(k)
}

/// Finite-difference Lipschitz ratios of `f`, `g`, `sigma` sampled over
/// `region`, without inflation.
pub fn sampled_ledger(
    model: &dyn MeanFieldModel,
    grid: &TimeGrid,
    region: &BoxRegion,
    per_axis: usize,
) -> Result<LipschitzLedger> {
    let n = model.dim();
    let lattice = region.lattice(per_axis.min(7));
    let mut measures = vec![model.initial_measure().clone()];
    measures.push(ParticleMeasure::dirac(&region.center()));
    for c in region.corners() {
        measures.push(ParticleMeasure::dirac(&c));
    }
    if let Ok(u) = ParticleMeasure::uniform(&lattice) {
        measures.push(u);
    }
    let feats: Vec<MeasureFeatures> = measures.iter().map(|m| model.features(m)).collect();
    let mut mdist = vec![0.0; measures.len() * measures.len()];
    for i in 0..measures.len() {
        for j in 0..i {
            let d = w1_distance(&measures[i], &measures[j])?;
            mdist[i * measures.len() + j] = d;
            mdist[j * measures.len() + i] = d;
        }
    }
    let times: Vec<f64> = sample_times(grid).into_iter().step_by(4).collect();
    let mut l = LipschitzLedger::zero();
    let (mut f1, mut f2) = (vec![0.0; n], vec![0.0; n]);

    for &t in &times {
        for u in model.controls().iter() {
            for (mi, m) in feats.iter().enumerate() {
                for (a, xa) in lattice.iter().enumerate() {
                    model.velocity(t, xa, m, u, &mut f1);
                    let ga = model.running_cost(t, xa, m, u);
                    for xb in lattice.iter().take(a) {
                        let dx = euclid(xa, xb);
                        if dx <= 0.0 {
                            continue;
                        }
                        model.velocity(t, xb, m, u, &mut f2);
                        l.l_fx = l.l_fx.max(euclid(&f1, &f2) / dx);
                        let gb = model.running_cost(t, xb, m, u);
                        l.l_gx = l.l_gx.max((ga - gb).abs() / dx);
                    }
                    for (mj, m2) in feats.iter().enumerate().take(mi) {
                        let dm = mdist[mi * feats.len() + mj];
                        if dm <= 1e-14 {
                            continue;
                        }
                        model.velocity(t, xa, m2, u, &mut f2);
                        l.l_fm = l.l_fm.max(euclid(&f1, &f2) / dm);
                        let gb = model.running_cost(t, xa, m2, u);
                        l.l_gm = l.l_gm.max((ga - gb).abs() / dm);
                    }
                }
            }
        }
    }
    for (mi, m) in feats.iter().enumerate() {
        for (a, xa) in lattice.iter().enumerate() {
            let sa = model.terminal_payoff(xa, m);
            for xb in lattice.iter().take(a) {
                let dx = euclid(xa, xb);
                if dx > 0.0 {
                    l.l_sx = l.l_sx.max((sa - model.terminal_payoff(xb, m)).abs() / dx);
                }
            }
            for (mj, m2) in feats.iter().enumerate().take(mi) {
                let dm = mdist[mi * feats.len() + mj];
                if dm > 1e-14 {
                    l.l_sm = l.l_sm.max((sa - model.terminal_payoff(xa, m2)).abs() / dm);
                }
            }
        }
    }
    Ok(l)
}

/// Sampled ledger inflated by 5%.
pub fn estimate_ledger(
    model: &dyn MeanFieldModel,
    grid: &TimeGrid,
    region: &BoxRegion,
) -> Result<LipschitzLedger> {
    Ok(sampled_ledger(model, grid, region, 7)?.scaled(1.05))
}

/// Entries of `declared` exceeded by sampled finite-difference ratios by more
/// than 1%.
pub fn ledger_warnings(
    model: &dyn MeanFieldModel,
    grid: &TimeGrid,
    region: &BoxRegion,
    declared: &LipschitzLedger,
) -> Result<Vec<String>> {
    let sampled = sampled_ledger(model, grid, region, 7)?;
    let d = declared.to_map();
    Ok(sampled
        .to_map()
        .into_iter()
        .filter(|(k, v)| *v > d[k] * 1.01 + 1e-12)
        .map(|(k, v)| format!("{k}: sampled ratio {v:.6} exceeds declared {:.6}", d[&k]))
        .collect())
}
