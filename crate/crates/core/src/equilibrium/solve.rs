use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{FlowContext, RelaxedControl};
use crate::error::{Error, Result};
use crate::measures::{flow_distance, BoxRegion, MeasureFlow, TimeGrid, DEFAULT_SUPPORT_CAP};
use crate::model::{validate_model, MeanFieldModel};
use crate::value::{best_response_in, solve_value_in, tied_controls, StateGrid, ValueField};

use super::bundle::{BundleEntry, TrajectoryBundle};
use super::ensemble::PathEnsemble;

/// Relaxation weights `beta_k` of the update `mu <- (1 - beta) mu + beta A(mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Schedule {
    /// `beta_k = 1 / (k + 1)`: the iterate after `k` updates is the plain
    /// average of the first `k` images of `A`.
    FictitiousPlay,
    /// `beta_k = 1`.
    Picard,
    /// Fixed `beta` in `(0, 1]`.
    Constant { beta: f64 },
}

impl Schedule {
    pub fn beta(&self, k: usize) -> f64 {
        match self {
            Schedule::FictitiousPlay => 1.0 / (k as f64 + 1.0),
            Schedule::Picard => 1.0,
            Schedule::Constant { beta } => *beta,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Schedule::Constant { beta } = self {
            if !(*beta > 0.0 && *beta <= 1.0) {
                return Err(Error::config("solver.beta", format!("{beta} is not in (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub schedule: Schedule,
    pub tol_w: f64,
    pub max_iter: usize,
    /// Largest number of paths kept per snapshot.
    pub particle_cap: usize,
    /// Split each initial atom evenly across all optimal first controls.
    pub split_ties: bool,
    /// Box every trajectory must stay in (normally the invariant box).
    pub guard: Option<BoxRegion>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            schedule: Schedule::FictitiousPlay,
            tol_w: 1e-3,
            max_iter: 50,
            particle_cap: 5000,
            split_ties: false,
            guard: None,
        }
    }
}

/// One application of the best-response push-forward.
#[derive(Debug, Clone)]
pub struct AStep {
    pub nu: MeasureFlow,
    pub bundle: TrajectoryBundle,
    pub vfield: ValueField,
    /// Initial atom of each bundle entry.
    pub origins: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub flow: MeasureFlow,
    pub vfield: ValueField,
    /// Best responses against `flow`; its push-forward is `A(flow)`.
    pub bundle: TrajectoryBundle,
    /// `W(A(flow), flow)`, sup over nodes.
    pub residual: f64,
    /// Number of updates applied to the initial frozen flow.
    pub iterations: usize,
    pub converged: bool,
    /// Residual of every iterate, the last one included.
    pub history: Vec<f64>,
    /// Accumulated W1 bound on the snapshot changes caused by consolidation.
    pub consolidation_w1: f64,
    /// Number of distinct paths carrying the returned flow.
    pub paths: usize,
}

/// Pushes `(weight, x0, control)` triples forward against the flow in `ctx`.
pub fn push_forward_controls(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    entries: &[(f64, Vec<f64>, RelaxedControl)],
) -> Result<TrajectoryBundle> {
    let out = entries
        .par_iter()
        .map(|(w, x0, control)| {
            Ok(BundleEntry {
                weight: *w,
                x0: x0.clone(),
                control: control.clone(),
                trajectory: ctx.integrate(model, 0, x0, control)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TrajectoryBundle::new(out)
}

/// `A(mu)`: value function against `mu`, one best response per initial atom
/// (or one per optimal first control with `split_ties`), pushed forward.
pub fn apply_a(model: &dyn MeanFieldModel, mu: &MeasureFlow, sgrid: &StateGrid) -> Result<AStep> {
    let ctx = FlowContext::new(model, mu)?;
    apply_a_in(model, &ctx, sgrid, false)
}

pub fn apply_a_in(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    sgrid: &StateGrid,
    split_ties: bool,
) -> Result<AStep> {
    validate_model(model)?;
    let vfield = solve_value_in(model, ctx, sgrid)?;
    let m0 = model.initial_measure();
    let per_atom = (0..m0.len())
        .into_par_iter()
        .map(|i| {
            let x = m0.point(i);
            let w = m0.weight(i);
            if split_ties {
                let ties = tied_controls(model, ctx, &vfield, 0, x);
                let share = w / ties.len() as f64;
                ties.into_iter()
                    .map(|j| {
                        let a = best_response_in(model, ctx, &vfield, x, Some(j))?;
                        Ok((i, (share, x.to_vec(), a)))
                    })
                    .collect::<Result<Vec<_>>>()
            } else {
                let a = best_response_in(model, ctx, &vfield, x, None)?;
                Ok(vec![(i, (w, x.to_vec(), a))])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (origins, entries): (Vec<usize>, Vec<_>) = per_atom.into_iter().flatten().unzip();
    let bundle = push_forward_controls(model, ctx, &entries)?;
    let mut snaps = bundle.flow()?.into_snapshots();
    snaps[0] = m0.clone();
    let nu = MeasureFlow::new(*ctx.grid(), snaps)?;
    Ok(AStep {
        nu,
        bundle,
        vfield,
        origins,
    })
}

/// Damped fixed-point iteration on `A`, started from the frozen initial
/// measure. Stops at the first iterate with residual at most `tol_w`, or
/// after `max_iter` updates; the returned iterate is the last one examined
/// and is flagged accordingly.
pub fn fixed_point_solve(
    model: &dyn MeanFieldModel,
    time: TimeGrid,
    sgrid: &StateGrid,
    opts: &SolverOptions,
) -> Result<EquilibriumResult> {
    validate_model(model)?;
    opts.schedule.validate()?;
    if !(opts.tol_w > 0.0 && opts.tol_w.is_finite()) {
        return Err(Error::config("solver.tol_w", "must be positive"));
    }
    let m0 = model.initial_measure();
    if opts.particle_cap < m0.len() {
        return Err(Error::config(
            "solver.particle_cap",
            format!("{} is below the {} initial atoms", opts.particle_cap, m0.len()),
        ));
    }
    let cap = if model.dim() >= 2 {
        let transport = (DEFAULT_SUPPORT_CAP as f64).sqrt() as usize;
        opts.particle_cap.min(transport.max(m0.len()))
    } else {
        opts.particle_cap
    };

    let mut ensemble = PathEnsemble::frozen(time, m0);
    let mut history = Vec::new();
    let mut consolidation = 0.0;
    for it in 0..=opts.max_iter {
        let mu = ensemble.flow()?;
        let mut ctx = FlowContext::new(model, &mu)?;
        if let Some(g) = &opts.guard {
            ctx = ctx.with_guard(g.clone());
        }
        let step = apply_a_in(model, &ctx, sgrid, opts.split_ties)?;
        let residual = flow_distance(&step.nu, &mu)?;
        history.push(residual);
        let converged = residual <= opts.tol_w;
        if converged || it == opts.max_iter {
            return Ok(EquilibriumResult {
                flow: mu,
                vfield: step.vfield,
                bundle: step.bundle,
                residual,
                iterations: it,
                converged,
                history,
                consolidation_w1: consolidation,
                paths: ensemble.len(),
            });
        }
        let next = PathEnsemble::from_bundle(m0, &step.bundle, &step.origins);
        ensemble.mix(next, opts.schedule.beta(it));
        consolidation += ensemble.consolidate(cap);
    }
    unreachable!("the loop returns at it == max_iter")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{flow_lipschitz_defect, w1_distance, ParticleMeasure};
    use crate::model::{build_template, ClosureModel, ControlSet, MeasureFeatures, TemplateParams};

    fn line_box() -> StateGrid {
        StateGrid::uniform(BoxRegion::new(vec![-3.0], vec![3.0]).unwrap(), 121).unwrap()
    }

    #[test]
    fn unit_drift_moves_all_mass() {
        let m = ClosureModel::new(1.0, ControlSet::scalar(&[-1.0, 0.0, 1.0]).unwrap(), ParticleMeasure::dirac(&[0.0]))
            .with_velocity(|_, _, _, u, out| out[0] = u[0])
            .with_terminal(|x, _| x[0]);
        let g = TimeGrid::new(1.0, 16).unwrap();
        let mu = MeasureFlow::constant(g, &ParticleMeasure::dirac(&[0.0]));
        let s = apply_a(&m, &mu, &line_box()).unwrap();
        for (k, t) in g.nodes().enumerate() {
            assert_eq!(s.nu.snapshot(k), &ParticleMeasure::dirac(&[t]));
        }
        assert_eq!(s.bundle.len(), 1);
    }

    #[test]
    fn frozen_particles_stay_put() {
        let m0 = ParticleMeasure::uniform_1d(&[-0.5, 0.0, 0.7]).unwrap();
        let m = ClosureModel::new(1.0, ControlSet::scalar(&[0.0]).unwrap(), m0.clone())
            .with_features(|m| MeasureFeatures(m.mean()))
            .with_running_cost(|_, x, f, _| (x[0] - f.get(0)).powi(2))
            .with_terminal(|x, _| -x[0] * x[0]);
        let g = TimeGrid::new(1.0, 10).unwrap();
        let r = fixed_point_solve(&m, g, &line_box(), &SolverOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.iterations, 0);
        for k in 0..=10 {
            assert_eq!(r.flow.snapshot(k), &m0);
        }
    }

    fn uncoupled() -> std::sync::Arc<dyn MeanFieldModel> {
        let mut p = TemplateParams::new();
        p.insert("atoms".into(), 20.0);
        p.insert("controls".into(), 11.0);
        build_template("uncoupled", &p, None).unwrap()
    }

    #[test]
    fn uncoupled_operator_ignores_its_argument() {
        let m = uncoupled();
        let g = TimeGrid::new(1.0, 20).unwrap();
        let a = MeasureFlow::constant(g, m.initial_measure());
        let b = MeasureFlow::constant(g, &ParticleMeasure::dirac(&[0.9]));
        let na = apply_a(m.as_ref(), &a, &line_box()).unwrap().nu;
        let nb = apply_a(m.as_ref(), &b, &line_box()).unwrap().nu;
        assert_eq!(flow_distance(&na, &nb).unwrap(), 0.0);
    }

    #[test]
    fn uncoupled_converges_after_one_update() {
        let m = uncoupled();
        let g = TimeGrid::new(1.0, 20).unwrap();
        let r = fixed_point_solve(m.as_ref(), g, &line_box(), &SolverOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.residual <= 1e-12);
        assert_eq!(r.flow.snapshot(0), m.initial_measure());
        assert!(flow_lipschitz_defect(&r.flow, 1.0 + 1e-12).unwrap() <= 1e-9);
        let bundle_flow = r.bundle.flow().unwrap();
        for k in 0..=20 {
            assert!(w1_distance(bundle_flow.snapshot(k), r.flow.snapshot(k)).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn nonconvergence_is_reported() {
        let mut p = TemplateParams::new();
        p.insert("atoms".into(), 10.0);
        p.insert("c".into(), 0.1);
        let m = build_template("lq1d", &p, None).unwrap();
        let g = TimeGrid::new(1.0, 16).unwrap();
        let opts = SolverOptions {
            tol_w: 1e-14,
            max_iter: 2,
            ..SolverOptions::default()
        };
        let r = fixed_point_solve(m.as_ref(), g, &line_box(), &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
        assert_eq!(r.history.len(), 3);
        assert!(r.residual > 0.0);
    }

    #[test]
    fn split_ties_spreads_mass() {
        let m = ClosureModel::new(1.0, ControlSet::scalar(&[-1.0, 1.0]).unwrap(), ParticleMeasure::dirac(&[0.0]))
            .with_velocity(|_, _, _, u, out| out[0] = u[0])
            .with_terminal(|x, _| x[0].abs());
        let g = TimeGrid::new(1.0, 16).unwrap();
        let mu = MeasureFlow::constant(g, m.initial_measure());
        let ctx = FlowContext::new(&m, &mu).unwrap();
        let s = apply_a_in(&m, &ctx, &line_box(), true).unwrap();
        assert_eq!(s.bundle.len(), 2);
        assert_eq!(s.origins, vec![0, 0]);
        let last = s.nu.snapshot(16);
        assert_eq!(last, &ParticleMeasure::uniform_1d(&[-1.0, 1.0]).unwrap());
    }

    #[test]
    fn bad_options_are_rejected() {
        let m = uncoupled();
        let g = TimeGrid::new(1.0, 4).unwrap();
        let bad = |o: SolverOptions| fixed_point_solve(m.as_ref(), g, &line_box(), &o).is_err();
        assert!(bad(SolverOptions { tol_w: 0.0, ..Default::default() }));
        assert!(bad(SolverOptions { particle_cap: 3, ..Default::default() }));
        assert!(bad(SolverOptions {
            schedule: Schedule::Constant { beta: 1.5 },
            ..Default::default()
        }));
    }

    #[test]
    fn schedules() {
        assert_eq!(Schedule::FictitiousPlay.beta(0), 1.0);
        assert_eq!(Schedule::FictitiousPlay.beta(3), 0.25);
        assert_eq!(Schedule::Picard.beta(7), 1.0);
        assert_eq!(Schedule::Constant { beta: 0.3 }.beta(0), 0.3);
    }
}
