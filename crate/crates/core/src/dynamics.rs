//! Relaxed-control trajectories against a frozen measure flow.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{w1_distance, BoxRegion, MeasureFlow, ParticleMeasure, TimeGrid, MASS_TOL};
use crate::model::{ControlSet, MeanFieldModel, MeasureFeatures};

/// Per-cell probability vectors over a finite control set.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedControl {
    grid: TimeGrid,
    n_controls: usize,
    weights: Vec<f64>,
}

impl RelaxedControl {
    pub fn new(grid: TimeGrid, cells: Vec<Vec<f64>>) -> Result<Self> {
        if cells.len() != grid.steps() {
            return Err(Error::InvalidControl(format!(
                "{} cells for a grid of {} steps",
                cells.len(),
                grid.steps()
            )));
        }
        let n_controls = cells[0].len();
        if n_controls == 0 {
            return Err(Error::InvalidControl("empty control distribution".into()));
        }
        let mut weights = Vec::with_capacity(n_controls * cells.len());
        for (k, c) in cells.into_iter().enumerate() {
            if c.len() != n_controls {
                return Err(Error::InvalidControl(format!("cell {k} has wrong length")));
            }
            if c.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::InvalidControl(format!("cell {k} has a bad weight")));
            }
            let s: f64 = c.iter().sum();
            if (s - 1.0).abs() > MASS_TOL {
                return Err(Error::InvalidControl(format!("cell {k} sums to {s}")));
            }
            weights.extend(c);
        }
        Ok(Self {
            grid,
            n_controls,
            weights,
        })
    }

    /// Dirac on control `indices[k]` in cell `k`.
    pub fn from_indices(grid: TimeGrid, n_controls: usize, indices: &[usize]) -> Result<Self> {
        if indices.len() != grid.steps() {
            return Err(Error::InvalidControl(format!(
                "{} cells for a grid of {} steps",
                indices.len(),
                grid.steps()
            )));
        }
        if let Some(i) = indices.iter().find(|&&i| i >= n_controls) {
            return Err(Error::InvalidControl(format!("control index {i} out of range")));
        }
        let mut weights = vec![0.0; n_controls * indices.len()];
        for (k, &i) in indices.iter().enumerate() {
            weights[k * n_controls + i] = 1.0;
        }
        Ok(Self {
            grid,
            n_controls,
            weights,
        })
    }

    pub fn constant(grid: TimeGrid, n_controls: usize, index: usize) -> Result<Self> {
        let idx = vec![index; grid.steps()];
        Self::from_indices(grid, n_controls, &idx)
    }

    pub fn constant_mixture(grid: TimeGrid, cell: &[f64]) -> Result<Self> {
        let cells = vec![cell.to_vec(); grid.steps()];
        Self::new(grid, cells)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        &self.weights[k * self.n_controls..(k + 1) * self.n_controls]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.weights.chunks(self.n_controls)
    }

    /// Control index per cell when every cell is a Dirac.
    pub fn pure_indices(&self) -> Option<Vec<usize>> {
        self.cells()
            .map(|c| {
                let i = c.iter().position(|w| *w == 1.0)?;
                Some(i)
            })
            .collect()
    }
}

/// Sampled trajectory: states and accumulated `w = -int g` per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    dim: usize,
    states: Vec<f64>,
    cost: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, dim: usize, states: Vec<f64>, cost: Vec<f64>) -> Result<Self> {
        let nodes = grid.node_count();
        if dim == 0 || states.len() != nodes * dim || cost.len() != nodes {
            return Err(Error::GridMismatch("trajectory arrays do not match the grid".into()));
        }
        if cost[0] != 0.0 {
            return Err(Error::InvalidControl("trajectory cost must start at 0".into()));
        }
        Ok(Self {
            grid,
            dim,
            states,
            cost,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn cost(&self, k: usize) -> f64 {
        self.cost[k]
    }

    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.grid.steps())
    }

    /// Discrete velocity `(x_{k+1} - x_k) / dt` over cell `k`.
    pub fn velocity(&self, k: usize) -> Vec<f64> {
        let dt = self.grid.dt();
        let (a, b) = (self.state(k), self.state(k + 1));
        a.iter().zip(b).map(|(a, b)| (b - a) / dt).collect()
    }

    /// Largest per-cell displacement divided by `dt`.
    pub fn max_speed(&self) -> f64 {
        (0..self.grid.steps())
            .map(|k| crate::measures::norm(&self.velocity(k)))
            .fold(0.0, f64::max)
    }
}

/// A measure flow with model features precomputed per snapshot, plus an
/// optional guard box every trajectory must stay in.
#[derive(Debug, Clone)]
pub struct FlowContext {
    grid: TimeGrid,
    features: Vec<MeasureFeatures>,
    guard: Option<BoxRegion>,
}

const GUARD_TOL: f64 = 1e-9;

struct StepWork {
    scratch: Vec<f64>,
    tmp: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
}

impl StepWork {
    fn new(n: usize) -> Self {
        Self {
            scratch: vec![0.0; n],
            tmp: vec![0.0; n],
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
        }
    }
}

impl FlowContext {
    pub fn new(model: &dyn MeanFieldModel, flow: &MeasureFlow) -> Result<Self> {
        if flow.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: flow.dim(),
            });
        }
        let features = flow.snapshots().par_iter().map(|m| model.features(m)).collect();
        Ok(Self {
            grid: *flow.grid(),
            features,
            guard: None,
        })
    }

    pub fn with_guard(mut self, guard: BoxRegion) -> Self {
        self.guard = Some(guard);
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn features(&self, k: usize) -> &MeasureFeatures {
        &self.features[k]
    }

    pub fn guard(&self) -> Option<&BoxRegion> {
        self.guard.as_ref()
    }

    /// Relaxed field and running-cost rate on cell `k`.
    fn field(
        &self,
        model: &dyn MeanFieldModel,
        k: usize,
        t: f64,
        x: &[f64],
        cell: &[f64],
        scratch: &mut [f64],
        out: &mut [f64],
    ) -> f64 {
        let feats = &self.features[k];
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut rate = 0.0;
        for (i, &w) in cell.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let u = model.controls().get(i);
            model.velocity(t, x, feats, u, scratch);
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o += w * s;
            }
            rate -= w * model.running_cost(t, x, feats, u);
        }
        rate
    }

    fn check_guard(&self, k: usize, x: &[f64]) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantBoxViolated {
                node: k,
                state: x.to_vec(),
                lo: vec![],
                hi: vec![],
            });
        }
        if let Some(g) = &self.guard {
            if !g.contains(x, GUARD_TOL) {
                return Err(Error::InvariantBoxViolated {
                    node: k,
                    state: x.to_vec(),
                    lo: g.lo.clone(),
                    hi: g.hi.clone(),
                });
            }
        }
        Ok(())
    }

    /// One RK4 step over cell `k` under the control distribution `cell`;
    /// advances `x` in place and returns the increment of `w`.
    pub fn step(&self, model: &dyn MeanFieldModel, k: usize, x: &mut [f64], cell: &[f64]) -> f64 {
        let mut work = StepWork::new(x.len());
        self.step_with(model, k, x, cell, &mut work)
    }

    fn step_with(
        &self,
        model: &dyn MeanFieldModel,
        k: usize,
        x: &mut [f64],
        cell: &[f64],
        w: &mut StepWork,
    ) -> f64 {
        let n = x.len();
        let dt = self.grid.dt();
        let t = self.grid.node(k);
        let z1 = self.field(model, k, t, x, cell, &mut w.scratch, &mut w.k1);
        for d in 0..n {
            w.tmp[d] = x[d] + 0.5 * dt * w.k1[d];
        }
        let z2 = self.field(model, k, t + 0.5 * dt, &w.tmp, cell, &mut w.scratch, &mut w.k2);
        for d in 0..n {
            w.tmp[d] = x[d] + 0.5 * dt * w.k2[d];
        }
        let z3 = self.field(model, k, t + 0.5 * dt, &w.tmp, cell, &mut w.scratch, &mut w.k3);
        for d in 0..n {
            w.tmp[d] = x[d] + dt * w.k3[d];
        }
        let z4 = self.field(model, k, t + dt, &w.tmp, cell, &mut w.scratch, &mut w.k4);
        for d in 0..n {
            x[d] += dt / 6.0 * (w.k1[d] + 2.0 * w.k2[d] + 2.0 * w.k3[d] + w.k4[d]);
        }
        dt / 6.0 * (z1 + 2.0 * z2 + 2.0 * z3 + z4)
    }

    /// RK4 on the augmented state `(x, z)` with `z' = -sum_u w_u g`, one
    /// step per grid cell, measure held at the cell's left node.
    pub fn integrate(
        &self,
        model: &dyn MeanFieldModel,
        start_node: usize,
        x0: &[f64],
        alpha: &RelaxedControl,
    ) -> Result<Trajectory> {
        let n = model.dim();
        if x0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x0.len(),
            });
        }
        self.grid.ensure_same(alpha.grid())?;
        if alpha.n_controls() != model.controls().len() {
            return Err(Error::InvalidControl(format!(
                "control has {} entries, model has {} controls",
                alpha.n_controls(),
                model.controls().len()
            )));
        }
        let steps = self.grid.steps();
        if start_node > steps {
            return Err(Error::GridMismatch(format!("start node {start_node} beyond grid")));
        }
        let nodes = self.grid.node_count();
        let mut states = Vec::with_capacity(nodes * n);
        let mut cost = vec![0.0; nodes];
        for _ in 0..=start_node {
            states.extend_from_slice(x0);
        }
        self.check_guard(start_node, x0)?;

        let mut x = x0.to_vec();
        let mut z = 0.0;
        let mut work = StepWork::new(n);
        for k in start_node..steps {
            z += self.step_with(model, k, &mut x, alpha.cell(k), &mut work);
            self.check_guard(k + 1, &x)?;
            states.extend_from_slice(&x);
            cost[k + 1] = z;
        }
        Trajectory::new(self.grid, n, states, cost)
    }

    /// `sigma(x(T), mu[T]) + w(T)` of an integrated trajectory.
    pub fn payoff_of(&self, model: &dyn MeanFieldModel, traj: &Trajectory) -> f64 {
        let last = self.grid.steps();
        model.terminal_payoff(traj.final_state(), &self.features[last]) + traj.cost(last)
    }

    pub fn payoff(
        &self,
        model: &dyn MeanFieldModel,
        start_node: usize,
        x0: &[f64],
        alpha: &RelaxedControl,
    ) -> Result<f64> {
        let traj = self.integrate(model, start_node, x0, alpha)?;
        Ok(self.payoff_of(model, &traj))
    }
}

/// Integrates `alpha` from `x0` at node `start_node` against the frozen flow.
pub fn integrate(
    model: &dyn MeanFieldModel,
    mu: &MeasureFlow,
    start_node: usize,
    x0: &[f64],
    alpha: &RelaxedControl,
) -> Result<Trajectory> {
    FlowContext::new(model, mu)?.integrate(model, start_node, x0, alpha)
}

/// Terminal payoff plus accumulated running reward along the trajectory.
pub fn payoff(
    model: &dyn MeanFieldModel,
    mu: &MeasureFlow,
    start_node: usize,
    x0: &[f64],
    alpha: &RelaxedControl,
) -> Result<f64> {
    FlowContext::new(model, mu)?.payoff(model, start_node, x0, alpha)
}

/// `sum_k dt * W1_P(a_k, b_k)`, with `W1_P` the transport distance on the
/// control set under the Euclidean ground cost.
pub fn control_distance(
    controls: &ControlSet,
    a: &RelaxedControl,
    b: &RelaxedControl,
) -> Result<f64> {
    a.grid().ensure_same(b.grid())?;
    if a.n_controls() != b.n_controls() || a.n_controls() != controls.len() {
        return Err(Error::InvalidControl("control sets differ".into()));
    }
    let dim = controls.dim();
    let coords: Vec<f64> = controls.iter().flatten().copied().collect();
    let dt = a.grid().dt();
    let mut total = 0.0;
    for (ca, cb) in a.cells().zip(b.cells()) {
        if ca == cb {
            continue;
        }
        let ma = ParticleMeasure::normalized(dim, coords.clone(), ca.to_vec())?;
        let mb = ParticleMeasure::normalized(dim, coords.clone(), cb.to_vec())?;
        total += dt * w1_distance(&ma, &mb)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{flow_distance, trapezoid_prefix};
    use crate::model::{ClosureModel, ConstantLedger, ControlSet, LipschitzLedger};
    use proptest::prelude::*;

    fn grid(steps: usize) -> TimeGrid {
        TimeGrid::new(1.0, steps).unwrap()
    }

    fn drift_model(controls: &[f64]) -> ClosureModel {
        ClosureModel::new(
            1.0,
            ControlSet::scalar(controls).unwrap(),
            ParticleMeasure::dirac(&[0.0]),
        )
        .with_velocity(|_, _, _, u, out| out[0] = u[0])
    }

    fn frozen(g: TimeGrid) -> MeasureFlow {
        MeasureFlow::constant(g, &ParticleMeasure::dirac(&[0.0]))
    }

    #[test]
    fn unit_drift_reaches_one() {
        let m = drift_model(&[-1.0, 1.0]);
        // Dyadic step so the sum is exact in binary.
        let g = grid(16);
        let a = RelaxedControl::constant(g, 2, 1).unwrap();
        let tr = integrate(&m, &frozen(g), 0, &[0.0], &a).unwrap();
        assert_eq!(tr.final_state()[0], 1.0);
        assert_eq!(tr.cost(0), 0.0);
    }

    #[test]
    fn balanced_mixture_stays_put() {
        let m = drift_model(&[-1.0, 1.0]);
        let g = grid(10);
        let a = RelaxedControl::constant_mixture(g, &[0.5, 0.5]).unwrap();
        let tr = integrate(&m, &frozen(g), 0, &[0.0], &a).unwrap();
        assert!((0..=10).all(|k| tr.state(k)[0] == 0.0));
    }

    #[test]
    fn exponential_decay() {
        let m = ClosureModel::new(1.0, ControlSet::scalar(&[0.0]).unwrap(), ParticleMeasure::dirac(&[1.0]))
            .with_velocity(|_, x, _, _, out| out[0] = -x[0]);
        let g = grid(50);
        let a = RelaxedControl::constant(g, 1, 0).unwrap();
        let tr = integrate(&m, &frozen(g), 0, &[1.0], &a).unwrap();
        assert!((tr.final_state()[0] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn start_node_freezes_prefix() {
        let m = drift_model(&[1.0]).with_running_cost(|_, _, _, _| 1.0);
        let g = grid(10);
        let a = RelaxedControl::constant(g, 1, 0).unwrap();
        let tr = integrate(&m, &frozen(g), 4, &[0.0], &a).unwrap();
        assert!((0..=4).all(|k| tr.state(k)[0] == 0.0 && tr.cost(k) == 0.0));
        assert!((tr.final_state()[0] - 0.6).abs() < 1e-12);
        assert!((tr.cost(10) + 0.6).abs() < 1e-12);
    }

    #[test]
    fn payoff_examples() {
        let g = grid(10);
        let mu = frozen(g);
        let m = drift_model(&[0.0, 1.0]).with_terminal(|x, _| x[0]);
        let a = RelaxedControl::constant(g, 2, 1).unwrap();
        assert!((payoff(&m, &mu, 0, &[0.0], &a).unwrap() - 1.0).abs() < 1e-12);

        let m = drift_model(&[0.0, 1.0]).with_running_cost(|_, _, _, _| 1.0);
        let a = RelaxedControl::constant_mixture(g, &[0.3, 0.7]).unwrap();
        assert!((payoff(&m, &mu, 0, &[0.0], &a).unwrap() + 1.0).abs() < 1e-12);

        let m = drift_model(&[0.0, 1.0])
            .with_running_cost(|_, _, _, u| 0.5 * u[0] * u[0])
            .with_terminal(|x, _| x[0]);
        let a = RelaxedControl::constant(g, 2, 1).unwrap();
        assert!((payoff(&m, &mu, 0, &[0.0], &a).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn guard_box_violation_is_reported() {
        let m = drift_model(&[1.0]);
        let g = grid(10);
        let ctx = FlowContext::new(&m, &frozen(g))
            .unwrap()
            .with_guard(BoxRegion::new(vec![-0.5], vec![0.5]).unwrap());
        let a = RelaxedControl::constant(g, 1, 0).unwrap();
        let err = ctx.integrate(&m, 0, &[0.0], &a).unwrap_err();
        assert!(matches!(err, Error::InvariantBoxViolated { node: 6, .. }), "{err}");
    }

    #[test]
    fn control_distance_examples() {
        let p = ControlSet::scalar(&[-1.0, 1.0]).unwrap();
        let g = grid(10);
        let lo = RelaxedControl::constant(g, 2, 0).unwrap();
        let hi = RelaxedControl::constant(g, 2, 1).unwrap();
        assert_eq!(control_distance(&p, &lo, &lo).unwrap(), 0.0);
        assert!((control_distance(&p, &lo, &hi).unwrap() - 2.0).abs() < 1e-12);
        let mut idx = vec![0; 10];
        idx[3] = 1;
        let one = RelaxedControl::from_indices(g, 2, &idx).unwrap();
        assert!((control_distance(&p, &lo, &one).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn invalid_cells_are_rejected() {
        let g = grid(2);
        assert!(RelaxedControl::new(g, vec![vec![0.5, 0.4], vec![1.0, 0.0]]).is_err());
        assert!(RelaxedControl::new(g, vec![vec![1.0, 0.0]]).is_err());
        assert!(RelaxedControl::from_indices(g, 2, &[0, 2]).is_err());
    }

    /// `f = u + kappa (mean - x)`, `g = u^2/2 + c (x - mean)^2`, `sigma = -(x - 1)^2`.
    fn coupled_model(kappa: f64, c: f64) -> ClosureModel {
        ClosureModel::new(
            1.0,
            ControlSet::linspace(-1.0, 1.0, 5).unwrap(),
            ParticleMeasure::dirac(&[0.0]),
        )
        .with_features(|m| MeasureFeatures(m.mean()))
        .with_velocity(move |_, x, m, u, out| out[0] = u[0] + kappa * (m.get(0) - x[0]))
        .with_running_cost(move |_, x, m, u| 0.5 * u[0] * u[0] + c * (x[0] - m.get(0)).powi(2))
        .with_terminal(|x, _| -(x[0] - 1.0).powi(2))
    }

    fn flow_from(g: TimeGrid, atoms: &[(f64, f64)], drift: f64) -> MeasureFlow {
        let snaps = (0..g.node_count())
            .map(|k| {
                let t = g.node(k);
                let pts: Vec<f64> = atoms.iter().map(|(x, v)| x + (v + drift) * t).collect();
                ParticleMeasure::uniform_1d(&pts).unwrap()
            })
            .collect();
        MeasureFlow::new(g, snaps).unwrap()
    }

    fn arb_flow_pair() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<(f64, f64)>, f64)> {
        let atoms = prop::collection::vec((-0.5f64..0.5, -0.5f64..0.5), 1..6);
        (atoms.clone(), atoms, -0.5f64..0.5)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gronwall_and_initial_point_envelopes(
            (a, b, drift) in arb_flow_pair(),
            x1 in -0.5f64..0.5,
            x2 in -0.5f64..0.5,
            cells in prop::collection::vec(0usize..5, 16),
        ) {
            let kappa = 0.5;
            let model = coupled_model(kappa, 0.1);
            let g = grid(16);
            let mu1 = flow_from(g, &a, 0.0);
            let mu2 = flow_from(g, &b, drift);
            let alpha = RelaxedControl::from_indices(g, 5, &cells).unwrap();
            let l = LipschitzLedger { l_fx: kappa, l_fm: kappa, ..LipschitzLedger::zero() };
            let c = ConstantLedger::compute(&l, 1.0, 1.0);
            let w = mu1.node_distances(&mu2).unwrap();
            let int_w = trapezoid_prefix(&w, g.dt());

            let t1 = integrate(&model, &mu1, 0, &[x1], &alpha).unwrap();
            let t2 = integrate(&model, &mu2, 0, &[x1], &alpha).unwrap();
            let t3 = integrate(&model, &mu2, 0, &[x2], &alpha).unwrap();
            for k in 0..g.node_count() {
                let d12 = (t1.state(k)[0] - t2.state(k)[0]).abs();
                prop_assert!(d12 <= c.c1 * int_w[k] + 1e-6, "k={k} {d12} > {}", c.c1 * int_w[k]);
                let d13 = (t1.state(k)[0] - t3.state(k)[0]).abs();
                let rhs = c.c2 * (x1 - x2).abs() + c.c1 * int_w[k];
                prop_assert!(d13 <= rhs + 1e-6, "k={k} {d13} > {rhs}");
            }
        }

        #[test]
        fn payoff_is_lipschitz_in_the_flow(
            (a, b, drift) in arb_flow_pair(),
            x0 in -0.5f64..0.5,
            cells in prop::collection::vec(0usize..5, 16),
        ) {
            let (kappa, cw) = (0.5, 0.1);
            let model = coupled_model(kappa, cw);
            let g = grid(16);
            let mu1 = flow_from(g, &a, 0.0);
            let mu2 = flow_from(g, &b, drift);
            let region = BoxRegion::new(vec![-2.0], vec![2.0]).unwrap();
            let diam = region.diameter();
            let l = LipschitzLedger {
                l_fx: kappa,
                l_fm: kappa,
                l_gx: 2.0 * cw * diam,
                l_gm: 2.0 * cw * diam,
                l_sx: 2.0 * 3.0,
                l_sm: 0.0,
            };
            let c = ConstantLedger::compute(&l, 1.0, diam);
            let alpha = RelaxedControl::from_indices(g, 5, &cells).unwrap();
            let j1 = payoff(&model, &mu1, 0, &[x0], &alpha).unwrap();
            let j2 = payoff(&model, &mu2, 0, &[x0], &alpha).unwrap();
            let lip = l.l_sx * c.c1 + l.l_sm + l.l_gx * c.c1 + l.l_gm;
            let dist = flow_distance(&mu1, &mu2).unwrap();
            prop_assert!((j1 - j2).abs() <= lip * dist + 1e-6);
        }

        #[test]
        fn trajectories_respect_speed_bound(
            x0 in -0.5f64..0.5,
            cells in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 16),
        ) {
            let model = coupled_model(0.0, 0.0);
            let g = grid(16);
            let cells: Vec<Vec<f64>> = cells
                .into_iter()
                .map(|c| {
                    let s: f64 = c.iter().sum::<f64>().max(1e-9);
                    let mut v: Vec<f64> = c.iter().map(|w| w / s).collect();
                    let r: f64 = v.iter().sum();
                    v[0] += 1.0 - r;
                    if v[0] < 0.0 { vec![1.0, 0.0, 0.0, 0.0, 0.0] } else { v }
                })
                .collect();
            let alpha = RelaxedControl::new(g, cells).unwrap();
            let tr = integrate(&model, &frozen(g), 0, &[x0], &alpha).unwrap();
            prop_assert!(tr.max_speed() <= 1.0 * (1.0 + 1e-9));
        }
    }
}
