//! Problem data for a mean field game: dynamics, running cost, terminal
//! payoff, finite control set, initial measure, and derived constants.

mod bounds;
mod hamiltonian;
mod ledger;
mod lp;
mod templates;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::{BoxRegion, ParticleMeasure};

pub use bounds::{
    bound_box_and_k, estimate_ledger, ledger_warnings, sampled_ledger, BoundOptions,
    InvariantRegion,
};
pub use hamiltonian::{
    conjugate, conjugate_with, hamiltonian, hamiltonian_with, project_to_velocity_hull,
    HamiltonianEval,
};
pub(crate) use hamiltonian::is_tied;
pub use ledger::{ConstantLedger, LipschitzLedger};
pub use templates::{build_template, Congestion1d, Lq1d, TemplateParams, Uncoupled, TEMPLATE_NAMES};

/// Finite statistics of a measure consumed by a model's coefficients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasureFeatures(pub Vec<f64>);

impl MeasureFeatures {
    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

/// Finite control set `P`, each control a point of `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl ControlSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidModel("control set is empty".into()));
        };
        let dim = first.len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidModel("controls must share a positive dimension".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite control".into()));
        }
        Ok(Self { dim, points })
    }

    /// Scalar controls.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|v| vec![*v]).collect())
    }

    /// `count` evenly spaced scalar controls on `[lo, hi]`.
    pub fn linspace(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidModel("control count must be positive".into()));
        }
        if count == 1 {
            return Self::scalar(&[0.5 * (lo + hi)]);
        }
        let vals: Vec<f64> = (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect();
        Self::scalar(&vals)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.iter().map(|p| p.as_slice())
    }
}

/// Coefficients of a first-order mean field game.
///
/// Measure arguments reach `f`, `g` and `sigma` only through
/// [`MeanFieldModel::features`], computed once per snapshot.
pub trait MeanFieldModel: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn controls(&self) -> &ControlSet;
    fn initial_measure(&self) -> &ParticleMeasure;

    fn features(&self, _m: &ParticleMeasure) -> MeasureFeatures {
        MeasureFeatures::default()
    }

    /// Writes `f(t, x, m, u)` into `out`.
    fn velocity(&self, t: f64, x: &[f64], m: &MeasureFeatures, u: &[f64], out: &mut [f64]);

    /// Running cost `g(t, x, m, u)`.
    fn running_cost(&self, t: f64, x: &[f64], m: &MeasureFeatures, u: &[f64]) -> f64;

    /// Terminal payoff `sigma(x, m)`.
    fn terminal_payoff(&self, x: &[f64], m: &MeasureFeatures) -> f64;

    /// Analytic Lipschitz constants over `region`, when known.
    fn declared_ledger(&self, _region: &BoxRegion) -> Option<LipschitzLedger> {
        None
    }

    /// Whether any coefficient depends on the measure argument.
    fn is_coupled(&self) -> bool {
        true
    }
}

pub type SharedModel = Arc<dyn MeanFieldModel>;

pub(crate) fn validate_model(model: &dyn MeanFieldModel) -> Result<()> {
    if model.controls().is_empty() {
        return Err(Error::InvalidModel("control set is empty".into()));
    }
    if model.initial_measure().dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: model.initial_measure().dim(),
        });
    }
    if !(model.horizon().is_finite() && model.horizon() > 0.0) {
        return Err(Error::InvalidModel(format!("bad horizon {}", model.horizon())));
    }
    Ok(())
}

type VelocityFn = dyn Fn(f64, &[f64], &MeasureFeatures, &[f64], &mut [f64]) + Send + Sync;
type CostFn = dyn Fn(f64, &[f64], &MeasureFeatures, &[f64]) -> f64 + Send + Sync;
type TerminalFn = dyn Fn(&[f64], &MeasureFeatures) -> f64 + Send + Sync;
type FeatureFn = dyn Fn(&ParticleMeasure) -> MeasureFeatures + Send + Sync;

/// Model assembled from closures. Defaults: `f = 0`, `g = 0`, `sigma = 0`,
/// no measure features.
pub struct ClosureModel {
    name: String,
    dim: usize,
    horizon: f64,
    controls: ControlSet,
    m0: ParticleMeasure,
    velocity: Box<VelocityFn>,
    cost: Box<CostFn>,
    terminal: Box<TerminalFn>,
    features: Option<Box<FeatureFn>>,
    ledger: Option<LipschitzLedger>,
}

impl ClosureModel {
    pub fn new(horizon: f64, controls: ControlSet, m0: ParticleMeasure) -> Self {
        let dim = m0.dim();
        Self {
            name: "custom".into(),
            dim,
            horizon,
            controls,
            m0,
            velocity: Box::new(|_, _, _, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)),
            cost: Box::new(|_, _, _, _| 0.0),
            terminal: Box::new(|_, _| 0.0),
            features: None,
            ledger: None,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_velocity(
        mut self,
        f: impl Fn(f64, &[f64], &MeasureFeatures, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.velocity = Box::new(f);
        self
    }

    pub fn with_running_cost(
        mut self,
        g: impl Fn(f64, &[f64], &MeasureFeatures, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.cost = Box::new(g);
        self
    }

    pub fn with_terminal(
        mut self,
        sigma: impl Fn(&[f64], &MeasureFeatures) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.terminal = Box::new(sigma);
        self
    }

    pub fn with_features(
        mut self,
        phi: impl Fn(&ParticleMeasure) -> MeasureFeatures + Send + Sync + 'static,
    ) -> Self {
        self.features = Some(Box::new(phi));
        self
    }

    pub fn with_ledger(mut self, ledger: LipschitzLedger) -> Self {
        self.ledger = Some(ledger);
        self
    }

    pub fn shared(self) -> SharedModel {
        Arc::new(self)
    }
}

impl fmt::Debug for ClosureModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("controls", &self.controls.len())
            .finish()
    }
}

impl MeanFieldModel for ClosureModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn controls(&self) -> &ControlSet {
        &self.controls
    }
    fn initial_measure(&self) -> &ParticleMeasure {
        &self.m0
    }
    fn features(&self, m: &ParticleMeasure) -> MeasureFeatures {
        match &self.features {
            Some(phi) => phi(m),
            None => MeasureFeatures::default(),
        }
    }
    fn velocity(&self, t: f64, x: &[f64], m: &MeasureFeatures, u: &[f64], out: &mut [f64]) {
        (self.velocity)(t, x, m, u, out)
    }
    fn running_cost(&self, t: f64, x: &[f64], m: &MeasureFeatures, u: &[f64]) -> f64 {
        (self.cost)(t, x, m, u)
    }
    fn terminal_payoff(&self, x: &[f64], m: &MeasureFeatures) -> f64 {
        (self.terminal)(x, m)
    }
    fn declared_ledger(&self, _region: &BoxRegion) -> Option<LipschitzLedger> {
        self.ledger
    }
    fn is_coupled(&self) -> bool {
        self.features.is_some()
    }
}
