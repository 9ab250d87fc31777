//! Particle measures, Wasserstein-1 transport, and measure flows.

mod decompose;
mod flow;
mod grid;
mod particle;
mod transport;

pub use decompose::{decompose_to_empirical, decompose_to_empirical_with, EmpiricalDecomposition};
pub use flow::{flow_distance, flow_lipschitz_defect, trapezoid_prefix, MeasureFlow};
pub use grid::{BoxRegion, TimeGrid};
pub use particle::{euclid, norm, ParticleMeasure, MASS_TOL};
pub use transport::{
    optimal_plan, optimal_plan_with, quantile_coupling, w1_distance, w1_distance_with, PlanEntry,
    TransportMethod, TransportOptions, TransportPlan, DEFAULT_SUPPORT_CAP,
};
