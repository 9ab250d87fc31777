//! The best-response push-forward operator, the damped fixed-point driver
//! built on it, and the averaged velocity field of a trajectory bundle.

mod bundle;
mod ensemble;
mod solve;

pub use bundle::{
    integral_transform_defect, mean_field_velocity, BundleEntry, CellPartition, CellVelocity,
    TrajectoryBundle,
};
pub use solve::{
    apply_a, apply_a_in, fixed_point_solve, push_forward_controls, AStep, EquilibriumResult,
    Schedule, SolverOptions,
};
