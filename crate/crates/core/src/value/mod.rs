//! Backward dynamic programming for the value function against a frozen
//! measure flow, best-response extraction, and minimax-condition checks.

mod checks;
mod grid;
mod solve;

pub use checks::{check_hadamard, check_viability, HadamardReport, ViabilityReport};
pub use grid::{StateGrid, MAX_STATE_DIM};
pub use solve::{
    best_response, best_response_in, solve_value, solve_value_in, step_objectives,
    tied_controls, ValueField, TRUST_TOL,
};
