//! Particle-based solver and verification harness for first-order mean field
//! games in the minimax (viscosity) sense.
//!
//! The pipeline: a [`model::MeanFieldModel`] supplies dynamics, running cost
//! and terminal payoff over a finite control set; [`value`] solves the
//! backward dynamic program against a frozen measure flow; [`equilibrium`]
//! pushes the initial measure forward along best responses and iterates to a
//! fixed point; [`nplayer`] builds the finite-population strategy profile
//! from the equilibrium and measures its Nash gap.

pub mod config;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod io;
pub mod measures;
pub mod model;
pub mod nplayer;
pub mod value;

pub use error::{Error, Result};
