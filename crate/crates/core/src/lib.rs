//! Numerical laboratory for the semilinear strongly damped wave equation
//!
//! ```text
//! u_tt - lap u - lap u_t = a |u|^p + b |u_t|^q     in an exterior domain of R^2
//! u = 0                                            on the obstacle boundary
//! ```
//!
//! The exterior of a disk is truncated to an annulus and discretized on a
//! polar grid ([`grid`]). [`solver`] advances the equation with a theta scheme
//! whose nonlinearity is lagged, [`energetics`] evaluates classical, higher
//! order and exponentially weighted energies, [`weight`] holds the weight
//! function and its constants, and [`inequality_lab`] checks the weighted
//! inequalities and exponent thresholds against trajectories. [`cli`] ties
//! everything to config files and CSV output.

pub mod cli;
pub mod energetics;
pub mod error;
pub mod grid;
pub mod inequality_lab;
pub mod solver;
pub mod weight;

pub use error::{Error, Result};
