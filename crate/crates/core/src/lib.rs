//! Spectral simulator and modulation analysis for the nonlinear Schrödinger
//! equation with a moving trapping potential.

pub mod analysis;
pub mod error;
pub mod evolution;
pub mod field;
pub mod config;
pub mod contraction;
pub mod krylov;
pub mod linops;
pub mod groundstates;
pub mod model;
pub mod report;
pub mod scenario;
pub mod modulation;
pub mod snapshot;

pub use error::{Error, ErrorClass, Result};
pub use field::{ComplexField, Grid, GroupElement, MultiIndexAxis};
