//! Discrete-time multitype Crump-Mode-Jagers processes.
//!
//! The crate builds multitype Galton-Watson models from finite offspring
//! tables, decomposes the mean matrix along the circle of radius `sqrt(rho)`,
//! counts simulated trees with random characteristics, computes the limiting
//! variance constants of the second-order fluctuations exactly (up to
//! certified geometric tails) and checks the mixed-normal limit statistically.

pub mod characteristics;
pub mod constants;
pub mod error;
pub mod identities;
pub mod linalg;
pub mod model;
pub mod report;
pub mod scenario;
pub mod simulator;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{CMat, CRow, C64};
