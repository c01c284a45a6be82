//! Two-line Kac-Ising particle system with Glauber dynamics: kernels and lattice
//! transforms, linear stability and Turing classification, the nonlocal
//! hydrodynamic limit, an exact microscopic simulator and ensemble experiments.

pub mod error;
pub mod fluct;
pub mod hydro;
pub mod micro;
pub mod model;
pub mod rng;
pub mod stability;
pub mod stats;

pub use error::{Error, Result};
pub use model::{LatticeSpec, ModelParams};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
