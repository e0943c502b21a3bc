//! Quantum multi-time correlators of position-sign observables for particles
//! in a box, compared against Bohmian trajectory ensembles with and without
//! wavefunction collapse.

pub mod bohm;
pub mod collapse;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod observables;
pub mod quadrature;
pub mod report;
pub mod sampler;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Execution;
