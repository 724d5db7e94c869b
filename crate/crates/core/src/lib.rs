//! Numerical laboratory for separatrix-map diffusion in a priori unstable
//! Hamiltonian systems.
//!
//! The crate computes Poincaré–Melnikov potentials and resonance geometry,
//! builds quasi-trajectory codes that steer the slow actions along a
//! prescribed curve through strong resonances, and cross-checks the map's
//! predictions against direct integration of the full flow.




pub mod error;
pub mod geom;
pub mod codes;
pub mod lattice;
pub mod melnikov;

pub mod model;
pub mod ode;
pub mod quad;
pub mod resonance;
pub mod rng;
pub mod sepmap;



pub use error::{Error, Result};
pub use model::{ModelSpec, PerturbationSpec};
