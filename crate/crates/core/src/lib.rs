//! Cluster mean-field engine for the dissipative Heisenberg XYZ lattice.

pub mod chaos;
pub mod dynamics;
pub mod error;
pub mod lattice;
pub mod noise;
pub mod phases;
pub mod rigidity;
pub mod rng;
pub mod spectral;
pub mod stability;

pub use error::{Error, Result};
