//! Bayesian orientation distribution functions on the quaternion sphere.

pub mod bingham;
pub mod cluster;
pub mod error;
pub mod export;
pub mod io;
pub mod kde;
pub mod mixture;
pub mod normalizer;
pub mod predict;
pub mod quadrature;
pub mod quat;
pub mod rjmcmc;
pub mod stats;
pub mod synthetic;
pub mod tempering;

pub use error::{Error, Result};
pub use quat::{SymmetryGroup, UnitQuaternion};
