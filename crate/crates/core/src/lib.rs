//! Adaptive P1 finite elements for optimal control with point sources.

pub mod adapt;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod fem;
pub mod manufactured;
pub mod mesh;
pub mod ocp;
pub mod quadrature;
pub mod weights;

pub use error::{Error, Result};

/// Spatial point; in two dimensions the third component is zero.
pub type Point = nalgebra::Vector3<f64>;
