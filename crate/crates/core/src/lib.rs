//! Overlapping-chart domain decomposition for `-Δu + b u = f` on
//! Riemannian manifolds described by rectangular charts.

pub mod analysis;
pub mod assembly;
pub mod atlas;
pub mod config;
pub mod ddm;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
