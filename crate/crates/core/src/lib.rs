//! Simulation and verification toolkit for compressible flow with relaxed
//! (Cattaneo-type) heat conduction and relaxed bulk stress.

pub mod diagnostics;
pub mod eigen;
pub mod entropy;
pub mod error;
pub mod field;
pub mod grid;
pub mod io;
pub mod scenarios;
pub mod solver;
pub mod sum;
pub mod thermo;

pub use error::{Error, Result};
