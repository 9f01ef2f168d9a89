//! Multiscale solver for scalar Signorini contact problems on the unit
//! square: fine Q1 finite elements, a generalized multiscale coarse space,
//! and a primal-dual active set method for the resulting complementarity
//! systems.

pub mod assemble;
pub mod cli;
pub mod eigen;
pub mod error;
pub mod field;
pub mod grid;
pub mod msbasis;
pub mod pdas;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
