//! Laplacian eigenfunctions of partially rectangular billiards and
//! numerical checks of their non-concentration.

pub mod config;
pub mod control;
pub mod discretize;
pub mod eigensolve;
pub mod error;
pub mod geometry;
pub mod io;
pub mod modes;
pub mod phase;
pub mod rays;
pub mod verify;

pub use error::{Error, Result};
