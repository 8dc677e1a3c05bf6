//! Discrete-velocity toolkit for the linearized Boltzmann equation with
//! cutoff hard potentials.

pub mod audit;
pub mod config;
pub mod cache;
pub mod convolution;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod mixture;
pub mod nonlinear;
pub mod quadrature;
pub mod sector;
pub mod spectral;
pub mod velocity;
pub mod waves;

pub use error::{Error, Result};
