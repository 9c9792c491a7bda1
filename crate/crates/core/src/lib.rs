//! Growth-fragmentation cell process: simulation, drift checks, tail
//! estimation and a finite-volume solver for the population density.

pub mod cli;
pub mod config;
pub mod error;
pub mod flow;
pub mod lyapunov;
pub mod ode;
pub mod pde;
pub mod pdmp;
pub mod quad;
pub mod rates;
pub mod roots;
pub mod stats;
pub mod tails;

pub use error::{Error, Result};
