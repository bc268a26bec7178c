//! Simulation and inference for post-selected multiatom signals of resonant
//! Rydberg collisions observed through a detector of finite efficiency.

pub mod cli;
pub mod detector;
pub mod error;
pub mod estimator;
pub mod interaction;
pub mod montecarlo;
pub mod peakfit;
pub mod quadrature;
pub mod rng;
pub mod signal;
pub mod spectrum;
pub mod statistics;
pub mod units;

pub use error::{Error, Result};
