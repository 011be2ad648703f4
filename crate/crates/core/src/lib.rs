//! Markovianity criteria for open quantum and classical stochastic processes.

pub mod error;
pub mod quantum_core;
pub mod superop;
pub mod models;
pub mod optim;
pub mod criteria;
pub mod unravel;
pub mod classical;

pub use error::{Error, Result};
