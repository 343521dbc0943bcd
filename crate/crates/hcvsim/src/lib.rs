//! Agent-based simulator of hepatitis-C transmission, disease progression
//! and treatment in a high-prevalence setting, with two interchangeable
//! lifetime-outcome estimators and a cost-effectiveness analysis layer.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod natural_history;
pub mod outcomes;
pub mod population;
pub mod rng;
pub mod transmission;
pub mod treatment;

pub use config::SimConfig;
pub use error::{Error, Result};
