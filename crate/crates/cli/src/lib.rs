//! Driver for the FENE-P solvers: configuration, scenarios, time loop and output.

pub mod audit;
pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod scenario;
