//! Experiment runner for the Neumann gradient estimators.

pub mod cli;
pub mod config;
pub mod error;
pub mod executor;
pub mod expression;
pub mod output;
pub mod run;
