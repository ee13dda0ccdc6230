//! Experiment harness around the evaluation pipeline: a resumable grid
//! runner, log-log slope fits over its records, and an oracle-backed
//! verifier for result files.

pub mod config;
pub mod runner;
pub mod slopes;
pub mod verify;
