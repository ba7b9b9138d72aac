//! Experiment harness around the `nashq` library: configuration parsing,
//! deterministic seeded runs with CSV metrics and text checkpoints,
//! parameter sweeps, and resume-from-checkpoint.

pub mod config;
pub mod runner;
pub mod sweep;
