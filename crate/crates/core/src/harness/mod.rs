//! Experiment orchestration: metrics, config files, run manifests and the
//! train / eval / ablate / sweep / spectral commands.

pub mod commands;
pub mod config;
pub mod metrics;
pub mod experiment;
pub mod manifest;
