//! Config-driven experiments: sampling, reference pairing, sweeps and I/O.

pub mod commands;
pub mod config;
pub mod reference;
pub mod sampling;

pub use commands::{diagnose, fit_files, gap, pde_solve, run_cell, simulate, sweep};
pub use config::ExperimentConfig;
pub use reference::{InitDensity, Reference, PARTICLE_COUPLING};
