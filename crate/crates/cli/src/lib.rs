//! Configuration, experiment orchestration and CSV output for the atom
//! diode simulator.

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

pub use commands::{cmd_ensemble, cmd_oracle, cmd_scan, cmd_vmax, EnsembleOutput};
pub use config::ExperimentConfig;
pub use error::CliError;
pub use table::{Cell, Provenance, ResultTable};
