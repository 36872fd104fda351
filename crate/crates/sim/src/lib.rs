//! Command-line front end and file formats for the `hfl-core` simulator.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod exec;
pub mod format;
pub mod output;
pub mod run;
pub mod scenario;

pub use checkpoint::Checkpoint;
pub use error::{Result, SimError};
pub use exec::Parallel;
pub use run::{evaluate_checkpoint, export_telemetry, run_to_dir};
