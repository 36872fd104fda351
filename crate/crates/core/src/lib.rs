//! Hierarchical federated learning of an LSTM anomaly detector for vehicular IoT.
//!
//! Vehicles emit telemetry, cloudlet-hosted digital twins mirror it together
//! with regional context, each vehicle trains a two-layer LSTM classifier on
//! its twin's data, and weights are averaged first per region (cloudlet) and
//! then across regions (multi-cloud server).
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! parallel execution live in the `hfl-sim` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
pub mod exec;
pub mod federation;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod phases;
pub mod pipeline;
pub mod report;
pub mod scenario;
pub mod seed;
pub mod telemetry;
pub mod twin;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use federation::{aggregate, run_hfl, Federation, RoundRecord};
pub use metrics::{evaluate, Confusion, Metrics};
pub use model::{ModelDims, ModelParameters, WeightDelta};
pub use phases::{Phase, Simulation};
pub use pipeline::{NormStats, NumericMatrix, SequenceSet};
pub use scenario::{FederationTopology, ScenarioConfig, TrainingConfig};
pub use seed::derive_stream_seed;
