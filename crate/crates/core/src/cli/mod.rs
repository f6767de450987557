//! Configuration, orchestration and output for the `fkchi` binary.

pub mod config;
pub mod emit;
pub mod pipeline;

pub use config::{BathSpec, ConfigError, OutputFormat, RunConfig};
pub use emit::{emit, structured, tabular, Emit, EmitError};
pub use pipeline::{exit, run, run_oracle, run_sweep, DrawPoint, OracleRecord, RunRecord, SweepRecord, FORMAT_VERSION};
