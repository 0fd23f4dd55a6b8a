//! Library half of the `evotrain` command line tool: experiment configs,
//! multi-seed execution, and CSV reporting. The binary in `main.rs` is a
//! thin argument-parsing wrapper over this crate.

pub mod config;
pub mod error;
pub mod experiment;
pub mod report;

pub use config::{DataConfig, DataSource, ExperimentConfig, ExperimentKind};
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, ExperimentOutcome, TopoRunSummary};
pub use report::{aggregate, emit_plotdata, read_records, render_table, write_records, GroupSummary};
