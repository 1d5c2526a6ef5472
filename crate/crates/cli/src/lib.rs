//! Library side of the `crmopo` command: experiment files, seed sweeps and
//! their artifacts.

pub mod experiment;

pub use experiment::{run_experiment, ExperimentOutcome, ExperimentSpec, ModelSource, OracleSpec};
