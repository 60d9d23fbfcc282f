//! Configuration files, experiment dispatch and output records for the
//! command-line front end.

pub mod config;
pub mod experiment;

pub use config::{validate_config, ExperimentKind, RunConfig};
pub use experiment::{
    closed_form_reference, config_hash, error_record, resolved_config, run_experiment, write_error, write_outputs,
    RunOutput, VERSION,
};
