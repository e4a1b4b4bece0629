//! Experiment harness: configuration, single runs, reproduction suites.

pub mod config;
pub mod ini;
pub mod run;
pub mod suites;

pub use config::{parse_shape, DatasetSource, ExperimentConfig, IdxSource, Method};
pub use ini::Ini;
pub use run::{
    default_run_dir, headline_target, load_dataset, run_experiment, run_to_dir, write_outputs,
    Headline, NesReport, RunOutcome, RunReport, Timings,
};
