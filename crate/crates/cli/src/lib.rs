//! Configuration, dispatch and report writing for the `dynwalk` binary.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{parse_config, parse_config_str, RunConfig, KINDS};
pub use report::{read_report, write_manifest, write_report, Check, ExperimentReport, RunManifest, Series};
pub use runner::{constants_summary, run_experiment};
