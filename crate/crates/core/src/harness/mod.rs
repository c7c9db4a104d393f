//! Configuration, experiment orchestration and report emission.

pub mod config;
pub mod experiments;
pub mod plot;
pub mod report;

pub use config::{ExperimentConfig, ExperimentKind, OUTPUT_DIR_ENV};
pub use experiments::{run_experiment, run_kernels, run_lemma1_check, run_lemma2_check, run_profiles, run_simulation};
pub use report::{emit_reports, load_bundle, ReportBundle, ReportFormats};
