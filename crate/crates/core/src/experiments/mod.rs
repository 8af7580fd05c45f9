//! Run configuration, run directories and the three canned studies behind the
//! `fedlora` binary: the two-client synthetic study, the convergence harness
//! and free-form federated runs.

pub mod config;
pub mod manifest;
pub mod run;
pub mod theory;

pub use config::{synth_defaults, DataSource, FlatConfig, RunConfig, KNOWN_KEYS, REQUIRED_KEYS};
pub use manifest::{is_complete, RunDir, RunManifest, COMPLETE_FILE, MANIFEST_FILE, METRICS_FILE};
pub use run::{build_setups, config_from_manifest, execute_run, run_in_memory, RunSummary};
pub use theory::{execute_theory, run_theory, trace_csv, InstanceSummary, TheoryStudy, TheorySummary};
