//! File formats, run configuration, and orchestration.

pub mod config;
pub mod manifest;
pub mod run;
pub mod tables;

pub use config::{Mode, RunConfig};
pub use manifest::{hash_file, load_manifest, Manifest, RunStatus};
pub use run::{export_density, export_manhattan, export_trace, load_fit, load_stability, run, DensityCurve, RunOutcome};
pub use tables::{load_dataset, load_genotypes, load_network, load_truth, save_connectomes, save_genotypes, save_network, save_snp_sets, save_truth};
