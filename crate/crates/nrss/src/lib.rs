//! Network-response regression with structured shrinkage (NRSS).
//!
//! Fits symmetric matrix outcomes (one per subject) against grouped
//! high-dimensional predictors. Each predictor's coefficient matrix is the
//! rank-1 outer product of a node-loading vector that factors into a
//! group-level scale, a node-level scale, and an entry-level weight, each
//! carrying its own shrinkage prior. A node-connectivity graph couples the
//! node-level shrinkage rates. MAP estimation runs an EM loop: a closed-form
//! E-step for the graph weights and proximal/Newton block updates in the
//! M-step.
//!
//! Module map:
//! - [`model`]: data containers, parameters, predictions, posterior objective
//! - [`prior`]: prior sampling, analytic coefficient correlations, densities
//! - [`solver`]: the EM algorithm and its block updates
//! - [`simgen`]: synthetic genotype/connectome generation and LD blocks
//! - [`select`]: splits, grid search, stability selection, metrics
//! - [`io`]: file formats, run configuration, and orchestration

pub mod edges;
pub mod error;
pub mod io;
pub(crate) mod linalg;
pub mod model;
pub mod prior;
pub mod select;
pub mod simgen;
pub mod solver;

pub use error::{Error, Result};
