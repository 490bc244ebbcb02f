//! Unsupervised domain adaptation by a learned linear subspace.
//!
//! Source and target are aligned in marginal and class-conditional mean,
//! classes are pushed apart, and the target is reconstructed from the source
//! through a low-rank plus sparse coefficient matrix. The subspace is found
//! by a Rayleigh-quotient initialization followed by an inexact augmented
//! Lagrange multiplier solver.

pub mod alm_solver;
pub mod classify_eval;
pub mod data_model;
pub mod error;
pub mod linalg_kernels;
pub mod mmd_matrices;
pub mod pipeline_cli;
pub mod subspace_init;

pub use data_model::{Dataset, DomainPair, Matrix, NormalizeMode};
pub use error::{Error, Result};
pub use pipeline_cli::{run_baseline_nn, run_rsa_cdda, AdaptationConfig, AdaptationReport};
