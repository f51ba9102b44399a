//! Lattice Monte Carlo laboratory: random walks and loop-erasure on `Z^d`,
//! wired spanning forests, lattice Green functions, a discrete field with
//! log-covariance scaling in four dimensions, escape-probability estimators
//! and a two-sided self-avoiding walk sampler, backed by exact small-graph
//! ground truth.

pub mod error;
pub mod estimate;
pub mod field;
pub mod green;
pub mod lattice;
pub mod lerw;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod twosided;
pub mod walk;
pub mod wilson;

pub use error::{Error, Result};
