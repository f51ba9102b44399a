//! Front-end crate: experiment configs and orchestration, plot emission, and
//! the release criteria suite.

pub mod criteria;
pub mod harness;
pub mod plot;
