pub mod error;
pub mod estimators;
pub mod exact;
pub mod experiments;
pub mod graphs;
pub mod kernel;
pub mod lattice;
pub mod rng;
pub mod sampling;

pub use error::{ConfigIssue, Error, Result};
