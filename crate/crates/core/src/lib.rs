//! Fact-to-question generation over a structured knowledge base.

pub mod baseline;
pub mod cli;
pub mod error;
pub mod generation;
pub mod kb;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod placeholder;
pub mod trainer;
pub mod transe;

pub use error::{Error, Result};
