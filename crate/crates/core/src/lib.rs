pub mod aggregate;
pub mod cli;
pub mod error;
pub mod evalharness;
pub mod fixtures;
pub mod graph;
pub mod permute;
pub mod tree;
pub mod utility;
pub mod valuation;

pub use error::{Error, Result};
