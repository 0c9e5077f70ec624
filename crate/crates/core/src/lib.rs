pub mod classifier;
pub mod clustering;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod features;
pub mod incremental;
pub mod metrics;
pub mod novelty;

pub use error::{Error, Result};
