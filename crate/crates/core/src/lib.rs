//! Neural coreference resolution: mention ranking, easy-first cluster ranking
//! trained by learning to search, and the standard coreference metrics.

pub mod cluster_ranker;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod features;
pub mod mention_ranker;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synthetic;
pub mod util;

pub use error::{CorefError, Result};
