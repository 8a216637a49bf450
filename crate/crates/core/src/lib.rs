//! Collaborative data optimization: participants turn unlabeled shards into
//! (sample, target) pairs using their own prior models, a platform picks the
//! prior whose features are most uniform on a small shared set, everyone
//! aligns to that prior's target space, and the platform merges the result.

pub mod alignment;
pub mod config;
pub mod dataset;
pub mod downstream;
pub mod error;
pub mod experiments;
pub mod format;
pub mod linalg;
pub mod priors;
pub mod projection;
pub mod protocol;
pub mod seed;
pub mod uniformity;

pub use error::{Error, Result};
