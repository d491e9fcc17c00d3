//! Budget-aware parallel reasoning with early path pruning.
//!
//! Launch N trajectories, score their prefixes at a fixed checkpoint with a
//! pluggable signal generator, complete only the top-k, and vote over the
//! survivors. Supporting modules build Monte-Carlo supervision, train the
//! learned scorer, and plan the retention ratio with a fitted power law.

pub mod backend;
pub mod config;
pub mod error;
pub mod labeler;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod scaling;
pub mod signals;
pub mod sim;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
