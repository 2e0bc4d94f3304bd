//! Non-overlapping cross-domain recommendation by distributional preference
//! matching: deterministic two-hop graph encoders, hierarchical variational
//! preference inference, symmetrized-KL alignment of the two domains'
//! predictive distributions, and information-bottleneck-style predictive
//! objectives, plus a training/evaluation harness with full-ranking
//! cold-start metrics.

pub mod data;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod identifier;
pub mod matching;
pub mod model;
pub mod objectives;

pub use error::{CoreError, Result};
