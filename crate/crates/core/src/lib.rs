//! Embodied-agent skill harness.
//!
//! The crate bundles a deterministic household grid simulator, skill prompt and answer
//! contracts, a model-client abstraction (remote chat endpoint or scripted oracle), an
//! episode runtime with sampling-based failure recovery, skill-dataset construction,
//! rule-based rewards with variance filtering, and skill/task evaluation.

pub mod agent;
pub mod client;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod prompts;
pub mod reward;
pub mod sim;
pub mod store;

pub use model::*;
