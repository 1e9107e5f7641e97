//! Boosted-tree models for aggregate insurance claims.
//!
//! The crate trains gradient-boosted decision trees under three objective
//! families: plain Tweedie, a zero-inflated Tweedie with a separate ensemble
//! for the inflation probability (`zitw-dual`), and a zero-inflated Tweedie
//! whose inflation probability is tied to the mean through a single shape
//! parameter (`zitw-linked`, q = 1/(1 + mu^gamma)). Alongside the trainers it
//! ships the exact compound Poisson-gamma density machinery, a model
//! evaluation suite (deviance, MAD, Vuong, two Gini variants), log-ratio
//! transforms for compositional feature blocks, and the dataset / simulation
//! plumbing used by the `claimboost` CLI.

// Validation sites use `!(v > 0.0)`-style comparisons on purpose: the
// negation also rejects NaN, which a plain `v <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compositional;
pub mod config;
pub mod csvio;
pub mod cv;
pub mod dataset;
pub mod encoder;
pub mod expr;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod model_io;
pub mod seeding;
pub mod sim;
pub mod train;
pub mod tree;
pub mod tweedie;

pub use dataset::Dataset;
pub use loss::ScoreState;
pub use train::{BoostedModel, Family};
pub use tree::BoostConfig;
pub use tweedie::{CpgParams, TweedieParams, ZitwParams};
