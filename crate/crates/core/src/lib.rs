//! Controllable extract-rewrite-reward engine for multi-document summarization.
//!
//! A trainable extraction policy picks an ordered trajectory of source
//! sentences, balancing a learned coverage score against a learned
//! coherence score through two control weights (`cl1`, `cl2`). The picked
//! sentences are handed to a pluggable rewriter, and the rewritten summary
//! is scored against a reference with ROUGE and embedding similarity. Those
//! rewards train the policy with a REINFORCE-style update.
//!
//! Module map:
//!
//! * [`corpus`] - dataset ingestion and sentence splitting
//! * [`embedding`] - sentence vectors, providers and vector math
//! * [`neural`] - pair features, the sigmoid scoring unit, checkpoints
//! * [`coverage`] / [`coherence`] - the two pairwise scorers
//! * [`policy`] - selection logits, softmax policy, sentence budget, rollouts
//! * [`rewrite`] - identity and remote rewriters
//! * [`metrics`] - ROUGE, similarity and rewards
//! * [`pipeline`] - per-cluster preparation and summarization
//! * [`trainer`] - pretraining, policy-gradient training, grid search
//! * [`cli`] - the `exrw` command line

pub mod cli;
pub mod coherence;
pub mod config;
pub mod corpus;
pub mod coverage;
pub mod embedding;
mod error;
mod http;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod policy;
pub mod rewrite;
pub mod trainer;

pub use config::{ControlConfig, RegressionSign};
pub use error::{Error, Result};
