//! Multi-behavior recommender toolkit.
//!
//! The centerpiece is a cascaded multi-task model: users and items share one
//! embedding table, each behavior level gets its own neural interaction
//! function (GMF, MLP, or NeuMF), level predictions chain through a sigmoid
//! cascade, and all levels train jointly under a weighted log loss. Around it
//! sit the single- and multi-behavior baselines it is compared against
//! (BPR-MF, pointwise NCF, collective matrix factorization, multi-channel
//! BPR) and a leave-one-out all-item ranking harness reporting HR@K and
//! NDCG@K.
//!
//! Everything is deterministic given a seed: datasets, initialization,
//! sampling, training, and evaluation.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod model;
pub mod train;
pub mod units;

pub use error::{Error, Result};
