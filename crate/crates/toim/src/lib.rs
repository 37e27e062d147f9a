//! Topic-level opinion influence modeling.
//!
//! The pipeline learns, from a heterogeneous post/comment/reply corpus:
//! per-user topic preferences (collapsed Gibbs sampling with reply-coupled
//! topic sharing), per-topic opinion distributions, and pairwise
//! agree/disagree influence between users. Learned influence can be
//! propagated through the reply graph (conservatively or not) to reach
//! users without direct interaction history, and the combined model
//! predicts a user's future opinion on a topic.
//!
//! Module map:
//! - [`corpus`]: graph + vocabulary ingestion, subgraph extraction
//! - [`opinion`]: noun/opinion-word resolution and agreement labeling
//! - [`gibbs`]: collapsed Gibbs sampler and Θ/Φ estimation
//! - [`influence`]: opinion ledger, Ψ/Ω/tie-strength/OAI estimation
//! - [`pair`]: deterministic parallel decomposition of the ledger phase
//! - [`propagation`]: conservative / non-conservative influence diffusion
//! - [`predict`]: opinion prediction, evaluation, baselines
//! - [`synth`]: planted-parameter synthetic corpus generation

pub mod corpus;
pub mod error;
pub mod gibbs;
pub mod influence;
pub mod opinion;
pub mod pair;
pub mod predict;
pub mod propagation;
pub mod seed;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::ToimError;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, ToimError>;
