//! Video captioning with an importance-weighted cross-entropy objective.
//!
//! The pipeline: build a [`corpus::Vocabulary`] from a caption corpus, derive
//! per-(word, video) importance values with [`importance`], train the
//! hierarchical attention model in [`captioner`] with [`trainer::train`] and
//! score generated captions with [`decode::evaluate`].

pub mod captioner;
pub mod cli;
pub mod corpus;
pub mod decode;
pub mod experiment;
pub mod features;
pub mod hashing;
pub mod importance;
pub mod metrics;
pub mod ndcore;
pub mod objective;
pub mod synth;
pub mod trainer;
