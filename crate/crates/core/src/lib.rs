//! Quality filtering for pretraining corpora.
//!
//! The crate covers the whole filtering loop: text normalization,
//! tokenization, a hashed n-gram linear classifier, seed pool management,
//! sharded corpus scoring, annealing-run planning with benchmark reports,
//! and a journaled multi-round pipeline tying them together.

pub mod classifier;
pub mod document;
pub mod filter;
pub mod fingerprint;
pub mod normalize;
pub mod pipeline;
pub mod seedpool;
pub mod tokenize;
pub mod verify;
