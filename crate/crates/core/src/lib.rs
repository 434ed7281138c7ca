//! Context-based embeddings (CBE) for short-text classification.
//!
//! This crate implements a pipeline that enriches noisy short texts (tweets,
//! forum posts) with knowledge-graph context and classifies them with small,
//! desk-scale models:
//!
//! 1. [`corpus`] — load / clean a labeled post corpus, emoji and term statistics
//! 2. [`kgstore`] — an in-memory triple store parsed from N-Triples snapshots
//! 3. [`linker`] — entity recognition against a gazetteer and/or a remote
//!    linking API, with a curation layer for known-bad links
//! 4. [`walks`] — random walks over the knowledge graph, seeded per entity
//! 5. [`embed`] — skip-gram training with negative sampling, smoothed
//!    inverse-frequency sentence embedding, and a plain-text vector format
//! 6. [`fusion`] — combining text-side and graph-side sentence vectors
//! 7. [`learn`] — logistic regression, a one-hidden-layer MLP, and k-NN
//! 8. [`eval`] — stratified splits, cross-validation, grid search, rank
//!    correlation, and output-bias diagnostics
//!
//! Every randomized step takes an explicit seed and is reproducible; the
//! single-threaded paths are bit-for-bit deterministic.

pub mod corpus;
pub mod embed;
pub mod eval;
pub mod fusion;
pub mod kgstore;
pub mod learn;
pub mod linker;
pub mod walks;
