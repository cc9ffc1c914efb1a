//! Few-shot knowledge tracing engine.
//!
//! Given a handful of a student's exercise records, the engine chains
//! chat-completion calls to estimate per-concept knowledge states, predict
//! performance on held-out exercises, and produce natural-language
//! interpretations and explanations. A classical per-skill Bayesian knowledge
//! tracing baseline and a seeded evaluation harness make runs comparable and
//! reproducible.
//!
//! Module map:
//! - [`model`]: domain types (datasets, records, states, predictions)
//! - [`ingest`]: dataset loaders and the train/test split
//! - [`select`]: shot selection strategies
//! - [`prompt`]: record serialization and the four prompt families
//! - [`llm`]: provider abstraction, test doubles, transcript cache, HTTP
//! - [`cognition`]: the sequential analysis chain and prediction parsing
//! - [`interpret`]: prediction explanations and student reports
//! - [`bkt`]: the Bayesian knowledge tracing baseline
//! - [`eval`]: experiment runner, metrics and comparisons

pub mod bkt;
pub mod cognition;
pub mod eval;
pub mod ingest;
pub mod interpret;
pub mod llm;
pub mod model;
pub mod prompt;
pub mod select;
