//! Multi-output CRF tagging of substance-use triggers and their contextual
//! arguments in clinical text.
//!
//! The pipeline segments documents into sentences, optionally drops
//! sentences a binary filter rejects, embeds tokens, tags them with two CRF
//! heads over a shared representation, and merges BIO tags back into
//! character-offset spans. Several models can be combined by per-word
//! majority vote, and predictions are scored by exact span match.

pub mod bio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod dataset;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod filter;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod sampling;
pub mod synthetic;

pub use error::{Error, Result};
