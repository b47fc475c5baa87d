//! Gloss-to-text translation with retrieved context and visual sentence
//! property indicators.
//!
//! The pipeline retrieves the `K` most similar training glosses with BM25,
//! encodes the sign video into sentence-type and sentence-structure
//! indicators, and feeds both with the serialized context into a
//! Transformer encoder-decoder.

pub mod corpus;
pub mod error;
pub mod exec;
pub mod features;
pub mod generator;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod retrieval;
pub mod synth;
pub mod tokenizer;
pub mod vision;

pub use error::{Error, Result};
