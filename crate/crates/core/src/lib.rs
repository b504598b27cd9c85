//! Screenplay nomination prediction from chunked sentence embeddings.

pub mod chunker;
pub mod corpus;
pub mod embedder;
pub mod classifier;
pub mod features;
pub mod evalkit;
pub mod synth;
pub mod pipeline;
