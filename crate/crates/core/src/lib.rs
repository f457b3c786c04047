//! Reference-free image caption evaluation by regeneration.
//!
//! A caption is scored by generating an image from it with a text-to-image
//! backend, embedding both the original and the generated image, and taking
//! the cosine similarity of the two embeddings. Around that cycle this crate
//! provides content-addressed caching of every inference stage, Kendall rank
//! correlation against human judgments, pairwise hallucination-detection
//! protocols and dataset adapters that produce validated JSONL manifests.

pub mod backends;
pub mod error;
pub mod ingest;
pub mod metric;
pub mod model;
pub mod pipeline;
pub mod protocols;
pub mod rank;

pub use error::{Error, Result, Stage};
