//! Temporal action spotting on precomputed multimodal embeddings.
//!
//! The pipeline ingests per-timeline feature streams (visual embeddings plus
//! a spectrogram-like audio stream), trains a transformer encoder-decoder
//! that classifies and temporally refines dense anchors, and evaluates
//! spotted actions with tight/loose Average-mAP.

pub mod anchors;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod types;

pub use error::{AstraError, Result};
