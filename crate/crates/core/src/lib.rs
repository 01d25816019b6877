//! Procedural knowledge graph construction from a step database and an
//! unlabeled segment-feature corpus, graph-derived pseudo labels, adapter
//! pre-training and downstream evaluation.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dedup;
pub mod downstream;
pub mod error;
pub mod graph;
pub mod labeler;
pub mod matcher;
pub mod nn;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
