//! Explainable session-based recommendation by hierarchical path reasoning
//! over a typed product knowledge graph.
//!
//! Pipeline: [`data_io`] sessionizes raw interactions, [`kg`] builds the
//! graph, [`kg_embed`] pretrains translational embeddings, [`trainer`] fits
//! the session encoder and both agents, and [`inference`] serves top-K lists
//! with explanation paths, scored by [`eval`].

pub mod agents;
pub mod config;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod inference;
pub mod kg;
pub mod kg_embed;
pub mod model;
pub mod pipeline;
pub mod rewards;
pub mod session_encoder;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
