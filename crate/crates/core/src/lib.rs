//! Knowledge-grounded task-oriented dialogue.
//!
//! The pipeline has three stages that share one small transformer
//! encoder implementation ([`neural`]):
//!
//! 1. [`detection`]: does the last user turn need unstructured knowledge?
//! 2. [`selection`]: which knowledge snippet answers it? Entity-level
//!    [`retrieval`] narrows the candidates, then a neural ranker (or a
//!    domain → entity → document cascade, or an ensemble of both) picks one.
//! 3. [`generation`]: a latent-variable generator with a knowledge copy
//!    mechanism writes the response, decoded with first-word-fixed beam
//!    search and reranked by knowledge similarity.

pub mod corpus;
pub mod detection;
pub mod error;
pub mod evalmetrics;
pub mod generation;
pub mod neural;
pub mod pipeline;
pub mod retrieval;
pub mod selection;
pub mod textsim;

pub use error::{Error, Result};
