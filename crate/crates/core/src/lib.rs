//! Corpus analytics for measuring the partisan lean of LLM-generated news
//! summaries.
//!
//! A corpus holds news articles and, per article and generator model, three
//! summaries: a neutral one and one each conditioned toward Democrat and
//! Republican viewpoints. On top of it the crate computes lexical bias
//! scores, classifier-based polarization indices and cross-model
//! monoculture measures, and renders them as tables and heatmaps.

pub mod corpus;
pub mod error;
pub mod hashing;
pub mod lexicon;
pub mod matrix;
pub mod monoculture;
pub mod report;
pub mod separability;
pub mod summarygen;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
