//! Regulatory question answering: hybrid passage retrieval, reranking,
//! answer construction, and reference-free answer scoring.
//!
//! Model inference (embeddings, NLI, relevance, generation, training) sits
//! behind the capability traits in [`gateway`]; everything else runs here.

pub mod analysis;
pub mod answer;
pub mod corpus;
pub mod dense;
pub mod fusion;
pub mod gateway;
pub mod jsonl;
pub mod metrics;
pub mod ranked;
pub mod repass;
pub mod reranker;
pub mod sparse;
pub mod text;
pub mod triplet;

pub use corpus::{Corpus, Passage, Question};
pub use ranked::{PassageRef, RankedEntry, RankedList};
