//! Agentic contextual retrieval for standards corpora.
//!
//! This crate implements a retrieval-augmented question-answering engine
//! aimed at telecom standards documents. It provides five interchangeable
//! retrieval strategies — keyword (TF-IDF + Boolean), dense-embedding,
//! two-stage hybrid, knowledge-graph, and a four-step agentic pipeline — a
//! provider abstraction over chat and embedding services with fully
//! deterministic stubs, and an evaluation harness for multiple-choice QA
//! sets.
//!
//! The pipeline runs four stages per query: reformulate the query, retrieve
//! from multiple sources and fuse by reciprocal rank, aggregate evidence
//! under a character budget, then decide with confidence-gated
//! self-validation.

pub mod agent;
pub mod corpus;
pub mod dense;
pub mod error;
pub mod evalx;
pub mod hybrid;
pub mod kgraph;
pub mod lexical;
pub mod protocol;
pub mod providers;

pub use error::{Error, Result};
pub use lexical::SearchHit;

#[cfg(test)]
pub(crate) mod testutil {
    use crate::corpus::Chunk;

    /// Standalone chunk for index tests.
    pub(crate) fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.to_string(),
            doc_id: id.split('#').next().unwrap_or(id).to_string(),
            ordinal: 0,
            char_start: 0,
            char_end: text.chars().count(),
            text: text.to_string(),
        }
    }
}
