//! Retrieval sources the pipeline can fan out to.
//!
//! Anything implementing [`RetrievalSource`] can participate in
//! multi-source retrieval — the four built-ins here wrap the crate's
//! indexes, and callers may add custom sources (e.g. a live repository
//! client) by implementing the trait themselves.

use crate::agent::ReformulatedQuery;
use crate::corpus::Chunk;
use crate::dense::{search_dense, VectorIndex};
use crate::error::Result;
use crate::hybrid::{search_hybrid, HybridConfig};
use crate::kgraph::{expand_neighborhood, link_entities, triples_to_evidence, KnowledgeGraph};
use crate::lexical::{search_lexical, LexicalIndex, SearchHit};
use crate::providers::EmbeddingProvider;

pub const SOURCE_LEXICAL: &str = "lexical";
pub const SOURCE_DENSE: &str = "dense";
pub const SOURCE_HYBRID: &str = "hybrid";
pub const SOURCE_KGRAPH: &str = "kgraph";

/// What one source returns for one query.
#[derive(Debug, Clone, Default)]
pub struct SourceOutput {
    /// Ranked hits in the source's own order.
    pub ranked: Vec<SearchHit>,
    /// Synthetic chunks backing hits that have no corpus text (knowledge
    /// graph evidence); the pipeline registers these for text lookup.
    pub chunks: Vec<Chunk>,
}

/// One retrieval backend in the multi-source fan-out.
pub trait RetrievalSource {
    /// Stable identifier; must be unique within one pipeline run.
    fn source_id(&self) -> &str;

    fn retrieve(&self, rq: &ReformulatedQuery, k: usize) -> Result<SourceOutput>;
}

pub struct LexicalSource<'a> {
    pub index: &'a LexicalIndex,
}

impl RetrievalSource for LexicalSource<'_> {
    fn source_id(&self) -> &str {
        SOURCE_LEXICAL
    }

    fn retrieve(&self, rq: &ReformulatedQuery, k: usize) -> Result<SourceOutput> {
        Ok(SourceOutput {
            ranked: search_lexical(self.index, &rq.rewritten, k),
            chunks: Vec::new(),
        })
    }
}

pub struct DenseSource<'a> {
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn EmbeddingProvider,
}

impl RetrievalSource for DenseSource<'_> {
    fn source_id(&self) -> &str {
        SOURCE_DENSE
    }

    fn retrieve(&self, rq: &ReformulatedQuery, k: usize) -> Result<SourceOutput> {
        Ok(SourceOutput {
            ranked: search_dense(self.index, &rq.rewritten, self.embedder, k)?,
            chunks: Vec::new(),
        })
    }
}

pub struct HybridSource<'a> {
    pub lexical: &'a LexicalIndex,
    pub vectors: &'a VectorIndex,
    pub embedder: &'a dyn EmbeddingProvider,
    pub coarse_k: usize,
}

impl RetrievalSource for HybridSource<'_> {
    fn source_id(&self) -> &str {
        SOURCE_HYBRID
    }

    fn retrieve(&self, rq: &ReformulatedQuery, k: usize) -> Result<SourceOutput> {
        let cfg = HybridConfig {
            coarse_k: self.coarse_k,
            final_k: k,
            lambda: 0.0,
        };
        Ok(SourceOutput {
            ranked: search_hybrid(self.lexical, self.vectors, self.embedder, &rq.rewritten, &cfg)?,
            chunks: Vec::new(),
        })
    }
}

/// Links the reformulated query's key concepts to entities, expands their
/// neighborhood, and linearizes the selected triples into evidence chunks.
/// Hits are ordered by triple file order and scored `1/rank`.
pub struct KgraphSource<'a> {
    pub graph: &'a KnowledgeGraph,
    pub hops: usize,
}

impl RetrievalSource for KgraphSource<'_> {
    fn source_id(&self) -> &str {
        SOURCE_KGRAPH
    }

    fn retrieve(&self, rq: &ReformulatedQuery, k: usize) -> Result<SourceOutput> {
        let seeds = link_entities(self.graph, &rq.key_concepts);
        if seeds.is_empty() {
            return Ok(SourceOutput::default());
        }
        let mut triple_idxs = expand_neighborhood(self.graph, &seeds, self.hops)?;
        triple_idxs.truncate(k);
        let chunks = triples_to_evidence(self.graph, &triple_idxs);
        let ranked = chunks
            .iter()
            .enumerate()
            .map(|(rank, chunk)| SearchHit {
                chunk_id: chunk.chunk_id.clone(),
                score: 1.0 / (rank + 1) as f64,
            })
            .collect();
        Ok(SourceOutput { ranked, chunks })
    }
}
