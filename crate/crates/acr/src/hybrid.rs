//! Two-stage hybrid retrieval: a lexical coarse filter followed by a dense
//! re-rank of the surviving candidates.
//!
//! The final score is the dense score alone by default; an optional
//! interpolation weight mixes the stage-1 lexical score back in.

use serde::{Deserialize, Serialize};

use crate::dense::{score_candidates, VectorIndex};
use crate::error::{Error, Result};
use crate::lexical::{rank_and_truncate, search_lexical, LexicalIndex, SearchHit};
use crate::providers::EmbeddingProvider;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HybridConfig {
    /// Stage-1 candidate count.
    pub coarse_k: usize,
    /// Results returned after the re-rank.
    pub final_k: usize,
    /// Interpolation weight: `final = lambda * lexical + (1 - lambda) * dense`.
    /// 0 (the default) is a pure re-rank.
    pub lambda: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            coarse_k: 100,
            final_k: 10,
            lambda: 0.0,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.final_k < 1 {
            return Err(Error::Config("final_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Lexical coarse filter, dense re-rank. Every returned chunk comes from
/// the stage-1 candidate list; a query with no lexical matches returns
/// nothing.
pub fn search_hybrid(
    lexical: &LexicalIndex,
    vectors: &VectorIndex,
    embedder: &dyn EmbeddingProvider,
    query: &str,
    cfg: &HybridConfig,
) -> Result<Vec<SearchHit>> {
    cfg.validate()?;
    let coarse = search_lexical(lexical, query, cfg.coarse_k);
    if coarse.is_empty() {
        return Ok(Vec::new());
    }

    let actual = embedder.provider_id();
    if vectors.provider_id != actual {
        return Err(Error::ProviderMismatch {
            expected: vectors.provider_id.clone(),
            actual,
        });
    }
    let query_vec = embedder.embed_one(query)?;
    let candidate_ids: Vec<String> = coarse.iter().map(|h| h.chunk_id.clone()).collect();
    let dense_scores = score_candidates(vectors, &query_vec, &candidate_ids)?;

    let rescored: Vec<SearchHit> = coarse
        .iter()
        .zip(dense_scores)
        .map(|(lex, dense)| SearchHit {
            chunk_id: dense.chunk_id,
            score: cfg.lambda * lex.score + (1.0 - cfg.lambda) * dense.score,
        })
        .collect();
    Ok(rank_and_truncate(rescored, cfg.final_k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Chunk;
    use crate::dense::{build_vector_index, search_dense_vector};
    use crate::lexical::build_lexical_index;
    use crate::providers::StubEmbedder;
    use std::collections::BTreeSet;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.to_string(),
            doc_id: "d".into(),
            ordinal: 0,
            char_start: 0,
            char_end: text.chars().count(),
            text: text.to_string(),
        }
    }

    fn fixture() -> Vec<Chunk> {
        vec![
            chunk("a#0", "latency budget for motion control"),
            chunk("b#0", "latency and jitter in transport"),
            chunk("c#0", "paging cycle configuration"),
            chunk("d#0", "spectrum sharing latency tradeoffs"),
        ]
    }

    #[test]
    fn no_lexical_match_is_empty() {
        let chunks = fixture();
        let embedder = StubEmbedder::new(64);
        let lex = build_lexical_index(&chunks).unwrap();
        let vec = build_vector_index(&chunks, &embedder).unwrap();
        let hits = search_hybrid(&lex, &vec, &embedder, "zzz qqq", &HybridConfig::default())
            .unwrap();
        assert!(hits.is_empty());
    }

    #[test]
    fn result_is_subset_of_coarse_set() {
        let chunks = fixture();
        let embedder = StubEmbedder::new(64);
        let lex = build_lexical_index(&chunks).unwrap();
        let vec = build_vector_index(&chunks, &embedder).unwrap();
        let cfg = HybridConfig {
            coarse_k: 2,
            final_k: 10,
            lambda: 0.0,
        };
        let coarse: BTreeSet<String> = search_lexical(&lex, "latency budget", 2)
            .into_iter()
            .map(|h| h.chunk_id)
            .collect();
        let hits = search_hybrid(&lex, &vec, &embedder, "latency budget", &cfg).unwrap();
        assert!(!hits.is_empty());
        for hit in &hits {
            assert!(coarse.contains(&hit.chunk_id));
        }
    }

    #[test]
    fn full_coarse_set_equals_dense_over_matched() {
        let chunks = fixture();
        let embedder = StubEmbedder::new(64);
        let lex = build_lexical_index(&chunks).unwrap();
        let vec = build_vector_index(&chunks, &embedder).unwrap();
        let query = "latency budget for paging";
        let cfg = HybridConfig {
            coarse_k: chunks.len(),
            final_k: 3,
            lambda: 0.0,
        };
        let hits = search_hybrid(&lex, &vec, &embedder, query, &cfg).unwrap();

        // Oracle: dense ranking restricted to the lexically matched ids.
        let matched: BTreeSet<String> = search_lexical(&lex, query, chunks.len())
            .into_iter()
            .map(|h| h.chunk_id)
            .collect();
        let query_vec = embedder.embed_one(query).unwrap();
        let expected: Vec<SearchHit> = search_dense_vector(&vec, &query_vec, chunks.len())
            .into_iter()
            .filter(|h| matched.contains(&h.chunk_id))
            .take(cfg.final_k)
            .collect();
        assert_eq!(hits, expected);
    }

    #[test]
    fn final_k_saturates_at_coarse_set_size() {
        let chunks = fixture();
        let embedder = StubEmbedder::new(64);
        let lex = build_lexical_index(&chunks).unwrap();
        let vec = build_vector_index(&chunks, &embedder).unwrap();
        let cfg = HybridConfig {
            coarse_k: 100,
            final_k: 50,
            lambda: 0.0,
        };
        let hits = search_hybrid(&lex, &vec, &embedder, "jitter", &cfg).unwrap();
        assert_eq!(hits.len(), 1); // only one chunk mentions jitter
    }

    #[test]
    fn mismatched_chunk_sets_detected() {
        let chunks = fixture();
        let embedder = StubEmbedder::new(64);
        let lex = build_lexical_index(&chunks).unwrap();
        let vec = build_vector_index(&chunks[..2], &embedder).unwrap();
        let err = search_hybrid(
            &lex,
            &vec,
            &embedder,
            "paging cycle",
            &HybridConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ChunkSetMismatch(_)));
    }
}
