//! Keyword retrieval: tokenizer, TF-IDF vector-space ranking with cosine
//! similarity, and a Boolean query language.
//!
//! Term weights use raw term frequency and a smoothed inverse document
//! frequency, `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, which is never
//! smaller than 1, so ubiquitous terms still contribute and nothing divides
//! by zero.

mod boolean;

pub use boolean::{eval_boolean, parse_boolean, BooleanExpr};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::error::{Error, Result};

/// Splits text into lowercase tokens.
///
/// Every non-alphanumeric scalar value is a separator; empty pieces are
/// dropped. No stopword removal happens here.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lower in ch.to_lowercase() {
                current.push(lower);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token counts for one piece of text.
pub fn term_counts(text: &str) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for tok in tokenize(text) {
        *counts.entry(tok).or_insert(0.0) += 1.0;
    }
    counts
}

/// Inverted index with the statistics needed for TF-IDF cosine scoring.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LexicalIndex {
    /// term -> (chunk_id, term frequency), sorted by chunk_id.
    postings: BTreeMap<String, Vec<(String, f64)>>,
    /// chunk_id -> L2 norm of the chunk's TF-IDF vector. Holds every indexed
    /// chunk, including token-less ones (norm 0), so it doubles as the
    /// chunk-id universe.
    chunk_norms: BTreeMap<String, f64>,
}

/// One ranked search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
}

/// Sorts hits by descending score, ties broken by ascending chunk id, and
/// truncates to `k`.
pub(crate) fn rank_and_truncate(mut hits: Vec<SearchHit>, k: usize) -> Vec<SearchHit> {
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are never NaN")
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    hits.truncate(k);
    hits
}

impl LexicalIndex {
    pub fn n_chunks(&self) -> usize {
        self.chunk_norms.len()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Smoothed inverse document frequency; at least 1 for any term.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_chunks() as f64;
        let df = self.doc_freq(term) as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    pub fn postings(&self, term: &str) -> Option<&[(String, f64)]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn chunk_norm(&self, chunk_id: &str) -> Option<f64> {
        self.chunk_norms.get(chunk_id).copied()
    }

    /// All indexed chunk ids, ascending.
    pub fn chunk_ids(&self) -> impl Iterator<Item = &str> {
        self.chunk_norms.keys().map(String::as_str)
    }

    pub fn contains_chunk(&self, chunk_id: &str) -> bool {
        self.chunk_norms.contains_key(chunk_id)
    }
}

/// Builds the inverted index over `chunks`. Chunk ids must be unique.
pub fn build_lexical_index(chunks: &[Chunk]) -> Result<LexicalIndex> {
    let mut term_freqs: HashMap<&str, Vec<(String, f64)>> = HashMap::new();
    let mut chunk_terms: Vec<(String, BTreeMap<String, f64>)> = Vec::with_capacity(chunks.len());
    let mut seen: HashSet<&str> = HashSet::new();

    for chunk in chunks {
        if !seen.insert(&chunk.chunk_id) {
            return Err(Error::DuplicateChunkId(chunk.chunk_id.clone()));
        }
        chunk_terms.push((chunk.chunk_id.clone(), term_counts(&chunk.text)));
    }
    for (chunk_id, counts) in &chunk_terms {
        for (term, tf) in counts {
            term_freqs
                .entry(term.as_str())
                .or_default()
                .push((chunk_id.clone(), *tf));
        }
    }

    let mut postings: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (term, mut list) in term_freqs {
        list.sort_by(|a, b| a.0.cmp(&b.0));
        postings.insert(term.to_string(), list);
    }

    let mut index = LexicalIndex {
        postings,
        chunk_norms: chunk_terms
            .iter()
            .map(|(id, _)| (id.clone(), 0.0))
            .collect(),
    };
    // Norms need the final doc frequencies, so fill them in afterwards.
    for (chunk_id, counts) in &chunk_terms {
        let norm_sq: f64 = counts
            .iter()
            .map(|(term, tf)| {
                let w = tf * index.idf(term);
                w * w
            })
            .sum();
        index.chunk_norms.insert(chunk_id.clone(), norm_sq.sqrt());
    }
    Ok(index)
}

/// TF-IDF cosine search.
///
/// The query is weighted with the same tf·idf scheme as the chunks (terms
/// absent from the index get the doc-frequency-0 idf and still count toward
/// the query norm). Zero-score chunks are excluded; ties break by ascending
/// chunk id.
pub fn search_lexical(index: &LexicalIndex, query: &str, k: usize) -> Vec<SearchHit> {
    let query_counts = term_counts(query);
    if query_counts.is_empty() || index.n_chunks() == 0 {
        return Vec::new();
    }

    let mut query_norm_sq = 0.0;
    let mut dots: BTreeMap<&str, f64> = BTreeMap::new();
    for (term, tf_q) in &query_counts {
        let idf = index.idf(term);
        let w_q = tf_q * idf;
        query_norm_sq += w_q * w_q;
        if let Some(postings) = index.postings(term) {
            for (chunk_id, tf_c) in postings {
                *dots.entry(chunk_id).or_insert(0.0) += w_q * tf_c * idf;
            }
        }
    }
    let query_norm = query_norm_sq.sqrt();

    let hits: Vec<SearchHit> = dots
        .into_iter()
        .filter_map(|(chunk_id, dot)| {
            let norm = index.chunk_norm(chunk_id)?;
            let score = dot / (query_norm * norm);
            (score != 0.0).then(|| SearchHit {
                chunk_id: chunk_id.to_string(),
                score,
            })
        })
        .collect();
    rank_and_truncate(hits, k)
}

const LEXICAL_FORMAT: &str = "acr-lexical";
const LEXICAL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LexicalLine {
    Header {
        format: String,
        version: u32,
        n_chunks: usize,
    },
    Chunk {
        id: String,
        norm: f64,
    },
    Term {
        term: String,
        postings: Vec<(String, f64)>,
    },
}

/// Writes the index as versioned, line-delimited records. Output is
/// byte-deterministic: chunks then terms, each in ascending order.
pub fn save_lexical_index(index: &LexicalIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |line: &LexicalLine| -> Result<()> {
        let json = serde_json::to_string(line).expect("index lines serialize");
        writeln!(w, "{json}").map_err(|e| Error::io(path, e))
    };
    emit(&LexicalLine::Header {
        format: LEXICAL_FORMAT.into(),
        version: LEXICAL_VERSION,
        n_chunks: index.n_chunks(),
    })?;
    for (id, norm) in &index.chunk_norms {
        emit(&LexicalLine::Chunk {
            id: id.clone(),
            norm: *norm,
        })?;
    }
    for (term, postings) in &index.postings {
        emit(&LexicalLine::Term {
            term: term.clone(),
            postings: postings.clone(),
        })?;
    }
    Ok(())
}

pub fn load_lexical_index(path: impl AsRef<Path>) -> Result<LexicalIndex> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);

    let mut index = LexicalIndex::default();
    let mut declared_chunks = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LexicalLine = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, lineno, format!("malformed index line: {e}")))?;
        match record {
            LexicalLine::Header {
                format,
                version,
                n_chunks,
            } => {
                if lineno != 1 {
                    return Err(Error::format(path, lineno, "header must be the first line"));
                }
                if format != LEXICAL_FORMAT {
                    return Err(Error::IndexFormat(format!(
                        "bad magic: expected {LEXICAL_FORMAT:?}, found {format:?}"
                    )));
                }
                if version != LEXICAL_VERSION {
                    return Err(Error::IndexFormat(format!(
                        "unsupported lexical index version {version}"
                    )));
                }
                declared_chunks = Some(n_chunks);
            }
            LexicalLine::Chunk { id, norm } => {
                if declared_chunks.is_none() {
                    return Err(Error::format(path, lineno, "record before header"));
                }
                index.chunk_norms.insert(id, norm);
            }
            LexicalLine::Term { term, postings } => {
                if declared_chunks.is_none() {
                    return Err(Error::format(path, lineno, "record before header"));
                }
                index.postings.insert(term, postings);
            }
        }
    }
    match declared_chunks {
        None => Err(Error::IndexFormat("empty lexical index file".into())),
        Some(n) if n != index.n_chunks() => Err(Error::IndexFormat(format!(
            "truncated lexical index: header declares {n} chunks, found {}",
            index.n_chunks()
        ))),
        Some(_) => Ok(index),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::chunk;
    use std::collections::BTreeSet;

    #[test]
    fn tokenize_splits_on_non_alphanumerics() {
        assert_eq!(
            tokenize("Ultra-Reliable Low-Latency"),
            vec!["ultra", "reliable", "low", "latency"]
        );
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \t--\n").is_empty());
    }

    #[test]
    fn tokenize_keeps_digits_and_case_folds() {
        assert_eq!(tokenize("5G NR"), vec!["5g", "nr"]);
    }

    #[test]
    fn empty_index() {
        let index = build_lexical_index(&[]).unwrap();
        assert_eq!(index.n_chunks(), 0);
        assert!(search_lexical(&index, "anything", 5).is_empty());
    }

    #[test]
    fn single_chunk_statistics() {
        let index = build_lexical_index(&[chunk("c#0", "a a b")]).unwrap();
        assert_eq!(index.n_chunks(), 1);
        assert_eq!(index.doc_freq("a"), 1);
        assert_eq!(index.doc_freq("b"), 1);
        // idf = ln(2/2) + 1 = 1 for both terms.
        assert!((index.idf("a") - 1.0).abs() < 1e-12);
        let postings = index.postings("a").unwrap();
        assert_eq!(postings, &[("c#0".to_string(), 2.0)]);
    }

    #[test]
    fn ubiquitous_term_idf_floors_at_one() {
        let chunks = [chunk("a#0", "x y"), chunk("b#0", "x z"), chunk("c#0", "x")];
        let index = build_lexical_index(&chunks).unwrap();
        // term in every chunk of a 3-chunk corpus: ln(4/4) + 1 = 1.
        assert!((index.idf("x") - 1.0).abs() < 1e-12);
        assert!(index.idf("y") > 1.0);
    }

    #[test]
    fn duplicate_chunk_id_rejected() {
        let chunks = [chunk("c#0", "a"), chunk("c#0", "b")];
        assert!(matches!(
            build_lexical_index(&chunks),
            Err(Error::DuplicateChunkId(_))
        ));
    }

    #[test]
    fn unmatched_query_is_empty() {
        let index = build_lexical_index(&[chunk("c#0", "alpha beta")]).unwrap();
        assert!(search_lexical(&index, "gamma delta", 10).is_empty());
        assert!(search_lexical(&index, "", 10).is_empty());
    }

    #[test]
    fn self_similarity_scores_one() {
        let text = "urllc targets one millisecond latency budgets";
        let index = build_lexical_index(&[chunk("c#0", text)]).unwrap();
        let hits = search_lexical(&index, text, 3);
        assert_eq!(hits.len(), 1);
        assert!((hits[0].score - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn scores_bounded_and_sorted() {
        let chunks = [
            chunk("a#0", "latency latency jitter"),
            chunk("b#0", "latency throughput"),
            chunk("c#0", "throughput only here"),
        ];
        let index = build_lexical_index(&chunks).unwrap();
        let hits = search_lexical(&index, "latency", 10);
        assert_eq!(hits.len(), 2);
        for hit in &hits {
            assert!(hit.score > 0.0 && hit.score <= 1.0 + 1e-12);
        }
        assert!(hits[0].score >= hits[1].score);
    }

    #[test]
    fn adding_unrelated_chunk_keeps_result_set() {
        let mut chunks = vec![
            chunk("a#0", "handover latency budget"),
            chunk("b#0", "latency jitter"),
            chunk("c#0", "paging cycle"),
        ];
        let index = build_lexical_index(&chunks).unwrap();
        let before: BTreeSet<String> = search_lexical(&index, "latency budget", 100)
            .into_iter()
            .map(|h| h.chunk_id)
            .collect();
        chunks.push(chunk("d#0", "entirely unrelated beamforming text"));
        let index = build_lexical_index(&chunks).unwrap();
        let after: BTreeSet<String> = search_lexical(&index, "latency budget", 100)
            .into_iter()
            .map(|h| h.chunk_id)
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn save_load_roundtrip() {
        let chunks = [
            chunk("a#0", "alpha beta beta"),
            chunk("b#0", "beta gamma"),
            chunk("empty#0", ""),
        ];
        let index = build_lexical_index(&chunks).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lexical");
        save_lexical_index(&index, &path).unwrap();
        let loaded = load_lexical_index(&path).unwrap();
        assert_eq!(index, loaded);

        // Deterministic bytes across two saves.
        let path2 = dir.path().join("lexical2");
        save_lexical_index(&index, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn load_rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lexical");
        std::fs::write(
            &path,
            "{\"type\":\"header\",\"format\":\"other\",\"version\":1,\"n_chunks\":0}\n",
        )
        .unwrap();
        assert!(matches!(
            load_lexical_index(&path),
            Err(Error::IndexFormat(_))
        ));
    }
}
