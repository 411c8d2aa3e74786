//! Corpus loading and character-window chunking.
//!
//! A corpus is a UTF-8 file with one JSON record per line. Each document is
//! segmented into fixed-size character windows with a fixed overlap; the
//! resulting [`Chunk`]s are the unit of indexing, retrieval, and evidence
//! everywhere else in the crate.
//!
//! Offsets count Unicode scalar values, not bytes, so the chunking rule is
//! independent of how the source file was encoded.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Document ids under this prefix are reserved for knowledge-graph evidence
/// chunks (`kg#<n>`), which must never collide with corpus chunk ids.
pub const KG_DOC_ID: &str = "kg";

/// A source document as loaded from a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    /// Unique id within a corpus.
    pub doc_id: String,
    pub title: String,
    /// Full document text; may be empty (yields zero chunks).
    pub text: String,
    /// Free-form source tag, e.g. a spec series.
    pub source: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// An addressable slice of a document: the retrieval unit.
///
/// `text` is exactly the document's character range `[char_start, char_end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    /// `"{doc_id}#{ordinal}"`.
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    /// Offset of the first character, in Unicode scalar values.
    pub char_start: usize,
    /// Offset one past the last character.
    pub char_end: usize,
    pub text: String,
}

/// Window size and overlap for [`chunk_document`], both in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_size: 1000,
            overlap: 100,
        }
    }
}

impl ChunkingConfig {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self> {
        let cfg = Self {
            chunk_size,
            overlap,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Requires `0 <= overlap < chunk_size`.
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk_size must be positive".into()));
        }
        if self.overlap >= self.chunk_size {
            return Err(Error::Config(format!(
                "overlap ({}) must be smaller than chunk_size ({})",
                self.overlap, self.chunk_size
            )));
        }
        Ok(())
    }

    /// Distance between the starts of consecutive chunks.
    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }
}

/// Loads a line-delimited corpus file. One [`Document`] per line, in file
/// order. Duplicate `doc_id`s and the reserved id `"kg"` are rejected with
/// the offending line number.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);

    let mut docs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, lineno, format!("malformed record: {e}")))?;
        if doc.doc_id.is_empty() {
            return Err(Error::format(path, lineno, "doc_id must be nonempty"));
        }
        if doc.doc_id == KG_DOC_ID {
            return Err(Error::format(
                path,
                lineno,
                format!("doc_id {KG_DOC_ID:?} is reserved for knowledge-graph evidence"),
            ));
        }
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::format(
                path,
                lineno,
                format!("duplicate doc_id {:?}", doc.doc_id),
            ));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Segments a document into overlapping character windows.
///
/// Chunk starts advance by `cfg.stride()`; every chunk except possibly the
/// last spans exactly `chunk_size` characters, and the last ends exactly at
/// the text length. An empty text yields no chunks; a text no longer than
/// `chunk_size` yields exactly one.
pub fn chunk_document(doc: &Document, cfg: &ChunkingConfig) -> Result<Vec<Chunk>> {
    cfg.validate()?;
    if doc.text.is_empty() {
        return Ok(Vec::new());
    }

    // Byte offset of every character boundary, so slices stay O(1).
    let mut boundaries: Vec<usize> = doc.text.char_indices().map(|(b, _)| b).collect();
    boundaries.push(doc.text.len());
    let n_chars = boundaries.len() - 1;

    let stride = cfg.stride();
    let mut chunks = Vec::new();
    let mut ordinal = 0usize;
    loop {
        let char_start = ordinal * stride;
        let char_end = usize::min(char_start + cfg.chunk_size, n_chars);
        let text = doc.text[boundaries[char_start]..boundaries[char_end]].to_string();
        chunks.push(Chunk {
            chunk_id: format!("{}#{}", doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            ordinal,
            char_start,
            char_end,
            text,
        });
        if char_end == n_chars {
            break;
        }
        ordinal += 1;
    }
    Ok(chunks)
}

/// Chunks every document with the same config, concatenating in corpus order.
pub fn chunk_corpus(docs: &[Document], cfg: &ChunkingConfig) -> Result<Vec<Chunk>> {
    let mut out = Vec::new();
    for doc in docs {
        out.extend(chunk_document(doc, cfg)?);
    }
    Ok(out)
}

/// Closed-form chunk count for a text of `n_chars` characters.
pub fn expected_chunk_count(n_chars: usize, cfg: &ChunkingConfig) -> usize {
    if n_chars == 0 {
        0
    } else if n_chars <= cfg.chunk_size {
        1
    } else {
        // ceil((n - size) / stride) + 1
        (n_chars - cfg.chunk_size).div_ceil(cfg.stride()) + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn doc(text: &str) -> Document {
        Document {
            doc_id: "d".into(),
            title: String::new(),
            text: text.into(),
            source: String::new(),
            metadata: BTreeMap::new(),
        }
    }

    fn cfg(size: usize, overlap: usize) -> ChunkingConfig {
        ChunkingConfig {
            chunk_size: size,
            overlap,
        }
    }

    #[test]
    fn empty_text_yields_no_chunks() {
        assert!(chunk_document(&doc(""), &cfg(1000, 100)).unwrap().is_empty());
    }

    #[test]
    fn exact_window_is_single_chunk() {
        let text: String = std::iter::repeat('x').take(1000).collect();
        let chunks = chunk_document(&doc(&text), &cfg(1000, 100)).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!((chunks[0].char_start, chunks[0].char_end), (0, 1000));
        assert_eq!(chunks[0].chunk_id, "d#0");
    }

    #[test]
    fn stride_arithmetic_1900() {
        let text: String = std::iter::repeat('x').take(1900).collect();
        let chunks = chunk_document(&doc(&text), &cfg(1000, 100)).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| (c.char_start, c.char_end)).collect();
        assert_eq!(spans, vec![(0, 1000), (900, 1900)]);
    }

    #[test]
    fn stride_arithmetic_2500() {
        let text: String = std::iter::repeat('x').take(2500).collect();
        let chunks = chunk_document(&doc(&text), &cfg(1000, 100)).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| (c.char_start, c.char_end)).collect();
        assert_eq!(spans, vec![(0, 1000), (900, 1900), (1800, 2500)]);
    }

    #[test]
    fn offsets_count_scalar_values_not_bytes() {
        // Multi-byte characters: é is 2 bytes, 好 is 3.
        let text = "é好".repeat(30); // 60 chars, 150 bytes
        let chunks = chunk_document(&doc(&text), &cfg(50, 10)).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!((chunks[0].char_start, chunks[0].char_end), (0, 50));
        assert_eq!((chunks[1].char_start, chunks[1].char_end), (40, 60));
        assert_eq!(chunks[0].text.chars().count(), 50);
        assert_eq!(chunks[1].text.chars().count(), 20);
    }

    #[test]
    fn document_shorter_than_overlap_is_one_chunk() {
        let chunks = chunk_document(&doc("abc"), &cfg(1000, 100)).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, "abc");
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(cfg(100, 100).validate().is_err());
        assert!(cfg(0, 0).validate().is_err());
        assert!(cfg(100, 99).validate().is_ok());
    }

    #[test]
    fn load_corpus_empty_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.flush().unwrap();
        assert!(load_corpus(f.path()).unwrap().is_empty());
    }

    #[test]
    fn load_corpus_preserves_order() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"doc_id":"a","title":"A","text":"alpha","source":"s","metadata":{{}}}}"#
        )
        .unwrap();
        writeln!(
            f,
            r#"{{"doc_id":"b","title":"B","text":"beta","source":"s","metadata":{{"k":"v"}}}}"#
        )
        .unwrap();
        let docs = load_corpus(f.path()).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].doc_id, "a");
        assert_eq!(docs[1].doc_id, "b");
        assert_eq!(docs[1].metadata["k"], "v");
    }

    #[test]
    fn load_corpus_duplicate_doc_id_names_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for id in ["a", "b", "a"] {
            writeln!(
                f,
                r#"{{"doc_id":"{id}","title":"","text":"","source":"","metadata":{{}}}}"#
            )
            .unwrap();
        }
        let err = load_corpus(f.path()).unwrap_err();
        match err {
            Error::Format { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate"), "{message}");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn load_corpus_missing_file() {
        assert!(matches!(
            load_corpus("/nonexistent/corpus.jsonl"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn load_corpus_malformed_line_names_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"doc_id":"a","title":"","text":"","source":"","metadata":{{}}}}"#
        )
        .unwrap();
        writeln!(f, "not json").unwrap();
        let err = load_corpus(f.path()).unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn load_corpus_rejects_reserved_kg_id() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"doc_id":"kg","title":"","text":"","source":"","metadata":{{}}}}"#
        )
        .unwrap();
        assert!(load_corpus(f.path()).is_err());
    }

    proptest! {
        /// Chunks tile the document: no gaps, full coverage, stated overlap,
        /// and concatenation with overlaps deduplicated reconstructs the text.
        #[test]
        fn chunks_tile_and_roundtrip(
            len in 0usize..4000,
            chunk_size in 1usize..400,
            overlap_frac in 0.0f64..1.0,
        ) {
            let overlap = ((chunk_size as f64 - 1.0) * overlap_frac) as usize;
            let cfg = cfg(chunk_size, overlap);
            // Cycle through some multi-byte chars to exercise offsets.
            let alphabet: Vec<char> = "abcé好 α9".chars().collect();
            let text: String = (0..len).map(|i| alphabet[i % alphabet.len()]).collect();
            let chunks = chunk_document(&doc(&text), &cfg).unwrap();

            prop_assert_eq!(chunks.len(), expected_chunk_count(len, &cfg));
            if len == 0 {
                return Ok(());
            }

            // Coverage and stride.
            prop_assert_eq!(chunks[0].char_start, 0);
            prop_assert_eq!(chunks.last().unwrap().char_end, len);
            for w in chunks.windows(2) {
                prop_assert_eq!(w[1].char_start, w[0].char_start + cfg.stride());
                prop_assert!(w[1].char_start <= w[0].char_end); // no gaps
                prop_assert_eq!(w[0].char_end - w[1].char_start, overlap);
            }

            // Round-trip: drop each chunk's leading overlap and concatenate.
            let mut rebuilt = String::new();
            for (i, c) in chunks.iter().enumerate() {
                if i == 0 {
                    rebuilt.push_str(&c.text);
                } else {
                    let skip = chunks[i - 1].char_end - c.char_start;
                    rebuilt.extend(c.text.chars().skip(skip));
                }
            }
            prop_assert_eq!(rebuilt, text);
        }
    }
}
