//! Semantic retrieval: a chunk-aligned store of unit-norm embeddings with
//! exact (flat) cosine search and binary persistence.
//!
//! Search is an exhaustive scan — at desk scale that is fast, and it makes
//! oracle equivalence exact. Rows are unit-norm (or zero), so the cosine is
//! a plain dot product, accumulated in f32 over ascending dimension index;
//! a persisted index therefore ranks identically on every platform.
//!
//! On-disk format (little-endian throughout): magic `ACRV`, u32 version,
//! u32 row count, u32 dimension, `n * dim` IEEE-754 f32 values row-major,
//! the chunk ids one per line, and a trailing CRC32 of everything prior.

use std::collections::HashMap;
use std::path::Path;

use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::lexical::{rank_and_truncate, SearchHit};
use crate::providers::{dot_f32, EmbeddingProvider, EmbeddingVector};

const MAGIC: &[u8; 4] = b"ACRV";
const VERSION: u32 = 1;

/// How many chunk texts go to the embedder per call.
pub const EMBED_BATCH_SIZE: usize = 32;

/// Chunk-aligned matrix of unit-norm (or zero) embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    chunk_ids: Vec<String>,
    /// Row-major, `chunk_ids.len() * dim` values.
    matrix: Vec<f32>,
    /// Which embedder produced the rows; queries must come from the same
    /// one. Stored in the index directory manifest, not in the binary file.
    pub provider_id: String,
    row_of: HashMap<String, usize>,
}

impl VectorIndex {
    fn from_parts(
        dim: usize,
        chunk_ids: Vec<String>,
        matrix: Vec<f32>,
        provider_id: String,
    ) -> Result<Self> {
        if matrix.len() != dim * chunk_ids.len() {
            return Err(Error::Invalid(format!(
                "matrix size {} does not match {} rows of dim {dim}",
                matrix.len(),
                chunk_ids.len()
            )));
        }
        let mut row_of = HashMap::with_capacity(chunk_ids.len());
        for (i, id) in chunk_ids.iter().enumerate() {
            if row_of.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateChunkId(id.clone()));
            }
        }
        Ok(Self {
            dim,
            chunk_ids,
            matrix,
            provider_id,
            row_of,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.chunk_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_ids.is_empty()
    }

    pub fn chunk_ids(&self) -> &[String] {
        &self.chunk_ids
    }

    pub fn contains_chunk(&self, chunk_id: &str) -> bool {
        self.row_of.contains_key(chunk_id)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_for(&self, chunk_id: &str) -> Option<&[f32]> {
        self.row_of.get(chunk_id).map(|&i| self.row(i))
    }

    pub fn with_provider_id(mut self, provider_id: impl Into<String>) -> Self {
        self.provider_id = provider_id.into();
        self
    }
}

/// Embeds every chunk text (batched) and assembles the index. Row `i`
/// corresponds to `chunks[i]`.
pub fn build_vector_index(
    chunks: &[Chunk],
    embedder: &dyn EmbeddingProvider,
) -> Result<VectorIndex> {
    if chunks.is_empty() {
        return VectorIndex::from_parts(
            embedder.dim().unwrap_or(0),
            Vec::new(),
            Vec::new(),
            embedder.provider_id(),
        );
    }

    let mut dim: Option<usize> = None;
    let mut matrix: Vec<f32> = Vec::new();
    let mut chunk_ids: Vec<String> = Vec::with_capacity(chunks.len());

    for batch in chunks.chunks(EMBED_BATCH_SIZE) {
        let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
        let vectors = embedder.embed(&texts).map_err(|e| {
            Error::Provider(format!(
                "embedding failed for batch starting at chunk {:?}: {e}",
                batch[0].chunk_id
            ))
        })?;
        for (chunk, vector) in batch.iter().zip(vectors) {
            match dim {
                None => dim = Some(vector.dim()),
                Some(d) if d != vector.dim() => {
                    return Err(Error::Provider(format!(
                        "embedding dimension changed from {d} to {} at chunk {:?}",
                        vector.dim(),
                        chunk.chunk_id
                    )));
                }
                Some(_) => {}
            }
            chunk_ids.push(chunk.chunk_id.clone());
            matrix.extend(vector.to_f32());
        }
    }

    VectorIndex::from_parts(
        dim.unwrap_or(0),
        chunk_ids,
        matrix,
        embedder.provider_id(),
    )
}

fn check_provider(index: &VectorIndex, embedder: &dyn EmbeddingProvider) -> Result<()> {
    let actual = embedder.provider_id();
    if index.provider_id != actual {
        return Err(Error::ProviderMismatch {
            expected: index.provider_id.clone(),
            actual,
        });
    }
    Ok(())
}

/// Exact top-k cosine search over all rows.
pub fn search_dense(
    index: &VectorIndex,
    query: &str,
    embedder: &dyn EmbeddingProvider,
    k: usize,
) -> Result<Vec<SearchHit>> {
    check_provider(index, embedder)?;
    let query_vec = embedder.embed_one(query)?;
    Ok(search_dense_vector(index, &query_vec, k))
}

/// Search with a pre-computed query vector. The query is quantized to f32,
/// the same precision the rows are stored at.
pub fn search_dense_vector(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Vec<SearchHit> {
    let query = query.to_f32();
    let hits: Vec<SearchHit> = (0..index.len())
        .map(|i| SearchHit {
            chunk_id: index.chunk_ids[i].clone(),
            score: f64::from(dot_f32(index.row(i), &query)),
        })
        .collect();
    rank_and_truncate(hits, k)
}

/// Dense scores for a fixed candidate set, in candidate order. Fails when a
/// candidate is missing from the index (the two indexes were built over
/// different chunk sets).
pub fn score_candidates(
    index: &VectorIndex,
    query: &EmbeddingVector,
    candidates: &[String],
) -> Result<Vec<SearchHit>> {
    let query = query.to_f32();
    candidates
        .iter()
        .map(|chunk_id| {
            let row = index.row_for(chunk_id).ok_or_else(|| {
                Error::ChunkSetMismatch(format!(
                    "chunk {chunk_id:?} is not in the vector index"
                ))
            })?;
            Ok(SearchHit {
                chunk_id: chunk_id.clone(),
                score: f64::from(dot_f32(row, &query)),
            })
        })
        .collect()
}

/// Serializes the index. The same index always produces identical bytes.
pub fn save_vector_index(index: &VectorIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::with_capacity(16 + index.matrix.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(index.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    for value in &index.matrix {
        buf.extend_from_slice(&value.to_le_bytes());
    }
    for id in &index.chunk_ids {
        if id.contains('\n') {
            return Err(Error::Invalid(format!(
                "chunk id {id:?} contains a newline and cannot be persisted"
            )));
        }
        buf.extend_from_slice(id.as_bytes());
        buf.push(b'\n');
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads an index back. `provider_id` is not part of the binary format; the
/// caller restores it from the directory manifest (see
/// [`VectorIndex::with_provider_id`]).
pub fn load_vector_index(path: impl AsRef<Path>) -> Result<VectorIndex> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;

    if data.len() < 16 + 4 {
        return Err(Error::IndexFormat(format!(
            "truncated vector index: expected at least 20 bytes, found {}",
            data.len()
        )));
    }
    if &data[0..4] != MAGIC {
        return Err(Error::IndexFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::IndexFormat(format!(
            "unsupported vector index version {version}"
        )));
    }
    let n = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(data[12..16].try_into().unwrap()) as usize;

    let matrix_bytes = n
        .checked_mul(dim)
        .and_then(|cells| cells.checked_mul(4))
        .ok_or_else(|| Error::IndexFormat("matrix size overflows".into()))?;
    let matrix_end = 16 + matrix_bytes;
    if data.len() < matrix_end + 4 {
        return Err(Error::IndexFormat(format!(
            "truncated matrix section: expected {matrix_bytes} bytes, found {}",
            data.len().saturating_sub(16 + 4)
        )));
    }
    let matrix: Vec<f32> = data[16..matrix_end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();

    let ids_region = &data[matrix_end..data.len() - 4];
    let mut chunk_ids: Vec<String> = Vec::with_capacity(n);
    if !ids_region.is_empty() {
        if *ids_region.last().unwrap() != b'\n' {
            return Err(Error::IndexFormat("chunk id section is not newline-terminated".into()));
        }
        for raw in ids_region[..ids_region.len() - 1].split(|b| *b == b'\n') {
            let id = std::str::from_utf8(raw)
                .map_err(|_| Error::IndexFormat("chunk id is not valid UTF-8".into()))?;
            chunk_ids.push(id.to_string());
        }
    }
    if chunk_ids.len() != n {
        return Err(Error::IndexFormat(format!(
            "expected {n} chunk ids, found {}",
            chunk_ids.len()
        )));
    }

    // Structure is sound; now verify content integrity.
    let expected_crc = u32::from_le_bytes(data[data.len() - 4..].try_into().unwrap());
    if crc32fast::hash(&data[..data.len() - 4]) != expected_crc {
        return Err(Error::IndexFormat("checksum mismatch".into()));
    }

    VectorIndex::from_parts(dim, chunk_ids, matrix, String::new())
        .map_err(|e| Error::IndexFormat(e.to_string()))
}
