//! Contracts for external language-model and embedding services, plus
//! deterministic stub implementations that keep the whole system testable
//! without any network access.
//!
//! The HTTP implementations speak the de-facto chat-completions/embeddings
//! REST shape, so any hosted or local model that serves it can act as a
//! provider. Stubs are pure functions: byte-identical output across runs
//! and platforms for identical input.

mod http;
mod stub;

pub use http::{HttpChatProvider, HttpEmbeddingProvider};
pub use stub::{
    stub_decide, stub_embed, CondensePolicy, LexiconReformulator, ScriptedChat, StubDecision,
    StubEmbedder, StubPipelineChat, ValidatorPolicy,
};

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Connection settings for an HTTP provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    /// Sent as a bearer token; never logged.
    #[serde(default)]
    pub api_key: String,
    pub model_name: String,
    /// Request timeout in seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Extra attempts after a transient transport failure.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    2
}

impl ProviderConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: String::new(),
            model_name: model_name.into(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_secs == 0 {
            return Err(Error::Config("provider timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// A chat completion request. Temperature defaults to 0.0 so evaluation
/// runs are repeatable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// Single user message at temperature 0.
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            messages: vec![ChatMessage {
                role: Role::User,
                content: content.into(),
            }],
            temperature: 0.0,
        }
    }

    /// Content of the last user message, if any. Stub providers key their
    /// behavior off this.
    pub fn last_user_content(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
}

/// A dense text embedding. Providers post-process every vector to unit L2
/// norm; empty input embeds to the all-zero vector.
///
/// In-memory vectors carry f64 components; the vector index quantizes them
/// to IEEE-754 f32 when it persists rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales to unit norm in place; a zero vector stays zero.
    pub fn normalize(&mut self) {
        let norm = self.l2_norm();
        if norm > 0.0 {
            for v in &mut self.values {
                *v /= norm;
            }
        }
    }

    /// f32 quantization, matching the vector index's stored precision.
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|v| *v as f32).collect()
    }
}

/// Dot product accumulated in f32, ascending dimension index. Dense-index
/// scoring goes through this, so persisted indexes rank identically across
/// platforms.
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for i in 0..a.len().min(b.len()) {
        acc += a[i] * b[i];
    }
    acc
}

/// Cosine between two unit-or-zero provider vectors, accumulated in f64
/// over ascending dimension index; 0 if either side is zero.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    if a.is_zero() || b.is_zero() {
        return 0.0;
    }
    let mut acc = 0.0f64;
    for i in 0..a.values.len().min(b.values.len()) {
        acc += a.values[i] * b.values[i];
    }
    acc
}

/// Chat completion service.
pub trait ChatProvider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse>;
}

/// Text embedding service.
pub trait EmbeddingProvider: Send + Sync {
    /// Embeds a batch, preserving order and cardinality. All vectors in a
    /// batch must share one dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    /// Identifies the embedding space. A vector index records this and
    /// refuses queries from a different embedder.
    fn provider_id(&self) -> String;

    /// Embedding dimension, when known ahead of the first call.
    fn dim(&self) -> Option<usize>;

    /// Convenience for a single text.
    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut batch = self.embed(&[text.to_string()])?;
        batch
            .pop()
            .ok_or_else(|| Error::Provider("embedding provider returned no vectors".into()))
    }
}

/// Validates a freshly produced batch: order-preserving length, one shared
/// dimension, unit-or-zero norms.
pub(crate) fn check_batch(texts: &[String], vectors: &[EmbeddingVector]) -> Result<()> {
    if vectors.len() != texts.len() {
        return Err(Error::Provider(format!(
            "embedding count mismatch: sent {} texts, received {} vectors",
            texts.len(),
            vectors.len()
        )));
    }
    if let Some(first) = vectors.first() {
        let dim = first.dim();
        for v in vectors {
            if v.dim() != dim {
                return Err(Error::Provider(format!(
                    "embedding dimension mismatch within batch: {} vs {dim}",
                    v.dim()
                )));
            }
            let norm = v.l2_norm();
            if !v.is_zero() && (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Provider(format!(
                    "embedding not unit-norm after post-processing (|v| = {norm})"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_is_left_to_right_f32() {
        let a = [1e8f32, 1.0, -1e8];
        let b = [1.0f32, 1.0, 1.0];
        // (1e8 + 1) collapses to 1e8 in f32 before -1e8 cancels it.
        assert_eq!(dot_f32(&a, &b), 0.0);
    }

    #[test]
    fn normalize_handles_zero() {
        let mut v = EmbeddingVector {
            values: vec![0.0, 0.0],
        };
        v.normalize();
        assert!(v.is_zero());

        let mut v = EmbeddingVector {
            values: vec![3.0, 4.0],
        };
        v.normalize();
        assert!((v.l2_norm() - 1.0).abs() < 1e-6);
    }
}
