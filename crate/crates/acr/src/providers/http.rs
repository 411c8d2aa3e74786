//! HTTP clients for chat-completions and embeddings endpoints.
//!
//! Wire format:
//! - `POST {base_url}/chat/completions` with body `{model, messages,
//!   temperature}`; the reply text is read from
//!   `choices[0].message.content`.
//! - `POST {base_url}/embeddings` with body `{model, input}`; vectors are
//!   read from `data[i].embedding` and re-normalized client-side.
//!
//! Transient transport failures are retried up to `max_retries` times with
//! exponential backoff (base 0.5 s, factor 2). Non-2xx statuses are not
//! retried; they surface the status and a body excerpt.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::{
    check_batch, ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, EmbeddingVector,
    ProviderConfig, Role,
};

const BACKOFF_BASE: Duration = Duration::from_millis(500);

fn role_str(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireChatRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireChatResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    #[serde(default)]
    content: String,
}

#[derive(Serialize)]
struct WireEmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct WireEmbeddingResponse {
    #[serde(default)]
    data: Vec<WireEmbeddingRow>,
}

#[derive(Deserialize)]
struct WireEmbeddingRow {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

fn build_client(cfg: &ProviderConfig) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(cfg.timeout())
        .build()
        .map_err(|e| Error::Provider(format!("failed to build http client: {e}")))
}

/// POSTs JSON with retry-on-transport-error semantics shared by both
/// endpoints. Returns the raw response body on 2xx.
fn post_json(
    client: &reqwest::blocking::Client,
    cfg: &ProviderConfig,
    url: &str,
    body: &impl Serialize,
    backoff_base: Duration,
) -> Result<String> {
    let mut last_err = None;
    for attempt in 0..=cfg.max_retries {
        if attempt > 0 {
            std::thread::sleep(backoff_base * 2u32.pow(attempt - 1));
        }
        let mut request = client.post(url).json(body);
        if !cfg.api_key.is_empty() {
            request = request.bearer_auth(&cfg.api_key);
        }
        match request.send() {
            Ok(response) => {
                let status = response.status();
                let text = response
                    .text()
                    .map_err(|e| Error::Provider(format!("failed to read response body: {e}")))?;
                if !status.is_success() {
                    let excerpt: String = text.chars().take(300).collect();
                    return Err(Error::ProviderStatus {
                        status: status.as_u16(),
                        body: excerpt,
                    });
                }
                return Ok(text);
            }
            Err(e) => {
                last_err = Some(e);
            }
        }
    }
    Err(Error::Provider(format!(
        "transport failure after {} attempts to {url}: {}",
        cfg.max_retries + 1,
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Chat-completions client.
pub struct HttpChatProvider {
    cfg: ProviderConfig,
    client: reqwest::blocking::Client,
    backoff_base: Duration,
}

impl HttpChatProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self> {
        cfg.validate()?;
        let client = build_client(&cfg)?;
        Ok(Self {
            cfg,
            client,
            backoff_base: BACKOFF_BASE,
        })
    }

    /// Shrinks the retry backoff; only useful in tests.
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }
}

impl ChatProvider for HttpChatProvider {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse> {
        if req.messages.is_empty() {
            return Err(Error::Provider("chat request has no messages".into()));
        }
        let wire = WireChatRequest {
            model: &self.cfg.model_name,
            messages: req
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: role_str(m.role),
                    content: &m.content,
                })
                .collect(),
            temperature: req.temperature,
        };
        let body = post_json(
            &self.client,
            &self.cfg,
            &self.endpoint(),
            &wire,
            self.backoff_base,
        )?;
        let parsed: WireChatResponse = serde_json::from_str(&body)
            .map_err(|e| Error::Provider(format!("malformed chat response: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .unwrap_or_default();
        if text.is_empty() {
            return Err(Error::Provider("provider returned an empty completion".into()));
        }
        Ok(ChatResponse { text })
    }
}

/// Embeddings client. Vectors are L2-normalized after receipt so the rest
/// of the crate can rely on unit-or-zero rows.
pub struct HttpEmbeddingProvider {
    cfg: ProviderConfig,
    client: reqwest::blocking::Client,
    backoff_base: Duration,
    /// Expected dimension, when known up front.
    expected_dim: Option<usize>,
}

impl HttpEmbeddingProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self> {
        cfg.validate()?;
        let client = build_client(&cfg)?;
        Ok(Self {
            cfg,
            client,
            backoff_base: BACKOFF_BASE,
            expected_dim: None,
        })
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.expected_dim = Some(dim);
        self
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/embeddings", self.cfg.base_url.trim_end_matches('/'))
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Provider("embed requires at least one text".into()));
        }
        let wire = WireEmbeddingRequest {
            model: &self.cfg.model_name,
            input: texts,
        };
        let body = post_json(
            &self.client,
            &self.cfg,
            &self.endpoint(),
            &wire,
            self.backoff_base,
        )?;
        let parsed: WireEmbeddingResponse = serde_json::from_str(&body)
            .map_err(|e| Error::Provider(format!("malformed embedding response: {e}")))?;

        let mut rows = parsed.data;
        // Some servers return rows out of order; the index field is
        // authoritative when present.
        if rows.iter().all(|r| r.index.is_some()) {
            rows.sort_by_key(|r| r.index.unwrap_or(0));
        }
        let mut vectors: Vec<EmbeddingVector> = rows
            .into_iter()
            .map(|r| EmbeddingVector { values: r.embedding })
            .collect();
        for v in &mut vectors {
            v.normalize();
        }
        check_batch(texts, &vectors)?;
        Ok(vectors)
    }

    fn provider_id(&self) -> String {
        format!("http-{}", self.cfg.model_name)
    }

    fn dim(&self) -> Option<usize> {
        self.expected_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Serves one canned HTTP response on a fresh local port.
    fn one_shot_server(body: &'static str) -> (String, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let mut buf = [0u8; 8192];
                let _ = stream.read(&mut buf);
                let response = format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    body.len(),
                    body
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        (format!("http://{addr}"), handle)
    }

    #[test]
    fn chat_reads_first_completion() {
        let (base, handle) =
            one_shot_server(r#"{"choices":[{"message":{"role":"assistant","content":"option 2"}}]}"#);
        let provider = HttpChatProvider::new(ProviderConfig::new(base, "test-model")).unwrap();
        let resp = provider.chat(&ChatRequest::user("pick one")).unwrap();
        assert_eq!(resp.text, "option 2");
        handle.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint_fails_after_retries() {
        // Bind-then-drop to get a port nothing listens on.
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let mut cfg = ProviderConfig::new(format!("http://127.0.0.1:{port}"), "m");
        cfg.max_retries = 1;
        cfg.timeout_secs = 2;
        let provider = HttpChatProvider::new(cfg)
            .unwrap()
            .with_backoff_base(Duration::from_millis(1));
        let err = provider.chat(&ChatRequest::user("hello")).unwrap_err();
        match err {
            Error::Provider(msg) => assert!(msg.contains("after 2 attempts"), "{msg}"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn non_2xx_surfaces_status_and_body() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let mut buf = [0u8; 8192];
                let _ = stream.read(&mut buf);
                let body = r#"{"error":"model overloaded"}"#;
                let response = format!(
                    "HTTP/1.1 503 Service Unavailable\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    body.len(),
                    body
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        let provider =
            HttpChatProvider::new(ProviderConfig::new(format!("http://{addr}"), "m")).unwrap();
        let err = provider.chat(&ChatRequest::user("hello")).unwrap_err();
        match err {
            Error::ProviderStatus { status, body } => {
                assert_eq!(status, 503);
                assert!(body.contains("overloaded"));
            }
            other => panic!("unexpected error: {other}"),
        }
        handle.join().unwrap();
    }

    #[test]
    fn embeddings_are_renormalized_and_ordered() {
        let (base, handle) = one_shot_server(
            r#"{"data":[{"index":1,"embedding":[0.0,2.0]},{"index":0,"embedding":[3.0,0.0]}]}"#,
        );
        let provider = HttpEmbeddingProvider::new(ProviderConfig::new(base, "m")).unwrap();
        let vectors = provider
            .embed(&["a".to_string(), "b".to_string()])
            .unwrap();
        assert_eq!(vectors[0].values, vec![1.0, 0.0]);
        assert_eq!(vectors[1].values, vec![0.0, 1.0]);
        handle.join().unwrap();
    }
}
