//! Deterministic provider stubs.
//!
//! Everything here is a pure function of its input: no clock, no RNG, no
//! I/O. The stub embedder is a hashed signed bag-of-words (FNV-1a, exactly
//! specified), the stub decision rule is token overlap against the
//! evidence, and [`StubPipelineChat`] serves entire pipeline runs by
//! parsing the same labeled prompts a hosted model would receive.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lexical::tokenize;
use crate::protocol::{self, parse_sections, section};
use crate::providers::{check_batch, ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, EmbeddingVector};

const FNV_OFFSET: u64 = 14695981039346656037;
const FNV_PRIME: u64 = 1099511628211;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Hashed signed bag-of-words embedding.
///
/// Each token lands at index `FNV1a64(token) mod dim` with sign +1 when
/// `FNV1a64(token ++ 0xFF)` is even, -1 otherwise; the accumulated counts
/// are L2-normalized. Text with no tokens (or fully cancelled counts)
/// embeds to the zero vector.
pub fn stub_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 1, "embedding dimension must be at least 1");
    let mut counts = vec![0i64; dim];
    let mut any = false;
    for token in tokenize(text) {
        let bytes = token.as_bytes();
        let slot = (fnv1a64(bytes) % dim as u64) as usize;
        let mut sign_input = bytes.to_vec();
        sign_input.push(0xFF);
        let sign = if fnv1a64(&sign_input) % 2 == 0 { 1 } else { -1 };
        counts[slot] += sign;
        any = true;
    }
    if !any {
        return EmbeddingVector {
            values: vec![0.0; dim],
        };
    }
    let norm = counts
        .iter()
        .map(|c| (*c as f64) * (*c as f64))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        // Signs cancelled exactly; treat like empty input.
        return EmbeddingVector {
            values: vec![0.0; dim],
        };
    }
    EmbeddingVector {
        values: counts.iter().map(|c| *c as f64 / norm).collect(),
    }
}

/// [`EmbeddingProvider`] wrapper around [`stub_embed`].
#[derive(Debug, Clone, Copy)]
pub struct StubEmbedder {
    pub dim: usize,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

impl StubEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Provider("embed requires at least one text".into()));
        }
        let vectors: Vec<EmbeddingVector> =
            texts.iter().map(|t| stub_embed(t, self.dim)).collect();
        check_batch(texts, &vectors)?;
        Ok(vectors)
    }

    fn provider_id(&self) -> String {
        format!("stub-bow-{}", self.dim)
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }
}

/// Outcome of the deterministic decision rule.
#[derive(Debug, Clone, PartialEq)]
pub struct StubDecision {
    pub label: String,
    pub explanation: String,
    pub confidence: f64,
}

/// Picks the option whose distinct tokens overlap the evidence the most.
///
/// Confidence is `overlap / max(1, |option tokens|)` for the winner; ties
/// break by ascending label, so empty evidence deterministically yields the
/// lowest label at confidence 0.
pub fn stub_decide(
    _question: &str,
    options: &[(String, String)],
    evidence: &str,
) -> StubDecision {
    assert!(!options.is_empty(), "stub_decide requires options");
    let evidence_tokens: BTreeSet<String> = tokenize(evidence).into_iter().collect();

    let mut ranked: Vec<(&String, BTreeSet<String>)> = options
        .iter()
        .map(|(label, text)| (label, tokenize(text).into_iter().collect()))
        .collect();
    ranked.sort_by(|a, b| a.0.cmp(b.0));

    let mut best: Option<(&String, Vec<&String>, usize)> = None;
    for (label, tokens) in &ranked {
        let overlapping: Vec<&String> = tokens
            .iter()
            .filter(|t| evidence_tokens.contains(*t))
            .collect();
        let better = match &best {
            None => true,
            Some((_, best_overlap, _)) => overlapping.len() > best_overlap.len(),
        };
        if better {
            best = Some((label, overlapping, tokens.len().max(1)));
        }
    }

    let (label, overlapping, denom) = best.expect("options nonempty");
    let confidence = overlapping.len() as f64 / denom as f64;
    let explanation = if overlapping.is_empty() {
        format!("no option tokens appear in the evidence; defaulting to {label}")
    } else {
        let toks: Vec<&str> = overlapping.iter().map(|s| s.as_str()).collect();
        format!("evidence supports {label} via tokens: {}", toks.join(", "))
    };
    StubDecision {
        label: label.clone(),
        explanation,
        confidence,
    }
}

/// Scripted chat stub: responds with the first rule whose needle occurs in
/// the last user message, falling back to an optional default.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChat {
    rules: Vec<(String, String)>,
    default: Option<String>,
}

impl ScriptedChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(response: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default: Some(response.into()),
        }
    }

    /// Adds a rule; rules are checked in insertion order.
    pub fn rule(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push((needle.into(), response.into()));
        self
    }
}

impl ChatProvider for ScriptedChat {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let content = req.last_user_content().unwrap_or("");
        for (needle, response) in &self.rules {
            if content.contains(needle.as_str()) {
                return Ok(ChatResponse {
                    text: response.clone(),
                });
            }
        }
        match &self.default {
            Some(text) => Ok(ChatResponse { text: text.clone() }),
            None => Err(Error::Provider(
                "scripted chat stub has no response for this request".into(),
            )),
        }
    }
}

/// Phrase-substitution rewriter backing the reformulation stub.
///
/// Matching is case-insensitive (the query is lowercased before
/// substitution); when no entry fires the original query passes through
/// unchanged. The replacements that fired become the key concepts.
#[derive(Debug, Clone, Default)]
pub struct LexiconReformulator {
    entries: Vec<(String, String)>,
}

impl LexiconReformulator {
    pub fn new(entries: Vec<(String, String)>) -> Self {
        let entries = entries
            .into_iter()
            .map(|(from, to)| (from.to_lowercase(), to))
            .collect();
        Self { entries }
    }

    /// Empty lexicon: an identity rewriter.
    pub fn identity() -> Self {
        Self::default()
    }

    /// Loads tab-separated `phrase<TAB>replacement` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let (from, to) = line.split_once('\t').ok_or_else(|| {
                Error::format(path, idx + 1, "expected phrase<TAB>replacement")
            })?;
            if from.trim().is_empty() || to.trim().is_empty() {
                return Err(Error::format(path, idx + 1, "empty phrase or replacement"));
            }
            entries.push((from.trim().to_string(), to.trim().to_string()));
        }
        Ok(Self::new(entries))
    }

    /// Applies the lexicon. Returns the rewritten query and the list of
    /// replacement phrases that fired, deduplicated in application order.
    pub fn rewrite(&self, query: &str) -> (String, Vec<String>) {
        let mut text = query.to_lowercase();
        let mut fired = Vec::new();
        for (from, to) in &self.entries {
            if text.contains(from.as_str()) {
                text = text.replace(from.as_str(), to);
                if !fired.contains(to) {
                    fired.push(to.clone());
                }
            }
        }
        if fired.is_empty() {
            (query.to_string(), Vec::new())
        } else {
            (text, fired)
        }
    }
}

/// Verdict rule for the stub validator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValidatorPolicy {
    AlwaysAccept,
    AlwaysRevise,
    /// Accept when the decision's self-reported confidence reaches the
    /// threshold.
    AcceptIfConfidenceAtLeast(f64),
}

/// Condensation rule for the stub evidence condenser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CondensePolicy {
    /// Return the text unchanged.
    Identity,
    /// Keep the first `n` characters.
    TruncateChars(usize),
}

/// One chat stub that serves every pipeline prompt.
///
/// Dispatches on the `TASK:` tag: reformulation goes through the lexicon,
/// decisions through [`stub_decide`], validation through the configured
/// policy, condensation through the condense policy.
#[derive(Debug, Clone)]
pub struct StubPipelineChat {
    pub lexicon: LexiconReformulator,
    pub validator: ValidatorPolicy,
    pub condense: CondensePolicy,
}

impl Default for StubPipelineChat {
    fn default() -> Self {
        Self {
            lexicon: LexiconReformulator::identity(),
            validator: ValidatorPolicy::AcceptIfConfidenceAtLeast(0.7),
            condense: CondensePolicy::Identity,
        }
    }
}

impl StubPipelineChat {
    pub fn with_lexicon(lexicon: LexiconReformulator) -> Self {
        Self {
            lexicon,
            ..Self::default()
        }
    }

    pub fn validator(mut self, policy: ValidatorPolicy) -> Self {
        self.validator = policy;
        self
    }

    pub fn condense(mut self, policy: CondensePolicy) -> Self {
        self.condense = policy;
        self
    }

    fn reformulate(&self, prompt: &str) -> String {
        let sections = parse_sections(prompt, &[protocol::QUERY]);
        let query = section(&sections, protocol::QUERY);
        let (rewritten, concepts) = self.lexicon.rewrite(query);
        let mut out = format!("{}: {rewritten}\n{}:\n", protocol::REWRITTEN, protocol::CONCEPTS);
        for concept in concepts {
            out.push_str(&concept);
            out.push('\n');
        }
        out
    }

    fn decide(&self, prompt: &str) -> String {
        let sections = parse_sections(
            prompt,
            &[
                protocol::QUESTION,
                protocol::OPTIONS,
                protocol::EVIDENCE,
                protocol::CRITIQUE,
            ],
        );
        let question = section(&sections, protocol::QUESTION);
        let evidence = section(&sections, protocol::EVIDENCE);
        let options = parse_option_lines(section(&sections, protocol::OPTIONS));

        if options.is_empty() {
            let summary: String = evidence.chars().take(120).collect();
            let answer = if summary.trim().is_empty() {
                "insufficient evidence".to_string()
            } else {
                summary
            };
            return format!(
                "{}: {answer}\n{}: answered directly from the retrieved evidence\n{}: 0.5",
                protocol::ANSWER,
                protocol::EXPLANATION,
                protocol::CONFIDENCE
            );
        }

        let decision = stub_decide(question, &options, evidence);
        format!(
            "{}: {}\n{}: {}\n{}: {}",
            protocol::ANSWER,
            decision.label,
            protocol::EXPLANATION,
            decision.explanation,
            protocol::CONFIDENCE,
            decision.confidence
        )
    }

    fn validate(&self, prompt: &str) -> String {
        let sections = parse_sections(prompt, &[protocol::CONFIDENCE]);
        let confidence: f64 = section(&sections, protocol::CONFIDENCE)
            .parse()
            .unwrap_or(0.0);
        let accept = match self.validator {
            ValidatorPolicy::AlwaysAccept => true,
            ValidatorPolicy::AlwaysRevise => false,
            ValidatorPolicy::AcceptIfConfidenceAtLeast(t) => confidence >= t,
        };
        if accept {
            format!(
                "{}: ACCEPT\n{}: answer is consistent with the evidence",
                protocol::VERDICT,
                protocol::CRITIQUE
            )
        } else {
            format!(
                "{}: REVISE\n{}: confidence {confidence} is too low; re-check the answer against the strongest evidence items",
                protocol::VERDICT,
                protocol::CRITIQUE
            )
        }
    }

    fn condense_text(&self, prompt: &str) -> String {
        let sections = parse_sections(prompt, &[protocol::EVIDENCE]);
        let evidence = section(&sections, protocol::EVIDENCE);
        match self.condense {
            CondensePolicy::Identity => evidence.to_string(),
            CondensePolicy::TruncateChars(n) => evidence.chars().take(n).collect(),
        }
    }
}

/// Parses `label: text` lines from an OPTIONS section.
fn parse_option_lines(body: &str) -> Vec<(String, String)> {
    body.lines()
        .filter_map(|line| {
            let (label, text) = line.split_once(':')?;
            let label = label.trim();
            let text = text.trim();
            (!label.is_empty()).then(|| (label.to_string(), text.to_string()))
        })
        .collect()
}

impl ChatProvider for StubPipelineChat {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let prompt = req
            .last_user_content()
            .ok_or_else(|| Error::Provider("chat request has no user message".into()))?;
        let sections = parse_sections(prompt, &[protocol::TASK]);
        // Only the first line is the tag; the rest of the prompt follows it.
        let task = section(&sections, protocol::TASK)
            .lines()
            .next()
            .unwrap_or("")
            .trim();
        let text = match task {
            protocol::TASK_REFORMULATE => self.reformulate(prompt),
            protocol::TASK_DECIDE => self.decide(prompt),
            protocol::TASK_VALIDATE => self.validate(prompt),
            protocol::TASK_CONDENSE => self.condense_text(prompt),
            other => {
                return Err(Error::Provider(format!(
                    "stub pipeline chat: unrecognized request tag {other:?}"
                )))
            }
        };
        Ok(ChatResponse { text })
    }
}
