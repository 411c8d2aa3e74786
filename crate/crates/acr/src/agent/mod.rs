//! The four-step agentic retrieval pipeline.
//!
//! A query runs through: (A) understanding and reformulation, (B)
//! multi-source retrieval fused by reciprocal rank, (C) evidence
//! aggregation under a character budget, and (D) decision-making with
//! confidence-gated self-validation. Every stage output lands in a
//! [`PipelineTrace`], so a run is auditable end to end, and under stub
//! providers it is bit-for-bit reproducible.
//!
//! Ranked lists from heterogeneous sources (cosine scores, TF-IDF scores,
//! graph hits) are combined by reciprocal-rank fusion,
//! `fused(c) = Σ_sources 1/(rrf_k + rank_c)`, which only looks at ranks and
//! is therefore scale-free across scorers.

mod prompts;
mod sources;

pub use prompts::{condense_prompt, decide_prompt, reformulate_prompt, validate_prompt};
pub use sources::{
    DenseSource, HybridSource, KgraphSource, LexicalSource, RetrievalSource, SourceOutput,
    SOURCE_DENSE, SOURCE_HYBRID, SOURCE_KGRAPH, SOURCE_LEXICAL,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::dense::VectorIndex;
use crate::error::{Error, Result};
use crate::kgraph::KnowledgeGraph;
use crate::lexical::{tokenize, LexicalIndex, SearchHit};
use crate::protocol::{self as p, parse_sections, section};
use crate::providers::{ChatProvider, ChatRequest, EmbeddingProvider};

/// Stopwords dropped by the fallback concept extractor. Exactly 30 entries.
pub const CONCEPT_STOPLIST: [&str; 30] = [
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "do", "does", "for", "from", "how",
    "i", "in", "is", "it", "of", "on", "or", "should", "that", "the", "to", "we", "what", "which",
    "will", "with",
];

/// Output of stage A.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReformulatedQuery {
    pub original: String,
    /// Never empty; falls back to the original query.
    pub rewritten: String,
    /// Deduplicated, each nonempty. Drives knowledge-graph entity linking.
    pub key_concepts: Vec<String>,
}

impl ReformulatedQuery {
    /// No-op reformulation, used by presets that skip stage A.
    pub fn identity(query: &str) -> Self {
        Self {
            original: query.to_string(),
            rewritten: query.to_string(),
            key_concepts: Vec::new(),
        }
    }
}

/// What one source contributed to a run, kept for the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub source_id: String,
    pub ranked: Vec<SearchHit>,
    /// Set when the source failed and was skipped.
    pub error: Option<String>,
}

/// One fused result with its contributing sources (ascending source id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedHit {
    pub chunk_id: String,
    pub score: f64,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub chunk_id: String,
    pub text: String,
    pub fused_score: f64,
    pub sources: Vec<String>,
}

/// Stage C output: deduplicated evidence in fused order, within the
/// character budget (except that the top item is always kept whole).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub items: Vec<EvidenceItem>,
    /// Sum of item text lengths in characters.
    pub total_chars: usize,
    /// True when a condenser pass replaced item texts.
    pub condensed: bool,
}

impl EvidenceBundle {
    pub fn empty() -> Self {
        Self::default()
    }
}

/// Final answer of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// Present when the question carried labeled options.
    pub answer_label: Option<String>,
    pub answer_text: String,
    pub explanation: String,
    /// Self-reported by the provider, clamped to [0, 1]; 0.5 when missing.
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Revise,
}

/// One decision round: the decision plus what the validator said about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRound {
    pub decision: Decision,
    /// None when no validator ran (or it failed; see `error`).
    pub verdict: Option<Verdict>,
    pub critique: Option<String>,
    /// Provider failure that ended the loop early.
    pub error: Option<String>,
}

/// Complete audit record of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub reformulated: ReformulatedQuery,
    pub per_source: Vec<SourceReport>,
    pub fused: Vec<FusedHit>,
    pub evidence: EvidenceBundle,
    pub rounds: Vec<DecisionRound>,
    pub refinement_count: usize,
    /// Wall-clock per executed stage, milliseconds.
    pub stage_millis: BTreeMap<String, f64>,
}

impl PipelineTrace {
    /// Copy with timing values zeroed, for reproducibility comparisons.
    pub fn with_zeroed_timings(&self) -> Self {
        let mut copy = self.clone();
        for value in copy.stage_millis.values_mut() {
            *value = 0.0;
        }
        copy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Source ids queried in stage B.
    pub sources: Vec<String>,
    pub k_per_source: usize,
    /// Reciprocal-rank fusion constant.
    pub rrf_k: f64,
    pub evidence_budget_chars: usize,
    /// Below this, an accepted decision still triggers refinement.
    pub confidence_threshold: f64,
    pub max_refinements: usize,
    /// Knowledge-graph expansion depth.
    pub hops: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sources: vec![
                SOURCE_LEXICAL.to_string(),
                SOURCE_DENSE.to_string(),
                SOURCE_KGRAPH.to_string(),
            ],
            k_per_source: 10,
            rrf_k: 60.0,
            evidence_budget_chars: 6000,
            confidence_threshold: 0.7,
            max_refinements: 2,
            hops: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Config(
                "confidence_threshold must lie in [0, 1]".into(),
            ));
        }
        if self.k_per_source == 0 {
            return Err(Error::Config("k_per_source must be at least 1".into()));
        }
        if self.rrf_k <= 0.0 {
            return Err(Error::Config("rrf_k must be positive".into()));
        }
        Ok(())
    }
}

/// The provider set a pipeline run draws on. Reformulator, validator, and
/// condenser are optional; their stages degrade gracefully without them.
pub struct PipelineProviders<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub decider: &'a dyn ChatProvider,
    pub reformulator: Option<&'a dyn ChatProvider>,
    pub validator: Option<&'a dyn ChatProvider>,
    pub condenser: Option<&'a dyn ChatProvider>,
}

/// Indexes and data a pipeline run retrieves from.
pub struct PipelineResources<'a> {
    /// Corpus chunks by chunk id, for evidence text lookup.
    pub chunks: &'a HashMap<String, Chunk>,
    pub lexical: Option<&'a LexicalIndex>,
    pub vectors: Option<&'a VectorIndex>,
    pub graph: Option<&'a KnowledgeGraph>,
}

/// Fallback concept extraction: tokenize, drop the default stoplist, form
/// bigrams of adjacent surviving tokens plus unigrams, then keep the top 5
/// by mean corpus idf (or the first 5 in query order without an index).
pub fn extract_concepts(query: &str, idf_index: Option<&LexicalIndex>) -> Vec<String> {
    let tokens: Vec<String> = tokenize(query)
        .into_iter()
        .filter(|t| !CONCEPT_STOPLIST.contains(&t.as_str()))
        .collect();

    let mut candidates: Vec<String> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for i in 0..tokens.len() {
        if i + 1 < tokens.len() {
            let bigram = format!("{} {}", tokens[i], tokens[i + 1]);
            if seen.insert(bigram.clone()) {
                candidates.push(bigram);
            }
        }
        if seen.insert(tokens[i].clone()) {
            candidates.push(tokens[i].clone());
        }
    }

    if let Some(index) = idf_index {
        let mean_idf = |concept: &str| -> f64 {
            let parts = tokenize(concept);
            if parts.is_empty() {
                return 0.0;
            }
            parts.iter().map(|t| index.idf(t)).sum::<f64>() / parts.len() as f64
        };
        // Stable sort keeps query order among equal-idf candidates.
        candidates.sort_by(|a, b| {
            mean_idf(b)
                .partial_cmp(&mean_idf(a))
                .expect("idf is never NaN")
        });
    }
    candidates.truncate(5);
    candidates
}

/// Stage A: rewrite the query into standards-aligned terminology and
/// extract key concepts.
///
/// The provider responds in `REWRITTEN:` / `CONCEPTS:` sections. A response
/// that cannot be parsed falls back to the identity rewrite plus
/// [`extract_concepts`]; a provider *failure* does too unless
/// `allow_fallback` is false, in which case it propagates.
pub fn reformulate_query(
    query: &str,
    llm: Option<&dyn ChatProvider>,
    idf_index: Option<&LexicalIndex>,
    allow_fallback: bool,
) -> Result<ReformulatedQuery> {
    if query.trim().is_empty() {
        return Err(Error::Invalid("query must be nonempty".into()));
    }
    let fallback = || ReformulatedQuery {
        original: query.to_string(),
        rewritten: query.to_string(),
        key_concepts: extract_concepts(query, idf_index),
    };

    let Some(llm) = llm else {
        return Ok(fallback());
    };
    let response = match llm.chat(&ChatRequest::user(reformulate_prompt(query))) {
        Ok(response) => response,
        Err(_) if allow_fallback => return Ok(fallback()),
        Err(e) => return Err(e),
    };

    let sections = parse_sections(&response.text, &[p::REWRITTEN, p::CONCEPTS]);
    let rewritten = section(&sections, p::REWRITTEN).trim().to_string();
    if rewritten.is_empty() {
        return Ok(fallback());
    }
    let mut key_concepts: Vec<String> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for line in section(&sections, p::CONCEPTS).lines() {
        let concept = line.trim();
        if !concept.is_empty() && seen.insert(concept.to_string()) {
            key_concepts.push(concept.to_string());
        }
    }
    Ok(ReformulatedQuery {
        original: query.to_string(),
        rewritten,
        key_concepts,
    })
}

/// Stage B: query every source and fuse by reciprocal rank.
///
/// Ranks start at 1; a chunk absent from a source contributes nothing. Per
/// chunk, contributions are summed in ascending source-id order, so the
/// fused scores do not depend on how the source list is arranged. A failing
/// source is recorded and skipped — unless it is the only source, which is
/// an error.
///
/// Returns the fused ranking, the per-source reports, and any synthetic
/// chunks the sources introduced.
pub fn retrieve_multi_source(
    rq: &ReformulatedQuery,
    sources: &[&dyn RetrievalSource],
    cfg: &PipelineConfig,
) -> Result<(Vec<FusedHit>, Vec<SourceReport>, Vec<Chunk>)> {
    if sources.is_empty() {
        return Err(Error::NoSources);
    }
    let mut ids: HashSet<&str> = HashSet::new();
    for source in sources {
        if !ids.insert(source.source_id()) {
            return Err(Error::Invalid(format!(
                "duplicate source id {:?}",
                source.source_id()
            )));
        }
    }

    let mut reports: Vec<SourceReport> = Vec::with_capacity(sources.len());
    let mut synthetic: Vec<Chunk> = Vec::new();
    for source in sources {
        match source.retrieve(rq, cfg.k_per_source) {
            Ok(output) => {
                synthetic.extend(output.chunks);
                reports.push(SourceReport {
                    source_id: source.source_id().to_string(),
                    ranked: output.ranked,
                    error: None,
                });
            }
            Err(e) if sources.len() == 1 => return Err(e),
            Err(e) => reports.push(SourceReport {
                source_id: source.source_id().to_string(),
                ranked: Vec::new(),
                error: Some(e.to_string()),
            }),
        }
    }

    let fused = fuse_reciprocal_rank(&reports, cfg.rrf_k);
    Ok((fused, reports, synthetic))
}

/// Reciprocal-rank fusion of per-source rankings.
pub fn fuse_reciprocal_rank(reports: &[SourceReport], rrf_k: f64) -> Vec<FusedHit> {
    // chunk -> (source_id, rank), collected then summed in source-id order
    // so that floating-point addition never sees a source-order dependence.
    let mut contributions: BTreeMap<&str, Vec<(&str, usize)>> = BTreeMap::new();
    for report in reports {
        for (position, hit) in report.ranked.iter().enumerate() {
            contributions
                .entry(&hit.chunk_id)
                .or_default()
                .push((&report.source_id, position + 1));
        }
    }

    let mut fused: Vec<FusedHit> = contributions
        .into_iter()
        .map(|(chunk_id, mut contribs)| {
            contribs.sort_by(|a, b| a.0.cmp(b.0));
            let score: f64 = contribs
                .iter()
                .map(|(_, rank)| 1.0 / (rrf_k + *rank as f64))
                .sum();
            FusedHit {
                chunk_id: chunk_id.to_string(),
                score,
                sources: contribs.iter().map(|(s, _)| s.to_string()).collect(),
            }
        })
        .collect();
    fused.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("fused scores are never NaN")
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    fused
}

/// Stage C: walk the fused ranking and pack whole chunks into the bundle.
///
/// Packing stops at the first item that would exceed the budget; the top
/// item is always included even when it alone is over budget. When a
/// condenser is supplied and the packed bundle exceeds 80% of the budget,
/// each item's text is condensed in place — order and membership never
/// change, and a condenser failure leaves the original text.
pub fn aggregate_evidence(
    fused: &[FusedHit],
    lookup: &dyn Fn(&str) -> Option<String>,
    cfg: &PipelineConfig,
    condenser: Option<&dyn ChatProvider>,
    query: &str,
) -> EvidenceBundle {
    let mut bundle = EvidenceBundle::empty();
    let mut seen: HashSet<&str> = HashSet::new();
    for hit in fused {
        if !seen.insert(&hit.chunk_id) {
            continue;
        }
        let Some(text) = lookup(&hit.chunk_id) else {
            continue;
        };
        let chars = text.chars().count();
        if !bundle.items.is_empty() && bundle.total_chars + chars > cfg.evidence_budget_chars {
            break;
        }
        bundle.total_chars += chars;
        bundle.items.push(EvidenceItem {
            chunk_id: hit.chunk_id.clone(),
            text,
            fused_score: hit.score,
            sources: hit.sources.clone(),
        });
    }

    if let Some(condenser) = condenser {
        let threshold = 0.8 * cfg.evidence_budget_chars as f64;
        if bundle.total_chars as f64 > threshold {
            for item in &mut bundle.items {
                let prompt = condense_prompt(query, &item.text);
                if let Ok(response) = condenser.chat(&ChatRequest::user(prompt)) {
                    let condensed = response.text.trim();
                    if !condensed.is_empty() {
                        item.text = condensed.to_string();
                        bundle.condensed = true;
                    }
                }
            }
            bundle.total_chars = bundle
                .items
                .iter()
                .map(|item| item.text.chars().count())
                .sum();
        }
    }
    bundle
}

fn parse_confidence(raw: &str) -> f64 {
    raw.trim()
        .parse::<f64>()
        .map(|c| c.clamp(0.0, 1.0))
        .unwrap_or(0.5)
}

/// Resolves a raw answer against the option labels: exact match first, then
/// case-insensitive.
fn repair_label(raw: &str, options: &[(String, String)]) -> Result<(String, String)> {
    let raw = raw.trim();
    if let Some((label, text)) = options.iter().find(|(label, _)| label == raw) {
        return Ok((label.clone(), text.clone()));
    }
    if let Some((label, text)) = options
        .iter()
        .find(|(label, _)| label.eq_ignore_ascii_case(raw))
    {
        return Ok((label.clone(), text.clone()));
    }
    Err(Error::DecisionParse(format!(
        "answer {raw:?} does not match any option label"
    )))
}

fn parse_decision(
    text: &str,
    options: Option<&[(String, String)]>,
) -> std::result::Result<Decision, String> {
    let sections = parse_sections(text, &[p::ANSWER, p::EXPLANATION, p::CONFIDENCE]);
    let raw_answer = section(&sections, p::ANSWER).trim().to_string();
    let explanation = section(&sections, p::EXPLANATION).trim().to_string();
    if raw_answer.is_empty() {
        return Err("missing ANSWER section".into());
    }
    if explanation.is_empty() {
        return Err("missing EXPLANATION section".into());
    }
    let confidence = parse_confidence(section(&sections, p::CONFIDENCE));
    let (answer_label, answer_text) = match options {
        Some(options) => {
            let (label, text) = repair_label(&raw_answer, options).map_err(|e| e.to_string())?;
            (Some(label), text)
        }
        None => (None, raw_answer),
    };
    Ok(Decision {
        answer_label,
        answer_text,
        explanation,
        confidence,
    })
}

fn decide_with_critique(
    rq: &ReformulatedQuery,
    evidence: &EvidenceBundle,
    options: Option<&[(String, String)]>,
    llm: &dyn ChatProvider,
    critique: Option<&str>,
) -> Result<Decision> {
    let prompt = decide_prompt(&rq.original, options, evidence, critique);
    let response = llm.chat(&ChatRequest::user(&prompt))?;
    match parse_decision(&response.text, options) {
        Ok(decision) => Ok(decision),
        Err(first_error) => {
            // One re-prompt with an explicit format reminder.
            let reminder = format!(
                "{prompt}\nYour previous reply could not be parsed ({first_error}). \
                 Respond again with exactly the {}, {}, and {} sections.",
                p::ANSWER,
                p::EXPLANATION,
                p::CONFIDENCE
            );
            let retry = llm.chat(&ChatRequest::user(reminder))?;
            parse_decision(&retry.text, options).map_err(Error::DecisionParse)
        }
    }
}

/// Stage D, first half: ask the decision provider for an answer,
/// explanation, and confidence over the aggregated evidence.
///
/// With options present the answer must resolve to an option label (exact,
/// then case-insensitive). An unparseable response is re-prompted once.
pub fn decide(
    rq: &ReformulatedQuery,
    evidence: &EvidenceBundle,
    options: Option<&[(String, String)]>,
    llm: &dyn ChatProvider,
) -> Result<Decision> {
    decide_with_critique(rq, evidence, options, llm, None)
}

fn parse_verdict(text: &str) -> std::result::Result<(Verdict, Option<String>), String> {
    let sections = parse_sections(text, &[p::VERDICT, p::CRITIQUE]);
    let raw = section(&sections, p::VERDICT).trim().to_uppercase();
    let verdict = if raw.starts_with("ACCEPT") {
        Verdict::Accept
    } else if raw.starts_with("REVISE") {
        Verdict::Revise
    } else {
        return Err(format!("unparseable verdict {raw:?}"));
    };
    let critique = section(&sections, p::CRITIQUE).trim().to_string();
    Ok((verdict, (!critique.is_empty()).then_some(critique)))
}

/// Highest-confidence decision; later rounds win ties.
fn best_decision(rounds: &[DecisionRound]) -> Decision {
    rounds
        .iter()
        .max_by(|a, b| {
            a.decision
                .confidence
                .partial_cmp(&b.decision.confidence)
                .expect("confidence is never NaN")
        })
        .map(|round| round.decision.clone())
        .expect("at least one round")
}

/// Stage D, second half: the self-reflection loop.
///
/// Each decision is validated; the loop stops when the validator accepts
/// *and* confidence reaches the threshold, or after `max_refinements`
/// re-decisions. Every round is recorded. A provider failure mid-loop ends
/// the loop and returns the best decision so far, flagged in the round
/// record.
pub fn self_validate(
    decision: Decision,
    rq: &ReformulatedQuery,
    evidence: &EvidenceBundle,
    options: Option<&[(String, String)]>,
    validator: &dyn ChatProvider,
    decider: &dyn ChatProvider,
    cfg: &PipelineConfig,
) -> (Decision, Vec<DecisionRound>) {
    let mut rounds: Vec<DecisionRound> = Vec::new();
    let mut current = decision;
    let mut refinements = 0usize;

    loop {
        let prompt = validate_prompt(&current, &rq.original, evidence);
        let outcome = validator
            .chat(&ChatRequest::user(prompt))
            .map_err(|e| e.to_string())
            .and_then(|response| parse_verdict(&response.text));
        let (verdict, critique) = match outcome {
            Ok(parsed) => parsed,
            Err(message) => {
                rounds.push(DecisionRound {
                    decision: current,
                    verdict: None,
                    critique: None,
                    error: Some(format!("validator failed: {message}")),
                });
                return (best_decision(&rounds), rounds);
            }
        };
        rounds.push(DecisionRound {
            decision: current.clone(),
            verdict: Some(verdict),
            critique: critique.clone(),
            error: None,
        });

        let accepted =
            verdict == Verdict::Accept && current.confidence >= cfg.confidence_threshold;
        if accepted || refinements == cfg.max_refinements {
            return (current, rounds);
        }

        match decide_with_critique(rq, evidence, options, decider, critique.as_deref()) {
            Ok(next) => {
                current = next;
                refinements += 1;
            }
            Err(e) => {
                if let Some(last) = rounds.last_mut() {
                    last.error = Some(format!("refinement failed: {e}"));
                }
                return (best_decision(&rounds), rounds);
            }
        }
    }
}

fn millis_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs the full four-stage pipeline for one query.
///
/// Every requested source must have its index supplied in `res`. The trace
/// records each stage's output and wall-clock time; under stub providers
/// two identical runs produce identical traces apart from the timings.
pub fn run_pipeline(
    query: &str,
    options: Option<&[(String, String)]>,
    res: &PipelineResources,
    providers: &PipelineProviders,
    cfg: &PipelineConfig,
) -> Result<(Decision, PipelineTrace)> {
    cfg.validate()?;
    if cfg.sources.is_empty() {
        return Err(Error::NoSources);
    }
    let mut stage_millis: BTreeMap<String, f64> = BTreeMap::new();

    // Stage A: query understanding.
    let start = Instant::now();
    let rq = reformulate_query(query, providers.reformulator, res.lexical, true)
        .map_err(|e| e.in_stage("reformulate"))?;
    stage_millis.insert("reformulate".into(), millis_since(start));

    // Stage B: multi-source retrieval with rank fusion.
    let start = Instant::now();
    let missing = |what: &str, id: &str| {
        Error::Invalid(format!("source {id:?} requires {what} to be supplied"))
            .in_stage("retrieve")
    };
    let mut source_boxes: Vec<Box<dyn RetrievalSource + '_>> = Vec::new();
    for id in &cfg.sources {
        let source: Box<dyn RetrievalSource> = match id.as_str() {
            SOURCE_LEXICAL => Box::new(LexicalSource {
                index: res.lexical.ok_or_else(|| missing("a lexical index", id))?,
            }),
            SOURCE_DENSE => Box::new(DenseSource {
                index: res.vectors.ok_or_else(|| missing("a vector index", id))?,
                embedder: providers.embedder,
            }),
            SOURCE_HYBRID => Box::new(HybridSource {
                lexical: res.lexical.ok_or_else(|| missing("a lexical index", id))?,
                vectors: res.vectors.ok_or_else(|| missing("a vector index", id))?,
                embedder: providers.embedder,
                coarse_k: 100,
            }),
            SOURCE_KGRAPH => Box::new(KgraphSource {
                graph: res.graph.ok_or_else(|| missing("a knowledge graph", id))?,
                hops: cfg.hops,
            }),
            other => {
                return Err(
                    Error::Invalid(format!("unknown source id {other:?}")).in_stage("retrieve")
                )
            }
        };
        source_boxes.push(source);
    }
    let source_refs: Vec<&dyn RetrievalSource> = source_boxes.iter().map(Box::as_ref).collect();
    let (fused, per_source, synthetic) =
        retrieve_multi_source(&rq, &source_refs, cfg).map_err(|e| e.in_stage("retrieve"))?;
    stage_millis.insert("retrieve".into(), millis_since(start));

    // Stage C: evidence aggregation.
    let start = Instant::now();
    let synthetic_by_id: HashMap<&str, &Chunk> = synthetic
        .iter()
        .map(|chunk| (chunk.chunk_id.as_str(), chunk))
        .collect();
    let lookup = |chunk_id: &str| -> Option<String> {
        synthetic_by_id
            .get(chunk_id)
            .map(|chunk| chunk.text.clone())
            .or_else(|| res.chunks.get(chunk_id).map(|chunk| chunk.text.clone()))
    };
    let evidence = aggregate_evidence(&fused, &lookup, cfg, providers.condenser, &rq.rewritten);
    stage_millis.insert("aggregate".into(), millis_since(start));

    // Stage D: decision with self-validation.
    let start = Instant::now();
    let first =
        decide(&rq, &evidence, options, providers.decider).map_err(|e| e.in_stage("decide"))?;
    let (decision, rounds) = match providers.validator {
        Some(validator) => self_validate(
            first,
            &rq,
            &evidence,
            options,
            validator,
            providers.decider,
            cfg,
        ),
        None => {
            let rounds = vec![DecisionRound {
                decision: first.clone(),
                verdict: None,
                critique: None,
                error: None,
            }];
            (first, rounds)
        }
    };
    stage_millis.insert("decide".into(), millis_since(start));

    let refinement_count = rounds.len().saturating_sub(1);
    let trace = PipelineTrace {
        reformulated: rq,
        per_source,
        fused,
        evidence,
        rounds,
        refinement_count,
        stage_millis,
    };
    Ok((decision, trace))
}
