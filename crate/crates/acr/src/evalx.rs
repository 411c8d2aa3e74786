//! QA dataset handling, the four evaluation metrics, and the baseline
//! comparison runner.
//!
//! Metric definitions (all on a [0, 1] scale; negative cosines clamp to 0):
//!
//! - **accuracy** — exact option-label match.
//! - **answer_f1** — token-level multiset F1 between predicted and gold
//!   answer text.
//! - **explanation_cosine** — cosine of the two whole-text embeddings.
//! - **explanation_embed_f1** — greedy token-matching F1: each token embeds
//!   separately, recall averages each gold token's best cosine against the
//!   prediction tokens, precision the reverse.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{
    aggregate_evidence, decide, retrieve_multi_source, run_pipeline, Decision, DecisionRound,
    DenseSource, EvidenceBundle, LexicalSource, PipelineConfig, PipelineProviders,
    PipelineResources, PipelineTrace, ReformulatedQuery, RetrievalSource, SOURCE_KGRAPH,
};
use crate::corpus::Chunk;
use crate::dense::VectorIndex;
use crate::error::{Error, Result};
use crate::kgraph::KnowledgeGraph;
use crate::lexical::{tokenize, LexicalIndex};
use crate::providers::{cosine, ChatProvider, EmbeddingProvider};

/// One multiple-choice QA item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QAItem {
    pub qa_id: String,
    pub question: String,
    /// Ordered labeled options.
    pub options: Vec<(String, String)>,
    pub answer_label: String,
    /// Derived: the text of the gold option.
    pub answer_text: String,
    pub explanation: String,
    pub category: String,
}

#[derive(Deserialize)]
struct RawOption {
    label: String,
    text: String,
}

#[derive(Deserialize)]
struct RawQAItem {
    qa_id: String,
    question: String,
    options: Vec<RawOption>,
    answer_label: String,
    #[serde(default)]
    explanation: String,
    #[serde(default)]
    category: String,
}

/// Loads a line-delimited QA file, validating each item.
pub fn load_qa(path: impl AsRef<Path>) -> Result<Vec<QAItem>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQAItem = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, lineno, format!("malformed QA record: {e}")))?;
        if raw.qa_id.is_empty() || raw.question.is_empty() {
            return Err(Error::format(path, lineno, "qa_id and question must be nonempty"));
        }
        if raw.options.is_empty() {
            return Err(Error::format(path, lineno, "options must be nonempty"));
        }
        let mut labels: HashSet<&str> = HashSet::new();
        for option in &raw.options {
            if option.label.is_empty() {
                return Err(Error::format(path, lineno, "option labels must be nonempty"));
            }
            if !labels.insert(&option.label) {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("duplicate option label {:?}", option.label),
                ));
            }
        }
        let answer_text = raw
            .options
            .iter()
            .find(|o| o.label == raw.answer_label)
            .map(|o| o.text.clone())
            .ok_or_else(|| {
                Error::format(
                    path,
                    lineno,
                    format!("answer_label {:?} is not among the options", raw.answer_label),
                )
            })?;
        items.push(QAItem {
            qa_id: raw.qa_id,
            question: raw.question,
            options: raw
                .options
                .into_iter()
                .map(|o| (o.label, o.text))
                .collect(),
            answer_label: raw.answer_label,
            answer_text,
            explanation: raw.explanation,
            category: raw.category,
        });
    }
    Ok(items)
}

/// Fraction of predictions whose answer label exactly matches gold.
pub fn answer_accuracy(preds: &[Decision], gold: &[QAItem]) -> Result<f64> {
    if preds.len() != gold.len() {
        return Err(Error::Invalid(format!(
            "prediction/gold length mismatch: {} vs {}",
            preds.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let correct = preds
        .iter()
        .zip(gold)
        .filter(|(pred, item)| pred.answer_label.as_deref() == Some(item.answer_label.as_str()))
        .count();
    Ok(correct as f64 / gold.len() as f64)
}

fn counts(text: &str) -> BTreeMap<String, usize> {
    let mut map = BTreeMap::new();
    for token in tokenize(text) {
        *map.entry(token).or_insert(0) += 1;
    }
    map
}

/// Token-level multiset F1. Both texts empty scores 1; exactly one empty
/// scores 0.
pub fn token_f1(pred_text: &str, gold_text: &str) -> f64 {
    let pred = counts(pred_text);
    let gold = counts(gold_text);
    let n_pred: usize = pred.values().sum();
    let n_gold: usize = gold.values().sum();
    if n_pred == 0 && n_gold == 0 {
        return 1.0;
    }
    if n_pred == 0 || n_gold == 0 {
        return 0.0;
    }
    let overlap: usize = pred
        .iter()
        .map(|(token, count)| (*count).min(gold.get(token).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / n_pred as f64;
    let recall = overlap as f64 / n_gold as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Cosine similarity of the two whole-text embeddings, clamped to [0, 1].
pub fn explanation_cosine(
    pred_expl: &str,
    gold_expl: &str,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64> {
    let batch = embedder.embed(&[pred_expl.to_string(), gold_expl.to_string()])?;
    let similarity = cosine(&batch[0], &batch[1]);
    Ok(similarity.clamp(0.0, 1.0))
}

/// Greedy token-level embedding F1.
///
/// Every token of each text embeds separately; recall is the mean over gold
/// tokens of the best cosine against any prediction token (clamped at 0),
/// precision the reverse, combined as 2PR/(P+R). Empty-token conventions
/// match [`token_f1`].
pub fn explanation_embed_f1(
    pred_expl: &str,
    gold_expl: &str,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64> {
    let pred_tokens = tokenize(pred_expl);
    let gold_tokens = tokenize(gold_expl);
    if pred_tokens.is_empty() && gold_tokens.is_empty() {
        return Ok(1.0);
    }
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return Ok(0.0);
    }

    // Embed each distinct token once.
    let mut unique: Vec<String> = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();
    for token in pred_tokens.iter().chain(gold_tokens.iter()) {
        if !index_of.contains_key(token) {
            index_of.insert(token.clone(), unique.len());
            unique.push(token.clone());
        }
    }
    let vectors = embedder.embed(&unique)?;

    let best_against = |from: &[String], against: &[String]| -> f64 {
        let mut total = 0.0;
        for token in from {
            let v = &vectors[index_of[token]];
            let best = against
                .iter()
                .map(|other| cosine(v, &vectors[index_of[other]]))
                .fold(0.0f64, f64::max); // clamp at 0 happens via the fold seed
            total += best;
        }
        total / from.len() as f64
    };

    let recall = best_against(&gold_tokens, &pred_tokens);
    let precision = best_against(&pred_tokens, &gold_tokens);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * precision * recall / (precision + recall)).clamp(0.0, 1.0))
}

/// The four baseline systems of the comparison matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Pure decision provider, no retrieval.
    None,
    /// Keyword retrieval only; no reformulation, no self-validation.
    Traditional,
    /// Dense retrieval only; no reformulation, no self-validation.
    Semantic,
    /// The full four-stage pipeline.
    Agentic,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::None,
        Preset::Traditional,
        Preset::Semantic,
        Preset::Agentic,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Preset::None => "none",
            Preset::Traditional => "traditional",
            Preset::Semantic => "semantic",
            Preset::Agentic => "agentic",
        }
    }

    pub fn parse(raw: &str) -> Result<Self> {
        match raw.to_ascii_lowercase().as_str() {
            "none" => Ok(Preset::None),
            "traditional" => Ok(Preset::Traditional),
            "semantic" => Ok(Preset::Semantic),
            "agentic" => Ok(Preset::Agentic),
            other => Err(Error::Invalid(format!(
                "unknown preset {other:?} (expected none|traditional|semantic|agentic)"
            ))),
        }
    }
}

/// Everything the comparison runner may need; presets use subsets of it.
pub struct EvalResources<'a> {
    pub chunks: &'a HashMap<String, Chunk>,
    pub lexical: Option<&'a LexicalIndex>,
    pub vectors: Option<&'a VectorIndex>,
    pub graph: Option<&'a KnowledgeGraph>,
    pub embedder: &'a dyn EmbeddingProvider,
    pub decider: &'a dyn ChatProvider,
    pub reformulator: Option<&'a dyn ChatProvider>,
    pub validator: Option<&'a dyn ChatProvider>,
    pub condenser: Option<&'a dyn ChatProvider>,
}

/// Per-item evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub qa_id: String,
    pub predicted_label: Option<String>,
    pub gold_label: String,
    pub correct: bool,
    pub answer_f1: f64,
    pub explanation_cosine: f64,
    pub explanation_embed_f1: f64,
    pub confidence: f64,
    pub decision_rounds: usize,
}

/// Aggregate metrics for one preset, with the per-item rows that produced
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub system_id: String,
    pub n: usize,
    pub accuracy: f64,
    pub answer_f1: f64,
    pub explanation_embed_f1: f64,
    pub explanation_cosine: f64,
    pub rows: Vec<ItemRow>,
}

fn minimal_trace(rq: ReformulatedQuery, evidence: EvidenceBundle, decision: &Decision) -> PipelineTrace {
    PipelineTrace {
        reformulated: rq,
        per_source: Vec::new(),
        fused: Vec::new(),
        evidence,
        rounds: vec![DecisionRound {
            decision: decision.clone(),
            verdict: None,
            critique: None,
            error: None,
        }],
        refinement_count: 0,
        stage_millis: BTreeMap::new(),
    }
}

fn answer_with_single_source(
    question: &str,
    options: &[(String, String)],
    source: &dyn RetrievalSource,
    res: &EvalResources,
    cfg: &PipelineConfig,
) -> Result<(Decision, PipelineTrace)> {
    let rq = ReformulatedQuery::identity(question);
    let start = Instant::now();
    let (fused, per_source, synthetic) = retrieve_multi_source(&rq, &[source], cfg)?;
    let retrieve_ms = start.elapsed().as_secs_f64() * 1e3;

    let synthetic_by_id: HashMap<&str, &Chunk> = synthetic
        .iter()
        .map(|c| (c.chunk_id.as_str(), c))
        .collect();
    let lookup = |id: &str| -> Option<String> {
        synthetic_by_id
            .get(id)
            .map(|c| c.text.clone())
            .or_else(|| res.chunks.get(id).map(|c| c.text.clone()))
    };
    let start = Instant::now();
    let evidence = aggregate_evidence(&fused, &lookup, cfg, None, &rq.rewritten);
    let aggregate_ms = start.elapsed().as_secs_f64() * 1e3;

    let start = Instant::now();
    let decision = decide(&rq, &evidence, Some(options), res.decider)?;
    let decide_ms = start.elapsed().as_secs_f64() * 1e3;

    let mut trace = minimal_trace(rq, evidence, &decision);
    trace.per_source = per_source;
    trace.fused = fused;
    trace.stage_millis = BTreeMap::from([
        ("retrieve".to_string(), retrieve_ms),
        ("aggregate".to_string(), aggregate_ms),
        ("decide".to_string(), decide_ms),
    ]);
    Ok((decision, trace))
}

/// Answers one QA item under one preset.
pub fn answer_item(
    item: &QAItem,
    preset: Preset,
    res: &EvalResources,
    cfg: &PipelineConfig,
) -> Result<(Decision, PipelineTrace)> {
    match preset {
        Preset::None => {
            let rq = ReformulatedQuery::identity(&item.question);
            let evidence = EvidenceBundle::empty();
            let start = Instant::now();
            let decision = decide(&rq, &evidence, Some(&item.options), res.decider)?;
            let mut trace = minimal_trace(rq, evidence, &decision);
            trace
                .stage_millis
                .insert("decide".into(), start.elapsed().as_secs_f64() * 1e3);
            Ok((decision, trace))
        }
        Preset::Traditional => {
            let index = res.lexical.ok_or_else(|| {
                Error::Invalid("preset traditional requires a lexical index".into())
            })?;
            let source = LexicalSource { index };
            answer_with_single_source(&item.question, &item.options, &source, res, cfg)
        }
        Preset::Semantic => {
            let index = res.vectors.ok_or_else(|| {
                Error::Invalid("preset semantic requires a vector index".into())
            })?;
            let source = DenseSource {
                index,
                embedder: res.embedder,
            };
            answer_with_single_source(&item.question, &item.options, &source, res, cfg)
        }
        Preset::Agentic => {
            // Knowledge-graph retrieval joins in only when a graph was
            // actually supplied.
            let mut sources = cfg.sources.clone();
            if res.graph.is_none() {
                sources.retain(|s| s != SOURCE_KGRAPH);
            }
            if sources.is_empty() {
                return Err(Error::NoSources);
            }
            let cfg = PipelineConfig {
                sources,
                ..cfg.clone()
            };
            let providers = PipelineProviders {
                embedder: res.embedder,
                decider: res.decider,
                reformulator: res.reformulator,
                validator: res.validator,
                condenser: res.condenser,
            };
            let resources = PipelineResources {
                chunks: res.chunks,
                lexical: res.lexical,
                vectors: res.vectors,
                graph: res.graph,
            };
            run_pipeline(
                &item.question,
                Some(&item.options),
                &resources,
                &providers,
                &cfg,
            )
        }
    }
}

fn evaluate_one(
    item: &QAItem,
    preset: Preset,
    res: &EvalResources,
    cfg: &PipelineConfig,
) -> Result<ItemRow> {
    let (decision, trace) = answer_item(item, preset, res, cfg)?;
    Ok(ItemRow {
        qa_id: item.qa_id.clone(),
        correct: decision.answer_label.as_deref() == Some(item.answer_label.as_str()),
        answer_f1: token_f1(&decision.answer_text, &item.answer_text),
        explanation_cosine: explanation_cosine(&decision.explanation, &item.explanation, res.embedder)?,
        explanation_embed_f1: explanation_embed_f1(
            &decision.explanation,
            &item.explanation,
            res.embedder,
        )?,
        predicted_label: decision.answer_label,
        gold_label: item.answer_label.clone(),
        confidence: decision.confidence,
        decision_rounds: trace.rounds.len(),
    })
}

/// Evaluates items concurrently (up to `max_concurrency` workers) and
/// reduces in item order, so reports do not depend on scheduling.
fn evaluate_preset(
    qa: &[QAItem],
    preset: Preset,
    res: &EvalResources,
    cfg: &PipelineConfig,
    max_concurrency: usize,
) -> Result<MetricsReport> {
    let workers = max_concurrency.clamp(1, qa.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ItemRow>>>> = Mutex::new((0..qa.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= qa.len() {
                    break;
                }
                let outcome = evaluate_one(&qa[i], preset, res, cfg);
                slots.lock().expect("no poisoned slot lock")[i] = Some(outcome);
            });
        }
    });

    let mut rows: Vec<ItemRow> = Vec::with_capacity(qa.len());
    for slot in slots.into_inner().expect("no poisoned slot lock") {
        rows.push(slot.expect("every item evaluated")?);
    }

    let n = rows.len();
    let mean = |f: &dyn Fn(&ItemRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        system_id: preset.id().to_string(),
        n,
        accuracy: mean(&|r| if r.correct { 1.0 } else { 0.0 }),
        answer_f1: mean(&|r| r.answer_f1),
        explanation_embed_f1: mean(&|r| r.explanation_embed_f1),
        explanation_cosine: mean(&|r| r.explanation_cosine),
        rows,
    })
}

/// Runs every preset over the QA set and returns one report per preset, in
/// the order given.
pub fn run_comparison(
    qa: &[QAItem],
    presets: &[Preset],
    res: &EvalResources,
    cfg: &PipelineConfig,
    max_concurrency: usize,
) -> Result<Vec<MetricsReport>> {
    if qa.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if presets.is_empty() {
        return Err(Error::Invalid("no presets selected".into()));
    }
    presets
        .iter()
        .map(|&preset| evaluate_preset(qa, preset, res, cfg, max_concurrency))
        .collect()
}

/// Aligned text table of the aggregate metrics, one row per preset.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>4} {:>10} {:>10} {:>14} {:>12}\n",
        "preset", "n", "accuracy", "answer_f1", "expl_embed_f1", "expl_cosine"
    ));
    for report in reports {
        out.push_str(&format!(
            "{:<12} {:>4} {:>10.4} {:>10.4} {:>14.4} {:>12.4}\n",
            report.system_id,
            report.n,
            report.accuracy,
            report.answer_f1,
            report.explanation_embed_f1,
            report.explanation_cosine
        ));
    }
    out
}
