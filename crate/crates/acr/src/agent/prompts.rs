//! Prompt builders for the four pipeline stages.
//!
//! Each prompt opens with a `TASK:` tag and carries its inputs as labeled
//! sections. Scalar sections (question, options, confidence) come before
//! bulk text sections (evidence), so a stray label-looking line inside
//! retrieved text cannot shadow them.

use std::fmt::Write as _;

use crate::agent::{Decision, EvidenceBundle};
use crate::protocol as p;

pub fn reformulate_prompt(query: &str) -> String {
    format!(
        "{task}: {tag}\n\
         You align telecom questions with standards terminology.\n\
         Rewrite the query in the vocabulary a standards document would use and\n\
         list the key concepts worth retrieving, most important first.\n\
         Respond with exactly these sections:\n\
         {rewritten}: <one-line rewrite>\n\
         {concepts}:\n\
         <one concept per line>\n\n\
         {query_label}: {query}",
        task = p::TASK,
        tag = p::TASK_REFORMULATE,
        rewritten = p::REWRITTEN,
        concepts = p::CONCEPTS,
        query_label = p::QUERY,
    )
}

fn push_evidence(out: &mut String, evidence: &EvidenceBundle) {
    let _ = writeln!(out, "{}:", p::EVIDENCE);
    for (i, item) in evidence.items.iter().enumerate() {
        let _ = writeln!(
            out,
            "[{}] (sources: {}) {}",
            i + 1,
            item.sources.join(", "),
            item.text
        );
    }
}

pub fn decide_prompt(
    question: &str,
    options: Option<&[(String, String)]>,
    evidence: &EvidenceBundle,
    critique: Option<&str>,
) -> String {
    let mut out = format!(
        "{task}: {tag}\n\
         Answer the question using only the evidence below. Reason step by step,\n\
         then finish with exactly these sections:\n\
         {answer}: <option label{or_answer}>\n\
         {explanation}: <justification grounded in the evidence>\n\
         {confidence}: <number between 0 and 1>\n\n",
        task = p::TASK,
        tag = p::TASK_DECIDE,
        answer = p::ANSWER,
        or_answer = if options.is_some() { "" } else { " or short answer" },
        explanation = p::EXPLANATION,
        confidence = p::CONFIDENCE,
    );
    let _ = writeln!(out, "{}: {question}", p::QUESTION);
    if let Some(critique) = critique {
        let _ = writeln!(out, "{}: {critique}", p::CRITIQUE);
    }
    if let Some(options) = options {
        let _ = writeln!(out, "{}:", p::OPTIONS);
        for (label, text) in options {
            let _ = writeln!(out, "{label}: {text}");
        }
    }
    push_evidence(&mut out, evidence);
    out
}

pub fn validate_prompt(decision: &Decision, question: &str, evidence: &EvidenceBundle) -> String {
    let mut out = format!(
        "{task}: {tag}\n\
         Review the answer for consistency with the evidence, factual support,\n\
         and completeness. Respond with exactly these sections:\n\
         {verdict}: ACCEPT or REVISE\n\
         {critique}: <what to fix, if anything>\n\n",
        task = p::TASK,
        tag = p::TASK_VALIDATE,
        verdict = p::VERDICT,
        critique = p::CRITIQUE,
    );
    let answer = decision
        .answer_label
        .as_deref()
        .unwrap_or(&decision.answer_text);
    let _ = writeln!(out, "{}: {question}", p::QUESTION);
    let _ = writeln!(out, "{}: {answer}", p::ANSWER);
    let _ = writeln!(out, "{}: {}", p::EXPLANATION, decision.explanation);
    let _ = writeln!(out, "{}: {}", p::CONFIDENCE, decision.confidence);
    push_evidence(&mut out, evidence);
    out
}

pub fn condense_prompt(query: &str, text: &str) -> String {
    format!(
        "{task}: {tag}\n\
         Shorten the evidence so it directly addresses the query, dropping\n\
         redundant or irrelevant material. Respond with the condensed text only.\n\
         {query_label}: {query}\n\
         {evidence}:\n{text}",
        task = p::TASK,
        tag = p::TASK_CONDENSE,
        query_label = p::QUERY,
        evidence = p::EVIDENCE,
    )
}
