//! The labeled plain-text protocol shared by prompts and responses.
//!
//! Pipeline prompts and the responses they expect are plain text organized
//! into `LABEL:` sections. That keeps the contract portable across
//! providers, trivially parseable, and lets the deterministic stubs read
//! the same prompts a hosted model would.
//!
//! Every pipeline prompt opens with a `TASK:` line naming the request kind,
//! so scripted providers can key behavior off the request tag.

use std::collections::BTreeMap;

/// Label of the request-tag line that opens every pipeline prompt.
pub const TASK: &str = "TASK";

pub const TASK_REFORMULATE: &str = "reformulate";
pub const TASK_DECIDE: &str = "decide";
pub const TASK_VALIDATE: &str = "validate";
pub const TASK_CONDENSE: &str = "condense";

// Prompt section labels.
pub const QUERY: &str = "QUERY";
pub const QUESTION: &str = "QUESTION";
pub const OPTIONS: &str = "OPTIONS";
pub const EVIDENCE: &str = "EVIDENCE";
pub const CRITIQUE: &str = "CRITIQUE";

// Response section labels.
pub const REWRITTEN: &str = "REWRITTEN";
pub const CONCEPTS: &str = "CONCEPTS";
pub const ANSWER: &str = "ANSWER";
pub const EXPLANATION: &str = "EXPLANATION";
pub const CONFIDENCE: &str = "CONFIDENCE";
pub const VERDICT: &str = "VERDICT";

/// Splits `text` into labeled sections.
///
/// A line whose first token is `LABEL:` (case-insensitive, `LABEL` drawn
/// from `labels`) starts a section; its content is the remainder of that
/// line plus every following line up to the next label line, trimmed. The
/// first occurrence of a label wins.
pub fn parse_sections(text: &str, labels: &[&str]) -> BTreeMap<String, String> {
    let mut sections: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<(String, String)> = None;

    for line in text.lines() {
        let label = labels.iter().find(|label| {
            let bytes = line.trim_start().as_bytes();
            bytes.len() > label.len()
                && bytes[..label.len()].eq_ignore_ascii_case(label.as_bytes())
                && bytes[label.len()] == b':'
        });
        if let Some(label) = label {
            if let Some((name, body)) = current.take() {
                sections.entry(name).or_insert(body);
            }
            let trimmed = line.trim_start();
            let rest = trimmed[label.len() + 1..].to_string();
            current = Some((label.to_uppercase(), rest));
        } else if let Some((_, body)) = current.as_mut() {
            body.push('\n');
            body.push_str(line);
        }
    }
    if let Some((name, body)) = current.take() {
        sections.entry(name).or_insert(body);
    }

    sections
        .into_iter()
        .map(|(k, v)| (k, v.trim().to_string()))
        .collect()
}

/// Section content, or empty string when the label is absent.
pub fn section<'a>(sections: &'a BTreeMap<String, String>, label: &str) -> &'a str {
    sections.get(label).map(String::as_str).unwrap_or("")
}
