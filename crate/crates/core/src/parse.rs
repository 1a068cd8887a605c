//! Extraction of bracketed answers from free-form model output.
//!
//! Models are asked to wrap their final answer in square brackets. The
//! scanner keeps only innermost balanced `[...]` spans; stray brackets are
//! ignored.

use crate::graph::{name_key, normalize_name};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no bracketed answer found")]
    NoBrackets,
    #[error("no bracketed [yes] or [no] found")]
    NoVerdict,
    #[error("answer {0:?} is not one of the offered candidates")]
    NotACandidate(String),
    #[error("no candidates offered")]
    NoCandidates,
}

/// Contents of the innermost balanced bracket spans, in order of appearance.
pub fn bracket_spans(raw: &str) -> Vec<&str> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, c) in raw.char_indices() {
        match c {
            '[' => open = Some(i),
            ']' => {
                if let Some(start) = open.take() {
                    spans.push(&raw[start + 1..i]);
                }
            }
            _ => {}
        }
    }
    spans
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedConcepts {
    pub concepts: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Yes,
    No,
}

impl Verdict {
    pub fn is_yes(self) -> bool {
        self == Verdict::Yes
    }
}

/// Bracketed concept names, deduplicated case-insensitively and capped at
/// `limit`. An empty answer, or one holding only empty brackets, is a valid
/// "no concepts" reply.
pub fn parse_concepts(raw: &str, limit: usize) -> Result<ParsedConcepts, ParseError> {
    let spans = bracket_spans(raw);
    if spans.is_empty() && !raw.trim().is_empty() {
        return Err(ParseError::NoBrackets);
    }
    let mut seen = HashSet::new();
    let concepts = spans
        .into_iter()
        .map(normalize_name)
        .filter(|s| !s.is_empty())
        .filter(|s| seen.insert(s.to_lowercase()))
        .take(limit)
        .collect();
    Ok(ParsedConcepts { concepts })
}

/// The last bracketed `yes`/`no` wins; reasoning before it is ignored.
pub fn parse_verdict(raw: &str) -> Result<Verdict, ParseError> {
    bracket_spans(raw)
        .into_iter()
        .rev()
        .find_map(|s| match s.trim().to_lowercase().as_str() {
            "yes" => Some(Verdict::Yes),
            "no" => Some(Verdict::No),
            _ => None,
        })
        .ok_or(ParseError::NoVerdict)
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for q in ['\'', '"'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return s[1..s.len() - 1].trim();
        }
    }
    s
}

/// The last bracketed span names one of `candidates` (returned in its stored
/// form), or is empty for "no match".
pub fn parse_match(raw: &str, candidates: &[String]) -> Result<Option<String>, ParseError> {
    if candidates.is_empty() {
        return Err(ParseError::NoCandidates);
    }
    let last = *bracket_spans(raw).last().ok_or(ParseError::NoBrackets)?;
    let answer = strip_quotes(last);
    if answer.is_empty() {
        return Ok(None);
    }
    let key = name_key(answer);
    candidates
        .iter()
        .find(|c| name_key(c) == key)
        .cloned()
        .map(Some)
        .ok_or_else(|| ParseError::NotACandidate(answer.to_string()))
}
