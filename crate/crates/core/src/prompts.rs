//! Prompt templates and placeholder substitution.
//!
//! Templates ship as plain-text files under `templates/` and are compiled
//! in as defaults; a directory of same-named `.txt` files overrides them at
//! runtime. Placeholders look like `{name}` or `{name:}`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {template} has no binding for placeholder {{{placeholder}}}")]
    MissingBinding {
        template: TemplateName,
        placeholder: String,
    },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    /// System message for generation and edge-check queries.
    System,
    /// Asks for up to `n_max` factors that directly cause `concept`.
    ExpandCausedBy,
    /// Asks for up to `n_max` concepts directly caused by `concept`.
    ExpandCausing,
    /// Asks whether `node0` directly causes `node1`.
    EdgeCheck,
    /// Asks which retrieved reference concept, if any, means `original`.
    NnMatch,
}

impl TemplateName {
    pub const ALL: [TemplateName; 5] = [
        TemplateName::System,
        TemplateName::ExpandCausedBy,
        TemplateName::ExpandCausing,
        TemplateName::EdgeCheck,
        TemplateName::NnMatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::System => "system",
            TemplateName::ExpandCausedBy => "expand_caused_by",
            TemplateName::ExpandCausing => "expand_causing",
            TemplateName::EdgeCheck => "edge_check",
            TemplateName::NnMatch => "nn_match",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateName::System => include_str!("../templates/system.txt"),
            TemplateName::ExpandCausedBy => include_str!("../templates/expand_caused_by.txt"),
            TemplateName::ExpandCausing => include_str!("../templates/expand_causing.txt"),
            TemplateName::EdgeCheck => include_str!("../templates/edge_check.txt"),
            TemplateName::NnMatch => include_str!("../templates/nn_match.txt"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

/// Splits a body into literal text and placeholder names. Anything in braces
/// that is not an identifier (optionally followed by `:`) stays literal.
fn pieces(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut last = 0;
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let rest = &body[i + 1..];
            let ident_len = rest
                .bytes()
                .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
                .count();
            let starts_ok = rest
                .bytes()
                .next()
                .is_some_and(|b| b.is_ascii_alphabetic() || b == b'_');
            if starts_ok {
                let after = &rest[ident_len..];
                let close = if after.starts_with(":}") {
                    Some(2)
                } else if after.starts_with('}') {
                    Some(1)
                } else {
                    None
                };
                if let Some(close) = close {
                    if last < i {
                        out.push(Piece::Text(&body[last..i]));
                    }
                    out.push(Piece::Slot(&rest[..ident_len]));
                    i += 1 + ident_len + close;
                    last = i;
                    continue;
                }
            }
        }
        i += 1;
    }
    if last < body.len() {
        out.push(Piece::Text(&body[last..]));
    }
    out
}

impl PromptTemplate {
    pub fn builtin(name: TemplateName) -> Self {
        Self {
            name,
            body: name.builtin().to_string(),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for p in pieces(&self.body) {
            if let Piece::Slot(s) = p {
                if !seen.contains(&s) {
                    seen.push(s);
                }
            }
        }
        seen
    }

    /// Single-pass substitution: values are inserted verbatim and never
    /// rescanned for placeholders.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        for p in pieces(&self.body) {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => match bindings.get(s) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(TemplateError::MissingBinding {
                            template: self.name,
                            placeholder: s.to_string(),
                        })
                    }
                },
            }
        }
        Ok(out)
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.body.as_bytes()))
    }
}

/// Python-style list literal: `['a', 'b']`.
pub fn format_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("'{s}'")).collect();
    format!("[{}]", quoted.join(", "))
}

/// The full template set used by a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<TemplateName, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            templates: TemplateName::ALL
                .into_iter()
                .map(|n| (n, PromptTemplate::builtin(n)))
                .collect(),
        }
    }
}

impl PromptSet {
    /// Built-in templates, with any `<name>.txt` found in `dir` taking
    /// precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::default();
        for name in TemplateName::ALL {
            let path = dir.join(format!("{}.txt", name.as_str()));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                set.templates.insert(name, PromptTemplate { name, body });
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }

    pub fn system(&self) -> String {
        self.templates[&TemplateName::System].body.clone()
    }

    pub fn expand_caused_by(&self, edges: &str, concept: &str, n_max: usize) -> Result<String, TemplateError> {
        self.get(TemplateName::ExpandCausedBy)
            .render(&expansion_bindings(edges, concept, n_max))
    }

    pub fn expand_causing(&self, edges: &str, concept: &str, n_max: usize) -> Result<String, TemplateError> {
        self.get(TemplateName::ExpandCausing)
            .render(&expansion_bindings(edges, concept, n_max))
    }

    pub fn edge_check(&self, cause: &str, effect: &str) -> Result<String, TemplateError> {
        let b = BTreeMap::from([("node0", cause.to_string()), ("node1", effect.to_string())]);
        self.get(TemplateName::EdgeCheck).render(&b)
    }

    pub fn nn_match(&self, original: &str, retrieved: &[String]) -> Result<String, TemplateError> {
        let b = BTreeMap::from([
            ("original", original.to_string()),
            ("retrieved", format_list(retrieved)),
        ]);
        self.get(TemplateName::NnMatch).render(&b)
    }

    /// Template name -> sha256 of its body.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.templates
            .values()
            .map(|t| (t.name.as_str().to_string(), t.digest()))
            .collect()
    }
}

fn expansion_bindings(edges: &str, concept: &str, n_max: usize) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("edges", edges.to_string()),
        ("concept", concept.to_string()),
        ("n_max", n_max.to_string()),
    ])
}
