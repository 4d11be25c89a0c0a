//! Turning free-text model responses into mention lists and back.
//!
//! The requested answer format is a list of single-pair objects,
//! `[{'surface': 'label'}, ...]`, in Python or JSON quoting.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Mention;
use crate::pylit::{self, Literal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    /// The response was exactly one answer list.
    Clean,
    /// The answer list was found amid other text.
    RecoveredFromProse,
    CodeFenceStripped,
    /// Entries (or the whole response) could not be read as mentions.
    MalformedDropped,
    DuplicateCollapsed,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub mentions: Vec<Mention>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParseOutcome {
    pub fn has(&self, d: Diagnostic) -> bool {
        self.diagnostics.contains(&d)
    }
}

/// Remove Markdown code-fence markers and their language tags.
fn strip_fences(text: &str) -> Option<String> {
    if !text.contains("```") {
        return None;
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find("```") {
        out.push_str(&rest[..i]);
        rest = &rest[i + 3..];
        let tag_len = rest
            .char_indices()
            .find(|(_, c)| !c.is_ascii_alphanumeric())
            .map(|(k, _)| k)
            .unwrap_or(rest.len());
        rest = &rest[tag_len..];
    }
    out.push_str(rest);
    Some(out)
}

/// Read an answer list. `None` if `lit` is not a list of objects.
fn answer_pairs(lit: &Literal) -> Option<(Vec<(String, String)>, bool)> {
    let Literal::List(items) = lit else {
        return None;
    };
    let mut pairs = Vec::new();
    let mut dropped = false;
    for item in items {
        let Literal::Dict(entries) = item else {
            return None;
        };
        for (k, v) in entries {
            match (k, v) {
                (Literal::Str(k), Literal::Str(v)) => pairs.push((k.clone(), v.clone())),
                _ => dropped = true,
            }
        }
    }
    Some((pairs, dropped))
}

/// Extract mentions from a model response. Never fails: unreadable input
/// yields no mentions and a `MalformedDropped` diagnostic.
pub fn parse_response(text: &str) -> ParseOutcome {
    let mut diagnostics = Vec::new();
    let stripped = strip_fences(text);
    if stripped.is_some() {
        diagnostics.push(Diagnostic::CodeFenceStripped);
    }
    let body = stripped.as_deref().unwrap_or(text);

    let chosen = pylit::scan_lists(body)
        .into_iter()
        .rev()
        .find_map(|(range, lit)| answer_pairs(&lit).map(|p| (range, p)));
    let Some((range, (pairs, dropped))) = chosen else {
        diagnostics.push(Diagnostic::MalformedDropped);
        return ParseOutcome {
            mentions: Vec::new(),
            diagnostics,
        };
    };

    let chars: Vec<char> = body.chars().collect();
    let outside = chars[..range.start]
        .iter()
        .chain(&chars[range.end..])
        .any(|c| !c.is_whitespace());
    diagnostics.push(if outside {
        Diagnostic::RecoveredFromProse
    } else {
        Diagnostic::Clean
    });

    let mut malformed = dropped;
    let mut duplicate = false;
    let mut seen = HashSet::new();
    let mut mentions = Vec::new();
    for (surface, label) in pairs {
        let m = Mention::new(surface.trim(), label.trim());
        if m.surface.is_empty() {
            malformed = true;
            continue;
        }
        if seen.insert(m.clone()) {
            mentions.push(m);
        } else {
            duplicate = true;
        }
    }
    if malformed {
        diagnostics.push(Diagnostic::MalformedDropped);
    }
    if duplicate {
        diagnostics.push(Diagnostic::DuplicateCollapsed);
    }
    ParseOutcome {
        mentions,
        diagnostics,
    }
}

/// Canonical answer text: `[{'京': '地名'}, ...]`, order preserved.
pub fn serialize_answer(mentions: &[Mention]) -> String {
    let items: Vec<String> = mentions
        .iter()
        .map(|m| {
            format!(
                "{{{}: {}}}",
                pylit::repr_str(&m.surface),
                pylit::repr_str(&m.label)
            )
        })
        .collect();
    format!("[{}]", items.join(", "))
}

/// Drop repeated `(surface, label)` pairs, keeping first occurrences.
pub fn dedup(mentions: &[Mention]) -> Vec<Mention> {
    let mut seen = HashSet::new();
    mentions
        .iter()
        .filter(|m| seen.insert(*m))
        .cloned()
        .collect()
}
