//! Syntactic annotation sidecars and their rendering into prompt text.
//!
//! Annotations are produced outside this crate (by a parser exporter) and
//! read from a JSONL sidecar keyed by sentence id. This module validates them
//! and prints the bodies that get spliced into prompts.

mod fetch;
mod tree;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Language, Sentence};
use crate::http::TransportError;
use crate::pylit;

pub use fetch::{fetch_annotations, FetchOptions};
pub use tree::{Tree, TreeError};

#[derive(Debug, Error)]
pub enum SyntaxError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("annotation {id}: {message}")]
    Record { id: String, message: String },
    #[error("sentence {id} has no {kind} annotation")]
    Missing { id: String, kind: SyntaxKind },
    #[error("{kind} cannot be used here: {reason}")]
    Unsupported { kind: SyntaxKind, reason: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("annotation service contract violated: {0}")]
    Contract(String),
}

pub type Result<T, E = SyntaxError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntaxKind {
    Segmentation,
    NounPhrases,
    Pos,
    Constituency,
    Dependency,
}

impl SyntaxKind {
    pub const ALL: [SyntaxKind; 5] = [
        SyntaxKind::Segmentation,
        SyntaxKind::NounPhrases,
        SyntaxKind::Pos,
        SyntaxKind::Constituency,
        SyntaxKind::Dependency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SyntaxKind::Segmentation => "segmentation",
            SyntaxKind::NounPhrases => "noun_phrases",
            SyntaxKind::Pos => "pos",
            SyntaxKind::Constituency => "constituency",
            SyntaxKind::Dependency => "dependency",
        }
    }

    /// Word segmentation only exists for Chinese.
    pub fn available_for(self, language: Language) -> bool {
        !(self == SyntaxKind::Segmentation && language == Language::En)
    }

    /// Kinds a parsing tool can supply. No reliable noun-phrase extractor is
    /// assumed, so noun phrases are hint-only.
    pub fn tool_capable(self) -> bool {
        self != SyntaxKind::NounPhrases
    }
}

impl fmt::Display for SyntaxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyntaxKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        SyntaxKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown syntax kind {s:?}"))
    }
}

/// `[dependent, head, relation]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(String, String, String)", into = "(String, String, String)")]
pub struct DepArc {
    pub dependent: String,
    pub head: String,
    pub relation: String,
}

impl DepArc {
    pub fn new(dependent: &str, head: &str, relation: &str) -> Self {
        Self {
            dependent: dependent.into(),
            head: head.into(),
            relation: relation.into(),
        }
    }

    pub fn is_root(&self) -> bool {
        self.relation.eq_ignore_ascii_case("root")
    }
}

impl From<(String, String, String)> for DepArc {
    fn from((dependent, head, relation): (String, String, String)) -> Self {
        Self {
            dependent,
            head,
            relation,
        }
    }
}

impl From<DepArc> for (String, String, String) {
    fn from(a: DepArc) -> Self {
        (a.dependent, a.head, a.relation)
    }
}

/// One sidecar record. Absent fields mean the kind was not requested.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SyntacticAnnotation {
    pub sentence_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<(String, String)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun_phrases: Option<Vec<String>>,
    /// Bracketed tree, kept byte-for-byte as the parser printed it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constituency: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependency: Option<Vec<DepArc>>,
    /// Exporter bookkeeping (parser version and such); passed through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl SyntacticAnnotation {
    pub fn new(sentence_id: impl Into<String>) -> Self {
        Self {
            sentence_id: sentence_id.into(),
            ..Default::default()
        }
    }

    pub fn has(&self, kind: SyntaxKind) -> bool {
        match kind {
            SyntaxKind::Segmentation => self.segmentation.is_some(),
            SyntaxKind::NounPhrases => self.noun_phrases.is_some(),
            SyntaxKind::Pos => self.pos.is_some(),
            SyntaxKind::Constituency => self.constituency.is_some(),
            SyntaxKind::Dependency => self.dependency.is_some(),
        }
    }

    /// Keep only the listed kinds.
    pub fn restrict_to(&mut self, kinds: &[SyntaxKind]) {
        let keep = |k: SyntaxKind| kinds.contains(&k);
        if !keep(SyntaxKind::Segmentation) {
            self.segmentation = None;
        }
        if !keep(SyntaxKind::NounPhrases) {
            self.noun_phrases = None;
        }
        if !keep(SyntaxKind::Pos) {
            self.pos = None;
        }
        if !keep(SyntaxKind::Constituency) {
            self.constituency = None;
        }
        if !keep(SyntaxKind::Dependency) {
            self.dependency = None;
        }
    }

    fn tokens(&self) -> Option<Vec<&str>> {
        if let Some(seg) = &self.segmentation {
            return Some(seg.iter().map(String::as_str).collect());
        }
        self.pos
            .as_ref()
            .map(|p| p.iter().map(|(t, _)| t.as_str()).collect())
    }

    /// Record-level invariants that need no sentence text.
    pub fn validate(&self) -> Result<()> {
        let err = |message: String| SyntaxError::Record {
            id: self.sentence_id.clone(),
            message,
        };
        if self.sentence_id.is_empty() {
            return Err(err("empty sentence_id".into()));
        }
        if let Some(seg) = &self.segmentation {
            if seg.iter().any(|t| t.is_empty()) {
                return Err(err("empty segmentation token".into()));
            }
        }
        if let (Some(seg), Some(pos)) = (&self.segmentation, &self.pos) {
            let pos_tokens: Vec<&String> = pos.iter().map(|(t, _)| t).collect();
            if seg.len() != pos.len() || seg.iter().zip(&pos_tokens).any(|(a, b)| a != *b) {
                return Err(err("pos tokens disagree with segmentation".into()));
            }
        }
        if let Some(c) = &self.constituency {
            Tree::parse(c).map_err(|e| err(format!("constituency: {e}")))?;
        }
        if let Some(arcs) = &self.dependency {
            let roots = arcs.iter().filter(|a| a.is_root()).count();
            if roots != 1 {
                return Err(err(format!(
                    "dependency has {roots} root relations, expected 1"
                )));
            }
            if let Some(tokens) = self.tokens() {
                let known: HashSet<&str> = tokens.into_iter().collect();
                for a in arcs {
                    for t in [&a.dependent, &a.head] {
                        if !known.contains(t.as_str()) {
                            return Err(err(format!("dependency references unknown token {t:?}")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Invariants that relate the annotation to its sentence.
    pub fn validate_against(&self, sentence: &Sentence) -> Result<()> {
        let err = |message: String| SyntaxError::Record {
            id: self.sentence_id.clone(),
            message,
        };
        let squash = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
        let text = squash(&sentence.text);
        if let Some(c) = &self.constituency {
            let tree = Tree::parse(c).map_err(|e| err(format!("constituency: {e}")))?;
            if squash(&tree.leaves().concat()) != text {
                return Err(err(
                    "constituency leaves do not reconstruct the sentence".into()
                ));
            }
        }
        if let Some(arcs) = &self.dependency {
            for a in arcs {
                for t in [&a.dependent, &a.head] {
                    if !text.contains(&squash(t)) {
                        return Err(err(format!("dependency token {t:?} not in sentence")));
                    }
                }
            }
        }
        Ok(())
    }
}

pub type AnnotationMap = BTreeMap<String, SyntacticAnnotation>;

#[derive(Debug, Deserialize)]
struct SidecarLine {
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    sentence_id: Option<String>,
}

/// Load and validate a sidecar JSONL file.
///
/// Records that carry an `error` field (exporter-side parse failures) are
/// skipped with a warning; any other invalid record fails the load.
pub fn load_annotations(path: &Path) -> Result<AnnotationMap> {
    let raw = fs::read_to_string(path).map_err(|source| SyntaxError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_annotations(&raw)
}

pub fn parse_annotations(raw: &str) -> Result<AnnotationMap> {
    let mut out = AnnotationMap::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| SyntaxError::Malformed {
            line: i + 1,
            message,
        };
        let head: SidecarLine = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if let Some(e) = head.error {
            log::warn!(
                "skipping annotation for {}: exporter reported {e}",
                head.sentence_id.as_deref().unwrap_or("?")
            );
            continue;
        }
        let ann: SyntacticAnnotation =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        ann.validate()?;
        if out.contains_key(&ann.sentence_id) {
            return Err(malformed(format!(
                "duplicate sentence_id {:?}",
                ann.sentence_id
            )));
        }
        out.insert(ann.sentence_id.clone(), ann);
    }
    Ok(out)
}

/// Check annotations against their sentences. Returns warnings for
/// annotations whose id matches no sentence; invalid records are errors.
pub fn cross_check(annotations: &AnnotationMap, sentences: &[Sentence]) -> Result<Vec<String>> {
    let by_id: BTreeMap<&str, &Sentence> = sentences.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut warnings = Vec::new();
    for (id, ann) in annotations {
        match by_id.get(id.as_str()) {
            Some(s) => ann.validate_against(s)?,
            None => warnings.push(format!("annotation for unknown sentence {id:?}")),
        }
    }
    Ok(warnings)
}

pub fn write_annotations<'a>(
    path: &Path,
    annotations: impl IntoIterator<Item = &'a SyntacticAnnotation>,
) -> Result<()> {
    let io = |source| SyntaxError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for a in annotations {
        let line = serde_json::to_string(a).expect("annotation serializes");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// The body of a syntactic block, without its header line prefix.
///
/// Segmentation and noun phrases print as Python lists, POS as
/// space-separated `token/TAG`, constituency verbatim, dependency as a list
/// of `[dependent, head, relation]` lists.
pub fn render_body(a: &SyntacticAnnotation, kind: SyntaxKind) -> Result<String> {
    let missing = || SyntaxError::Missing {
        id: a.sentence_id.clone(),
        kind,
    };
    Ok(match kind {
        SyntaxKind::Segmentation => {
            pylit::repr_list(a.segmentation.as_deref().ok_or_else(missing)?)
        }
        SyntaxKind::NounPhrases => pylit::repr_list(a.noun_phrases.as_deref().ok_or_else(missing)?),
        SyntaxKind::Pos => a
            .pos
            .as_ref()
            .ok_or_else(missing)?
            .iter()
            .map(|(t, tag)| format!("{t}/{tag}"))
            .collect::<Vec<_>>()
            .join(" "),
        SyntaxKind::Constituency => a.constituency.clone().ok_or_else(missing)?,
        SyntaxKind::Dependency => {
            let arcs: Vec<String> = a
                .dependency
                .as_ref()
                .ok_or_else(missing)?
                .iter()
                .map(|d| pylit::repr_list(&[&d.dependent, &d.head, &d.relation]))
                .collect();
            format!("[{}]", arcs.join(", "))
        }
    })
}
