//! Datasets and label orders. Evaluation subsets are drawn with a seeded shuffle.
//!
//! Sentences carry gold mentions as `(surface, label)` pairs. Character
//! offsets from the source file are kept alongside when present but never
//! take part in matching.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("sentence {id}: gold mention {surface:?} is not a substring of the text")]
    Integrity { id: String, surface: String },
    #[error("duplicate sentence id {0:?}")]
    DuplicateId(String),
    #[error("sentence {id}: gold label {label:?} is missing from the label order")]
    UnknownLabel { id: String, label: String },
    #[error("invalid label order: {0}")]
    LabelOrder(String),
    #[error("{0}")]
    Argument(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
        }
    }

    /// Separator used when gluing tokens back into running text.
    pub fn token_joiner(self) -> &'static str {
        match self {
            Language::Zh => "",
            Language::En => " ",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zh" => Ok(Language::Zh),
            "en" => Ok(Language::En),
            other => Err(CorpusError::Argument(format!("unknown language {other:?}"))),
        }
    }
}

/// A `(surface, label)` pair: one prediction or one gold annotation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mention {
    #[serde(rename = "text")]
    pub surface: String,
    pub label: String,
}

impl Mention {
    pub fn new(surface: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            label: label.into(),
        }
    }
}

/// Character offsets `[start, end)` of a gold mention, when the source had them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    /// Multiset: repeated pairs are kept.
    pub gold: Vec<Mention>,
    /// Parallel to `gold`.
    pub spans: Vec<Option<Span>>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, text: impl Into<String>, gold: Vec<Mention>) -> Self {
        let spans = vec![None; gold.len()];
        Self {
            id: id.into(),
            text: text.into(),
            gold,
            spans,
        }
    }

    fn check_integrity(&self) -> Result<()> {
        for m in &self.gold {
            if m.surface.trim().is_empty() || !self.text.contains(&m.surface) {
                return Err(CorpusError::Integrity {
                    id: self.id.clone(),
                    surface: m.surface.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderProvenance {
    Manual,
    ModelProposed,
}

/// The sequence in which labels are asked about in a decomposed dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelOrder {
    labels: Vec<String>,
    pub provenance: OrderProvenance,
}

impl LabelOrder {
    pub fn new(labels: Vec<String>, provenance: OrderProvenance) -> Result<Self> {
        if labels.is_empty() {
            return Err(CorpusError::LabelOrder("no labels".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.trim().is_empty() {
                return Err(CorpusError::LabelOrder("empty label".into()));
            }
            if !seen.insert(l.as_str()) {
                return Err(CorpusError::LabelOrder(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels, provenance })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }
}

/// Read a label-order file: one label per line, blank lines ignored.
pub fn load_label_order(path: &Path, provenance: OrderProvenance) -> Result<LabelOrder> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    parse_label_order(&raw, provenance)
}

pub fn parse_label_order(raw: &str, provenance: OrderProvenance) -> Result<LabelOrder> {
    let labels: Vec<String> = raw
        .lines()
        .map(|l| l.trim().trim_start_matches('\u{feff}'))
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if labels.is_empty() {
        return Err(CorpusError::LabelOrder("label-order file is empty".into()));
    }
    LabelOrder::new(labels, provenance)
}

pub fn write_label_order(path: &Path, order: &LabelOrder) -> Result<()> {
    let mut body = order.labels.join("\n");
    body.push('\n');
    fs::write(path, body).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Conll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub language: Language,
    pub sentences: Vec<Sentence>,
    /// Labels as presented to the model, in display order. Same set as
    /// `label_order`, possibly ordered differently.
    pub label_set: Vec<String>,
    pub label_order: LabelOrder,
}

impl Dataset {
    /// Assemble a dataset and enforce its invariants.
    pub fn new(
        name: impl Into<String>,
        language: Language,
        sentences: Vec<Sentence>,
        label_order: LabelOrder,
    ) -> Result<Self> {
        if sentences.is_empty() {
            return Err(CorpusError::Argument("dataset has no sentences".into()));
        }
        let mut ids = HashSet::new();
        for s in &sentences {
            if !ids.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
            s.check_integrity()?;
            for m in &s.gold {
                if !label_order.contains(&m.label) {
                    return Err(CorpusError::UnknownLabel {
                        id: s.id.clone(),
                        label: m.label.clone(),
                    });
                }
            }
        }
        Ok(Self {
            name: name.into(),
            language,
            label_set: label_order.labels().to_vec(),
            sentences,
            label_order,
        })
    }

    /// Replace the display label set; it must be a permutation of the order.
    pub fn with_label_set(mut self, label_set: Vec<String>) -> Result<Self> {
        let a: HashSet<&str> = label_set.iter().map(String::as_str).collect();
        let b: HashSet<&str> = self
            .label_order
            .labels()
            .iter()
            .map(String::as_str)
            .collect();
        if a != b || a.len() != label_set.len() {
            return Err(CorpusError::LabelOrder(
                "label set and label order must contain the same labels".into(),
            ));
        }
        self.label_set = label_set;
        Ok(self)
    }

    pub fn load(
        path: &Path,
        format: DatasetFormat,
        language: Language,
        label_order: LabelOrder,
    ) -> Result<Self> {
        let sentences = load_sentences(path, format, language)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(name, language, sentences, label_order)
    }

    pub fn get(&self, id: &str) -> Option<&Sentence> {
        self.sentences.iter().find(|s| s.id == id)
    }

    /// Draw `n` sentences without replacement. See [`SplitMix64`] for the
    /// generator; the selected sentences keep their original corpus order.
    pub fn sample_subset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 || n > self.sentences.len() {
            return Err(CorpusError::Argument(format!(
                "subset size {n} must be in 1..={}",
                self.sentences.len()
            )));
        }
        let mut picked = shuffled_indices(self.sentences.len(), seed);
        picked.truncate(n);
        picked.sort_unstable();
        Ok(Dataset {
            sentences: picked
                .into_iter()
                .map(|i| self.sentences[i].clone())
                .collect(),
            ..self.clone()
        })
    }
}

/// SplitMix64 (Steele, Lea & Flood 2014).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Fisher-Yates over `0..len`, drawing `j = next_u64() % (i + 1)` for
/// `i = len-1 .. 1`.
pub fn shuffled_indices(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = SplitMix64::new(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    idx
}

#[derive(Debug, Serialize, Deserialize)]
struct EntityRecord {
    text: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SentenceRecord {
    id: String,
    text: String,
    #[serde(default)]
    entities: Vec<EntityRecord>,
}

/// Load sentences without label-set checks (also used for demonstrations).
pub fn load_sentences(
    path: &Path,
    format: DatasetFormat,
    language: Language,
) -> Result<Vec<Sentence>> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let sentences = match format {
        DatasetFormat::Jsonl => parse_jsonl(&raw)?,
        DatasetFormat::Conll => parse_conll(&raw, language)?,
    };
    let mut ids = HashSet::new();
    for s in &sentences {
        if !ids.insert(s.id.as_str()) {
            return Err(CorpusError::DuplicateId(s.id.clone()));
        }
        s.check_integrity()?;
    }
    Ok(sentences)
}

pub fn parse_jsonl(raw: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        let mut gold = Vec::with_capacity(rec.entities.len());
        let mut spans = Vec::with_capacity(rec.entities.len());
        for e in rec.entities {
            spans.push(match (e.start, e.end) {
                (Some(start), Some(end)) => Some(Span { start, end }),
                _ => None,
            });
            gold.push(Mention::new(e.text, e.label));
        }
        out.push(Sentence {
            id: rec.id,
            text: rec.text,
            gold,
            spans,
        });
    }
    Ok(out)
}

/// Parse CoNLL-style columns (token first, tag last; tab or space separated,
/// blank line between sentences). Accepts BIO and BIOES tags. Sentence ids
/// are `s1`, `s2`, ... in file order.
pub fn parse_conll(raw: &str, language: Language) -> Result<Vec<Sentence>> {
    struct Open {
        label: String,
        first: usize,
    }
    let joiner = language.token_joiner();
    let mut out = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut mentions: Vec<(usize, usize, String)> = Vec::new();
    let mut open: Option<Open> = None;

    let mut flush = |tokens: &mut Vec<String>,
                     mentions: &mut Vec<(usize, usize, String)>,
                     open: &mut Option<Open>| {
        if let Some(o) = open.take() {
            mentions.push((o.first, tokens.len(), o.label));
        }
        if tokens.is_empty() {
            return;
        }
        // char offset of each token start
        let mut starts = Vec::with_capacity(tokens.len() + 1);
        let mut pos = 0;
        for (k, t) in tokens.iter().enumerate() {
            if k > 0 {
                pos += joiner.chars().count();
            }
            starts.push(pos);
            pos += t.chars().count();
        }
        let text = tokens.join(joiner);
        let mut gold = Vec::new();
        let mut spans = Vec::new();
        for (a, b, label) in mentions.drain(..) {
            let surface = tokens[a..b].join(joiner);
            let start = starts[a];
            spans.push(Some(Span {
                start,
                end: start + surface.chars().count(),
            }));
            gold.push(Mention::new(surface, label));
        }
        out.push(Sentence {
            id: format!("s{}", out.len() + 1),
            text,
            gold,
            spans,
        });
        tokens.clear();
    };

    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut tokens, &mut mentions, &mut open);
            continue;
        }
        if trimmed.starts_with("-DOCSTART-") {
            continue;
        }
        let cols: Vec<&str> = trimmed
            .split(['\t', ' '])
            .filter(|c| !c.is_empty())
            .collect();
        if cols.len() < 2 {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: format!("expected token and tag columns, got {trimmed:?}"),
            });
        }
        let token = cols[0].to_string();
        let tag = cols[cols.len() - 1];
        let idx = tokens.len();
        let (prefix, label) = match tag.split_once('-') {
            _ if tag == "O" => ("O", ""),
            Some((p, l)) if !l.is_empty() => (p, l),
            _ => {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: format!("unrecognized tag {tag:?}"),
                })
            }
        };
        match prefix {
            "O" => {
                if let Some(o) = open.take() {
                    mentions.push((o.first, idx, o.label));
                }
            }
            "B" | "S" => {
                if let Some(o) = open.take() {
                    mentions.push((o.first, idx, o.label));
                }
                open = Some(Open {
                    label: label.to_string(),
                    first: idx,
                });
            }
            "I" | "E" => {
                let continues = matches!(&open, Some(o) if o.label == label);
                if !continues {
                    if let Some(o) = open.take() {
                        mentions.push((o.first, idx, o.label));
                    }
                    open = Some(Open {
                        label: label.to_string(),
                        first: idx,
                    });
                }
            }
            other => {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: format!("unknown tag prefix {other:?}"),
                })
            }
        }
        tokens.push(token);
        if prefix == "S" || prefix == "E" {
            if let Some(o) = open.take() {
                mentions.push((o.first, idx + 1, o.label));
            }
        }
    }
    flush(&mut tokens, &mut mentions, &mut open);
    Ok(out)
}

/// Write sentences in the JSONL schema `load_dataset` reads.
pub fn write_sentences(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for s in sentences {
        let rec = SentenceRecord {
            id: s.id.clone(),
            text: s.text.clone(),
            entities: s
                .gold
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let span = s.spans.get(k).copied().flatten();
                    EntityRecord {
                        text: m.surface.clone(),
                        label: m.label.clone(),
                        start: span.map(|sp| sp.start),
                        end: span.map(|sp| sp.end),
                    }
                })
                .collect(),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
