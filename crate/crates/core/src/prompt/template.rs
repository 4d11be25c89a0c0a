//! `{name}` templates and the on-disk template pack.
//!
//! A pack is a directory of UTF-8 files, one per slot, named `<slot>.txt`,
//! plus `language.txt` holding `zh` or `en`. One trailing newline is
//! stripped from every file so editors that append one do not change the
//! rendered text. `{{` and `}}` produce literal braces.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use super::{HintPosition, HintSource, PromptError};
use crate::corpus::Language;
use crate::syntax::SyntaxKind;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(src: &str) -> Result<Self, String> {
        let mut pieces = Vec::new();
        let mut text = String::new();
        let mut chars = src.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    text.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    text.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(c) if c.is_ascii_alphanumeric() || c == '_' => name.push(c),
                            Some(c) => {
                                return Err(format!("invalid character {c:?} in placeholder"))
                            }
                            None => return Err("unterminated placeholder".into()),
                        }
                    }
                    if name.is_empty() {
                        return Err("empty placeholder".into());
                    }
                    if !text.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut text)));
                    }
                    pieces.push(Piece::Slot(name));
                }
                '}' => return Err("unmatched '}' (write '}}' for a literal brace)".into()),
                c => text.push(c),
            }
        }
        if !text.is_empty() {
            pieces.push(Piece::Text(text));
        }
        Ok(Self { pieces })
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.as_str()),
                Piece::Text(_) => None,
            })
            .collect()
    }

    /// Fill placeholders. Every placeholder must have a value; checked at
    /// pack load, so a miss here is a programming error.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => {
                    let v = vars
                        .iter()
                        .find(|(k, _)| k == name)
                        .unwrap_or_else(|| panic!("no value for placeholder {{{name}}}"));
                    out.push_str(v.1);
                }
            }
        }
        out
    }
}

/// Placeholders a slot may use, and those it must use.
fn slot_contract(slot: &str) -> Option<(&'static [&'static str], &'static [&'static str])> {
    let head = slot.split('.').next().unwrap_or(slot);
    Some(match head {
        "preamble" => (
            &[
                "label_set",
                "instruction",
                "hint_front",
                "demonstrations",
                "text",
                "tool_info",
            ],
            &["text"],
        ),
        "question" => (&["label", "answer_format", "hint_back"], &["label"]),
        "question_all" => (&["answer_format", "hint_back"], &[]),
        "tool_block" => (&["content"], &["content"]),
        "order_elicitation" => (&["label_set"], &["label_set"]),
        "demonstration" => (&["text", "tool_info", "answer"], &["text", "answer"]),
        "task_instruction" | "task_instruction_tool" | "hint" | "answer_format" => (&[], &[]),
        _ => return None,
    })
}

pub(crate) fn hint_slot(kind: SyntaxKind, position: HintPosition, source: HintSource) -> String {
    format!("hint.{}.{}.{}", kind, position.as_str(), source.as_str())
}

/// The slots a pack for `language` must provide, and no others.
fn expected_slots(language: Language) -> BTreeSet<String> {
    let mut slots: BTreeSet<String> = [
        "preamble",
        "task_instruction",
        "question",
        "question_all",
        "answer_format",
        "order_elicitation",
        "demonstration",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    for kind in SyntaxKind::ALL
        .into_iter()
        .filter(|k| k.available_for(language))
    {
        for pos in [HintPosition::Front, HintPosition::Back] {
            slots.insert(hint_slot(kind, pos, HintSource::SelfAnalysis));
            if kind.tool_capable() {
                slots.insert(hint_slot(kind, pos, HintSource::Tool));
            }
        }
        if kind.tool_capable() {
            slots.insert(format!("task_instruction_tool.{kind}"));
            slots.insert(format!("tool_block.{kind}"));
        }
    }
    slots
}

#[derive(Debug, Clone)]
pub struct TemplatePack {
    pub language: Language,
    pub dir: PathBuf,
    slots: HashMap<String, Template>,
}

impl TemplatePack {
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let err = |path: &Path, message: String| PromptError::Pack {
            path: path.display().to_string(),
            message,
        };
        let entries = fs::read_dir(dir).map_err(|e| err(dir, e.to_string()))?;
        let mut raw: BTreeMap<String, String> = BTreeMap::new();
        for entry in entries {
            let path = entry.map_err(|e| err(dir, e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let mut body = fs::read_to_string(&path).map_err(|e| err(&path, e.to_string()))?;
            if body.ends_with('\n') {
                body.pop();
            }
            raw.insert(stem, body);
        }
        let lang_path = dir.join("language.txt");
        let language: Language = raw
            .remove("language")
            .ok_or_else(|| err(&lang_path, "missing".into()))?
            .trim()
            .parse()
            .map_err(|e: crate::corpus::CorpusError| err(&lang_path, e.to_string()))?;
        Self::from_sources(language, dir, raw)
    }

    /// Build a pack from slot sources already in memory.
    pub fn from_sources(
        language: Language,
        dir: &Path,
        sources: BTreeMap<String, String>,
    ) -> Result<Self, PromptError> {
        let err = |slot: &str, message: String| PromptError::Pack {
            path: dir.join(format!("{slot}.txt")).display().to_string(),
            message,
        };
        let expected = expected_slots(language);
        for slot in &expected {
            if !sources.contains_key(slot) {
                return Err(err(slot, format!("missing template for {language} pack")));
            }
        }
        let mut slots = HashMap::new();
        for (slot, src) in sources {
            if !expected.contains(&slot) {
                return Err(err(&slot, format!("slot not used by a {language} pack")));
            }
            let (allowed, required) = slot_contract(&slot).expect("expected slots have contracts");
            let t = Template::parse(&src).map_err(|m| err(&slot, m))?;
            let used = t.placeholders();
            if let Some(bad) = used.iter().find(|p| !allowed.contains(p)) {
                return Err(err(&slot, format!("unknown placeholder {{{bad}}}")));
            }
            if let Some(miss) = required.iter().find(|p| !used.contains(*p)) {
                return Err(err(&slot, format!("template must use {{{miss}}}")));
            }
            slots.insert(slot, t);
        }
        Ok(Self {
            language,
            dir: dir.to_path_buf(),
            slots,
        })
    }

    pub(crate) fn slot(&self, name: &str) -> Result<&Template, PromptError> {
        self.slots.get(name).ok_or_else(|| PromptError::Pack {
            path: self.dir.join(format!("{name}.txt")).display().to_string(),
            message: "no such template".into(),
        })
    }

    pub(crate) fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        Ok(self.slot(name)?.render(vars))
    }
}
