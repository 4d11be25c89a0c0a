//! Stored dialogue transcripts: what was asked and what came back.
//!
//! `transcripts.jsonl` holds one dialogue instance per line. A sentence run
//! without self-consistency, or with question-level voting, has one instance;
//! a sample-level run has one per sample.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use crate::prompt::PromptMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScLevel {
    #[default]
    Off,
    QuestionLevel,
    SampleLevel,
}

impl std::str::FromStr for ScLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(ScLevel::Off),
            "question_level" | "question" => Ok(ScLevel::QuestionLevel),
            "sample_level" | "sample" => Ok(ScLevel::SampleLevel),
            other => Err(format!("unknown self-consistency level {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    /// `None` for the single all-labels question of a vanilla prompt.
    pub label: Option<String>,
    pub question: String,
    /// Raw response texts in sample-index order.
    pub responses: Vec<String>,
    /// The answer carried into later turns' context.
    pub context_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueInstance {
    pub instance: usize,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRun {
    pub sentence_id: String,
    pub mode: PromptMode,
    pub sc: ScLevel,
    pub instances: Vec<DialogueInstance>,
}

impl SentenceRun {
    /// Questions asked per instance.
    pub fn question_counts(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.turns.len()).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TranscriptLine {
    sentence_id: String,
    instance: usize,
    instances: usize,
    mode: PromptMode,
    sc: ScLevel,
    turns: Vec<Turn>,
}

/// Serialize a run as transcript lines (each with trailing newline).
pub fn to_lines(run: &SentenceRun) -> String {
    let mut out = String::new();
    for inst in &run.instances {
        let line = TranscriptLine {
            sentence_id: run.sentence_id.clone(),
            instance: inst.instance,
            instances: run.instances.len(),
            mode: run.mode,
            sc: run.sc,
            turns: inst.turns.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("transcript serializes"));
        out.push('\n');
    }
    out
}

/// Read completed sentence runs, in first-appearance order. Incomplete
/// groups (a truncated write) are dropped.
pub fn read_transcripts(path: &Path) -> io::Result<Vec<SentenceRun>> {
    let raw = match fs::read_to_string(path) {
        Ok(r) => r,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (usize, SentenceRun)> = HashMap::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TranscriptLine = match serde_json::from_str(line) {
            Ok(t) => t,
            // a torn final line from an interrupted run
            Err(_) if i + 1 == raw.lines().count() => continue,
            Err(e) => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}: line {}: {e}", path.display(), i + 1),
                ))
            }
        };
        let entry = groups.entry(t.sentence_id.clone()).or_insert_with(|| {
            order.push(t.sentence_id.clone());
            (
                t.instances,
                SentenceRun {
                    sentence_id: t.sentence_id.clone(),
                    mode: t.mode,
                    sc: t.sc,
                    instances: Vec::new(),
                },
            )
        });
        entry.1.instances.push(DialogueInstance {
            instance: t.instance,
            turns: t.turns,
        });
    }
    Ok(order
        .into_iter()
        .filter_map(|id| groups.remove(&id))
        .filter(|(expected, run)| run.instances.len() == *expected)
        .map(|(_, mut run)| {
            run.instances.sort_by_key(|i| i.instance);
            run
        })
        .collect())
}
