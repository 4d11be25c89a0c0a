//! Two-stage majority voting over sampled responses.
//!
//! Stage 1 keeps a surface string when it appears (under any label) in
//! strictly more than half of the responses. Stage 2 gives each kept surface
//! the label found in the most responses; ties go to the label that shows up
//! first (lowest sample index, then position in that response).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{dedup, parse_response};
use crate::corpus::Mention;
use crate::transcript::{ScLevel, SentenceRun};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VoteError {
    #[error("cannot vote over zero responses")]
    NoResponses,
    #[error("run {sentence_id}: {message}")]
    Shape {
        sentence_id: String,
        message: String,
    },
}

/// Which unit stage 1 counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    /// Count surfaces regardless of label, then pick the majority label.
    #[default]
    SurfaceThenLabel,
    /// Count exact `(surface, label)` pairs; no separate label stage.
    ExactPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateAudit {
    pub surface: String,
    /// Responses containing the candidate.
    pub appearances: usize,
    /// Per-label response counts, in first-occurrence order.
    pub labels: Vec<LabelCount>,
    pub kept: bool,
    /// More than one label shared the top count.
    pub tie: bool,
    pub chosen: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteResult {
    pub n: usize,
    pub mentions: Vec<Mention>,
    pub audit: Vec<CandidateAudit>,
}

impl VoteResult {
    pub fn has_tie(&self) -> bool {
        self.audit.iter().any(|a| a.tie)
    }
}

pub fn vote(responses: &[Vec<Mention>]) -> Result<VoteResult, VoteError> {
    vote_with(responses, VoteMode::SurfaceThenLabel)
}

type Pos = (usize, usize);

struct Candidate {
    surface: String,
    first: Pos,
    appearances: usize,
    /// label -> (responses containing it, first occurrence)
    labels: Vec<(String, usize, Pos)>,
}

pub fn vote_with(responses: &[Vec<Mention>], mode: VoteMode) -> Result<VoteResult, VoteError> {
    let n = responses.len();
    if n == 0 {
        return Err(VoteError::NoResponses);
    }

    let mut index: HashMap<(String, Option<String>), usize> = HashMap::new();
    let mut cands: Vec<Candidate> = Vec::new();
    for (r, resp) in responses.iter().enumerate() {
        let mut counted_here: Vec<usize> = Vec::new();
        let mut labels_here: Vec<(usize, &str)> = Vec::new();
        for (p, m) in resp.iter().enumerate() {
            let key = match mode {
                VoteMode::SurfaceThenLabel => (m.surface.clone(), None),
                VoteMode::ExactPair => (m.surface.clone(), Some(m.label.clone())),
            };
            let ci = *index.entry(key).or_insert_with(|| {
                cands.push(Candidate {
                    surface: m.surface.clone(),
                    first: (r, p),
                    appearances: 0,
                    labels: Vec::new(),
                });
                cands.len() - 1
            });
            // one response is one voter per candidate
            if !counted_here.contains(&ci) {
                counted_here.push(ci);
                cands[ci].appearances += 1;
            }
            if labels_here.contains(&(ci, m.label.as_str())) {
                continue;
            }
            labels_here.push((ci, m.label.as_str()));
            let c = &mut cands[ci];
            match c.labels.iter_mut().find(|(l, _, _)| *l == m.label) {
                Some(entry) => entry.1 += 1,
                None => c.labels.push((m.label.clone(), 1, (r, p))),
            }
        }
    }

    let mut audit = Vec::with_capacity(cands.len());
    let mut kept: Vec<(usize, Pos, Mention)> = Vec::new();
    for c in &cands {
        let is_kept = c.appearances * 2 > n;
        let top = c.labels.iter().map(|(_, k, _)| *k).max().unwrap_or(0);
        let tied: Vec<&(String, usize, Pos)> =
            c.labels.iter().filter(|(_, k, _)| *k == top).collect();
        let winner = tied
            .iter()
            .min_by_key(|(_, _, first)| *first)
            .map(|(l, _, _)| l.clone());
        if is_kept {
            let label = winner.clone().expect("kept candidate has a label");
            kept.push((
                c.appearances,
                c.first,
                Mention::new(c.surface.clone(), label),
            ));
        }
        audit.push(CandidateAudit {
            surface: c.surface.clone(),
            appearances: c.appearances,
            labels: c
                .labels
                .iter()
                .map(|(label, count, _)| LabelCount {
                    label: label.clone(),
                    count: *count,
                })
                .collect(),
            kept: is_kept,
            tie: tied.len() > 1,
            chosen: if is_kept { winner } else { None },
        });
    }
    kept.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(VoteResult {
        n,
        mentions: kept.into_iter().map(|(_, _, m)| m).collect(),
        audit,
    })
}

/// Per-sentence voting outcome over a stored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunVote {
    pub sentence_id: String,
    pub mentions: Vec<Mention>,
    /// One entry per vote taken (per label turn, or one across instances).
    pub votes: Vec<VoteResult>,
}

fn shape(run: &SentenceRun, message: impl Into<String>) -> VoteError {
    VoteError::Shape {
        sentence_id: run.sentence_id.clone(),
        message: message.into(),
    }
}

/// Union of all parsed turn responses for one dialogue instance.
fn instance_mentions(run: &SentenceRun, instance: usize) -> Result<Vec<Mention>, VoteError> {
    let inst = &run.instances[instance];
    let mut all = Vec::new();
    for turn in &inst.turns {
        if turn.responses.len() != 1 {
            return Err(shape(run, "expected one response per turn"));
        }
        all.extend(parse_response(&turn.responses[0]).mentions);
    }
    Ok(dedup(&all))
}

/// Final mentions for one stored sentence run.
///
/// `level` must match how the run was sampled: question-level runs hold
/// `sc_n` responses per turn in a single instance; sample-level runs hold
/// `sc_n` independent instances with one response per turn. Runs without
/// self-consistency return the union of their single instance.
pub fn vote_run(run: &SentenceRun, level: ScLevel, mode: VoteMode) -> Result<RunVote, VoteError> {
    if level != run.sc {
        return Err(shape(
            run,
            format!(
                "run was sampled at {:?} but {:?} voting was requested",
                run.sc, level
            ),
        ));
    }
    if run.instances.is_empty() {
        return Err(shape(run, "run has no dialogue instances"));
    }
    match level {
        ScLevel::Off => {
            if run.instances.len() != 1 {
                return Err(shape(run, "expected exactly one instance"));
            }
            Ok(RunVote {
                sentence_id: run.sentence_id.clone(),
                mentions: instance_mentions(run, 0)?,
                votes: Vec::new(),
            })
        }
        ScLevel::QuestionLevel => {
            if run.instances.len() != 1 {
                return Err(shape(run, "question-level runs have exactly one instance"));
            }
            let mut votes = Vec::new();
            let mut union = Vec::new();
            for turn in &run.instances[0].turns {
                let parsed: Vec<Vec<Mention>> = turn
                    .responses
                    .iter()
                    .map(|r| parse_response(r).mentions)
                    .collect();
                let v = vote_with(&parsed, mode)?;
                union.extend(v.mentions.iter().cloned());
                votes.push(v);
            }
            Ok(RunVote {
                sentence_id: run.sentence_id.clone(),
                mentions: dedup(&union),
                votes,
            })
        }
        ScLevel::SampleLevel => {
            let per_instance = (0..run.instances.len())
                .map(|i| instance_mentions(run, i))
                .collect::<Result<Vec<_>, _>>()?;
            let v = vote_with(&per_instance, mode)?;
            Ok(RunVote {
                sentence_id: run.sentence_id.clone(),
                mentions: v.mentions.clone(),
                votes: vec![v],
            })
        }
    }
}
