//! Running experiments: one dialogue (or several, under sample-level
//! self-consistency) per sentence, persisted to a run directory.
//!
//! Run directory layout:
//! - `raw_responses.jsonl`: every completion, keyed by request digest
//! - `transcripts.jsonl`: one dialogue instance per line, in corpus order
//! - `manifest.json`: config digest, subset, and per-sentence outcome

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::answer::{parse_response, serialize_answer};
use crate::consensus::{vote_with, VoteMode};
use crate::corpus::{Language, Sentence};
use crate::gateway::{CompletionParams, Gateway, GatewayStats};
use crate::prompt::{PromptError, PromptMode, Prompter};
use crate::syntax::{AnnotationMap, SyntacticAnnotation};
use crate::transcript::{read_transcripts, to_lines, DialogueInstance, ScLevel, SentenceRun, Turn};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(
        "run directory {dir} was created with a different configuration \
         (digest {found}, now {expected}); use a new run id"
    )]
    DigestMismatch {
        dir: String,
        expected: String,
        found: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subset {
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub mode: PromptMode,
    pub sc: ScLevel,
    /// Samples per vote when `sc` is on.
    pub sc_n: usize,
    /// Used to fill question-level voted answers into the dialogue.
    pub vote_mode: VoteMode,
    /// `n_samples` is ignored; the sampling level decides it per request.
    pub params: CompletionParams,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.sc == ScLevel::QuestionLevel && self.mode != PromptMode::Decomposed {
            return Err(RunError::Config(
                "question-level self-consistency needs the decomposed prompt".into(),
            ));
        }
        if self.sc != ScLevel::Off && self.sc_n == 0 {
            return Err(RunError::Config("sc_n must be positive".into()));
        }
        if self.workers == 0 {
            return Err(RunError::Config("workers must be positive".into()));
        }
        if self.run_id.is_empty()
            || self.run_id.contains(['/', '\\'])
            || self.run_id.starts_with('.')
        {
            return Err(RunError::Config(format!(
                "unusable run id {:?}",
                self.run_id
            )));
        }
        Ok(())
    }

    fn params_with(&self, n_samples: usize) -> CompletionParams {
        CompletionParams {
            n_samples,
            ..self.params.clone()
        }
    }
}

/// Executes dialogues for single sentences.
pub struct Runner<'a> {
    pub cfg: &'a ExperimentConfig,
    pub prompter: Prompter<'a>,
    pub gateway: &'a Gateway,
}

impl Runner<'_> {
    pub fn new<'a>(
        cfg: &'a ExperimentConfig,
        prompter: Prompter<'a>,
        gateway: &'a Gateway,
    ) -> Result<Runner<'a>, RunError> {
        cfg.validate()?;
        if prompter.plan.mode != cfg.mode {
            return Err(RunError::Config(
                "prompt plan and experiment disagree on the mode".into(),
            ));
        }
        Ok(Runner {
            cfg,
            prompter,
            gateway,
        })
    }

    fn instances(&self) -> usize {
        match self.cfg.sc {
            ScLevel::SampleLevel => self.cfg.sc_n,
            _ => 1,
        }
    }

    /// Instance `i` of a sample-level run uses sample index `i` for every
    /// request, keeping instances independent and individually cacheable.
    fn sample_params(&self, instance: usize) -> (CompletionParams, usize) {
        match self.cfg.sc {
            ScLevel::QuestionLevel => (self.cfg.params_with(self.cfg.sc_n), 0),
            _ => (self.cfg.params_with(1), instance),
        }
    }

    fn ask(
        &self,
        messages: &[crate::prompt::ChatMessage],
        instance: usize,
    ) -> Result<Vec<String>, String> {
        let (params, offset) = self.sample_params(instance);
        if offset == 0 {
            return self
                .gateway
                .complete(messages, &params)
                .map_err(|e| e.to_string());
        }
        let request = params.request(messages, offset);
        self.gateway
            .complete_one(&request)
            .map(|r| vec![r])
            .map_err(|e| e.to_string())
    }

    pub fn run_vanilla(
        &self,
        sentence: &Sentence,
        ann: Option<&SyntacticAnnotation>,
    ) -> Result<SentenceRun, String> {
        let messages = self
            .prompter
            .build_vanilla_messages(sentence, ann)
            .map_err(|e| e.to_string())?;
        let question = self.prompter.question(None).map_err(|e| e.to_string())?;
        let mut instances = Vec::new();
        for i in 0..self.instances() {
            let responses = self.ask(&messages, i)?;
            instances.push(DialogueInstance {
                instance: i,
                turns: vec![Turn {
                    label: None,
                    question: question.clone(),
                    context_answer: responses[0].clone(),
                    responses,
                }],
            });
        }
        Ok(self.finish(sentence, instances))
    }

    pub fn run_decomposed(
        &self,
        sentence: &Sentence,
        ann: Option<&SyntacticAnnotation>,
    ) -> Result<SentenceRun, String> {
        let mut instances = Vec::new();
        for i in 0..self.instances() {
            let mut history: Vec<(String, String)> = Vec::new();
            let mut turns = Vec::new();
            for label in self.prompter.order.labels() {
                let messages = self
                    .prompter
                    .build_decomposed_turn(sentence, label, &history, ann)
                    .map_err(|e| e.to_string())?;
                let question = messages
                    .last()
                    .expect("turn ends with its question")
                    .content
                    .clone();
                let responses = self
                    .ask(&messages, i)
                    .map_err(|e| format!("label {label:?}, instance {i}: {e}"))?;
                let context_answer = if self.cfg.sc == ScLevel::QuestionLevel {
                    let parsed: Vec<_> = responses
                        .iter()
                        .map(|r| parse_response(r).mentions)
                        .collect();
                    let voted =
                        vote_with(&parsed, self.cfg.vote_mode).map_err(|e| e.to_string())?;
                    serialize_answer(&voted.mentions)
                } else {
                    responses[0].clone()
                };
                history.push((question.clone(), context_answer.clone()));
                turns.push(Turn {
                    label: Some(label.clone()),
                    question,
                    responses,
                    context_answer,
                });
            }
            instances.push(DialogueInstance { instance: i, turns });
        }
        Ok(self.finish(sentence, instances))
    }

    pub fn run_sentence(
        &self,
        sentence: &Sentence,
        ann: Option<&SyntacticAnnotation>,
    ) -> Result<SentenceRun, String> {
        match self.cfg.mode {
            PromptMode::Vanilla => self.run_vanilla(sentence, ann),
            PromptMode::Decomposed => self.run_decomposed(sentence, ann),
        }
    }

    fn finish(&self, sentence: &Sentence, instances: Vec<DialogueInstance>) -> SentenceRun {
        SentenceRun {
            sentence_id: sentence.id.clone(),
            mode: self.cfg.mode,
            sc: self.cfg.sc,
            instances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub language: Language,
    /// Sentences in the full dataset, before subsetting.
    pub sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetInfo {
    pub n: usize,
    pub seed: u64,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedSentence {
    pub id: String,
    pub error: String,
}

/// `manifest.json`. Holds nothing that varies between identical reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_digest: String,
    pub config: Value,
    pub dataset: DatasetInfo,
    pub subset: Option<SubsetInfo>,
    pub total: usize,
    pub ok: usize,
    pub failed: Vec<FailedSentence>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Option<Manifest>, RunError> {
        match fs::read_to_string(path) {
            Ok(raw) => serde_json::from_str(&raw)
                .map(Some)
                .map_err(|e| io_err(path)(io::Error::new(io::ErrorKind::InvalidData, e))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(path)(e)),
        }
    }
}

pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(runs_root: &Path, run_id: &str) -> Self {
        Self {
            dir: runs_root.join(run_id),
        }
    }

    pub fn raw_responses(&self) -> PathBuf {
        self.dir.join("raw_responses.jsonl")
    }

    pub fn transcripts(&self) -> PathBuf {
        self.dir.join("transcripts.jsonl")
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
}

/// What [`run_experiment`] writes into the manifest besides outcomes.
pub struct RunHeader {
    pub config_digest: String,
    pub config: Value,
    pub dataset: DatasetInfo,
    pub subset: Option<SubsetInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub total: usize,
    /// Sentences already complete from an earlier invocation.
    pub resumed: usize,
    pub ok: usize,
    pub failed: Vec<FailedSentence>,
    pub stats: GatewayStats,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Run every sentence not already completed in `paths`, then rewrite
/// `transcripts.jsonl` in corpus order and write the manifest.
pub fn run_experiment(
    runner: &Runner<'_>,
    sentences: &[Sentence],
    annotations: &AnnotationMap,
    paths: &RunPaths,
    header: RunHeader,
) -> Result<RunSummary, RunError> {
    for s in sentences {
        for &kind in runner.prompter.plan.required_kinds() {
            if !annotations.get(&s.id).is_some_and(|a| a.has(kind)) {
                return Err(RunError::Config(format!(
                    "sentence {} has no {kind} annotation",
                    s.id
                )));
            }
        }
    }
    fs::create_dir_all(&paths.dir).map_err(io_err(&paths.dir))?;
    let manifest_path = paths.manifest();
    if let Some(old) = Manifest::load(&manifest_path)? {
        if old.config_digest != header.config_digest {
            return Err(RunError::DigestMismatch {
                dir: paths.dir.display().to_string(),
                expected: header.config_digest,
                found: old.config_digest,
            });
        }
    }

    let transcripts_path = paths.transcripts();
    let wanted: HashSet<&str> = sentences.iter().map(|s| s.id.as_str()).collect();
    let mut done: HashMap<String, SentenceRun> = read_transcripts(&transcripts_path)
        .map_err(io_err(&transcripts_path))?
        .into_iter()
        .filter(|r| wanted.contains(r.sentence_id.as_str()))
        .map(|r| (r.sentence_id.clone(), r))
        .collect();
    let resumed = done.len();
    let todo: Vec<&Sentence> = sentences
        .iter()
        .filter(|s| !done.contains_key(&s.id))
        .collect();
    if resumed > 0 {
        log::info!(
            "resuming: {resumed} sentence(s) already complete, {} to run",
            todo.len()
        );
    }

    let mut failed = Vec::new();
    {
        let mut out = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&transcripts_path)
            .map_err(io_err(&transcripts_path))?;
        let next = AtomicUsize::new(0);
        let workers = runner.cfg.workers.min(todo.len()).max(1);
        let (tx, rx) = mpsc::channel();
        let mut write_err = None;
        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, todo) = (&next, &todo);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(s) = todo.get(i) else { break };
                    let result = runner.run_sentence(s, annotations.get(&s.id));
                    if tx.send((s.id.clone(), result)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (id, result) in rx {
                match result {
                    Ok(run) => {
                        if write_err.is_none() {
                            if let Err(e) = out
                                .write_all(to_lines(&run).as_bytes())
                                .and_then(|_| out.flush())
                            {
                                write_err = Some(e);
                            }
                        }
                        done.insert(id, run);
                    }
                    Err(error) => {
                        log::warn!("sentence {id} failed: {error}");
                        failed.push(FailedSentence { id, error });
                    }
                }
            }
        });
        if let Some(e) = write_err {
            return Err(io_err(&transcripts_path)(e));
        }
    }

    let order: HashMap<&str, usize> = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    failed.sort_by_key(|f| order[f.id.as_str()]);
    let mut body = String::new();
    for s in sentences {
        if let Some(run) = done.get(&s.id) {
            body.push_str(&to_lines(run));
        }
    }
    write_atomic(&transcripts_path, body.as_bytes())?;

    let ok = sentences.len() - failed.len();
    let manifest = Manifest {
        run_id: runner.cfg.run_id.clone(),
        config_digest: header.config_digest,
        config: header.config,
        dataset: header.dataset,
        subset: header.subset,
        total: sentences.len(),
        ok,
        failed: failed.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_atomic(&manifest_path, json.as_bytes())?;

    Ok(RunSummary {
        total: sentences.len(),
        resumed,
        ok,
        failed,
        stats: runner.gateway.stats(),
    })
}
