use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nerqa_core::consensus::VoteMode;
use nerqa_core::corpus::{LabelOrder, Language, OrderProvenance, Sentence};
use nerqa_core::gateway::{
    BackendError, ChatRequest, CompletionParams, Gateway, MockBackend, RecordStore,
};
use nerqa_core::orchestrator::{
    run_experiment, DatasetInfo, ExperimentConfig, RunError, RunHeader, RunPaths, Runner,
};
use nerqa_core::prompt::{PromptMode, PromptPlan, Prompter, Role, TemplatePack};
use nerqa_core::syntax::AnnotationMap;
use nerqa_core::transcript::{read_transcripts, ScLevel, SentenceRun};

const ACE: [&str; 7] = [
    "Person",
    "Organization",
    "Location",
    "Facility",
    "Weapon",
    "Vehicle",
    "Geo-Political Entity",
];

fn templates(lang: &str) -> TemplatePack {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../templates")
        .join(lang);
    TemplatePack::load(&dir).unwrap()
}

fn labels(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn config(mode: PromptMode, sc: ScLevel, sc_n: usize) -> ExperimentConfig {
    let params = CompletionParams::defaults("gpt-3.5-turbo", (sc != ScLevel::Off).then_some(sc_n));
    ExperimentConfig {
        run_id: "t".into(),
        mode,
        sc,
        sc_n,
        vote_mode: VoteMode::SurfaceThenLabel,
        params,
        workers: 1,
    }
}

/// Answers with the queried label's first letter as an entity, tagged with
/// the sample index, so histories reveal which sample produced them.
fn echo_mock() -> Arc<MockBackend> {
    Arc::new(MockBackend::from_fn(|r: &ChatRequest| {
        let q = &r.messages.last().unwrap().content;
        let label = ACE
            .iter()
            .chain(["人名", "地名", "机构名称", "地缘政治实体"].iter())
            .find(|l| q.contains(&format!("'{l}'")));
        Ok(match label {
            Some(l) => format!("[{{'{l}#{}': '{l}'}}]", r.sample_index),
            None => "[]".into(),
        })
    }))
}

struct Setup {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Setup {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Setup { _dir: dir, root }
    }

    fn store(&self) -> RecordStore {
        RecordStore::open(&self.root.join("t/raw_responses.jsonl")).unwrap()
    }
}

fn run_one(
    lang: &str,
    order: &[&str],
    cfg: &ExperimentConfig,
    mock: Arc<MockBackend>,
    s: &Setup,
) -> SentenceRun {
    let pack = templates(lang);
    let plan = PromptPlan::new(cfg.mode, None, vec![]);
    let set = labels(order);
    let order = LabelOrder::new(set.clone(), OrderProvenance::Manual).unwrap();
    let prompter = Prompter::new(&pack, &plan, &set, &order).unwrap();
    let gw = Gateway::new(mock, s.store());
    let runner = Runner::new(cfg, prompter, &gw).unwrap();
    let sentence = Sentence::new("s1", "Tony Blair met the UN envoy in London .", vec![]);
    runner.run_sentence(&sentence, None).unwrap()
}

fn asked_label(r: &ChatRequest, order: &[&str]) -> String {
    let q = &r.messages.last().unwrap().content;
    order
        .iter()
        .find(|l| q.contains(&format!("'{l}'")))
        .unwrap()
        .to_string()
}

#[test]
fn decomposed_asks_each_label_once_in_order() {
    let s = Setup::new();
    let mock = echo_mock();
    let run = run_one(
        "en",
        &ACE,
        &config(PromptMode::Decomposed, ScLevel::Off, 1),
        mock.clone(),
        &s,
    );
    let reqs = mock.requests();
    assert_eq!(reqs.len(), 7);
    let asked: Vec<String> = reqs.iter().map(|r| asked_label(r, &ACE)).collect();
    assert_eq!(asked, labels(&ACE));
    assert!(reqs
        .iter()
        .all(|r| r.temperature == 0.0 && r.sample_index == 0));
    assert_eq!(run.question_counts(), vec![7]);
}

#[test]
fn question_level_samples_every_turn() {
    let s = Setup::new();
    let mock = echo_mock();
    let run = run_one(
        "en",
        &ACE,
        &config(PromptMode::Decomposed, ScLevel::QuestionLevel, 5),
        mock.clone(),
        &s,
    );
    let reqs = mock.requests();
    assert_eq!(reqs.len(), 35);
    for (k, chunk) in reqs.chunks(5).enumerate() {
        assert!(chunk.iter().all(|r| asked_label(r, &ACE) == ACE[k]));
        assert_eq!(
            chunk.iter().map(|r| r.sample_index).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4]
        );
        assert!(chunk.iter().all(|r| r.temperature == 0.7));
    }
    assert_eq!(run.instances.len(), 1);
    assert!(run.instances[0]
        .turns
        .iter()
        .all(|t| t.responses.len() == 5));
}

#[test]
fn question_level_fills_history_with_the_vote() {
    let s = Setup::new();
    let mock = Arc::new(MockBackend::from_fn(|r: &ChatRequest| {
        Ok(if r.sample_index < 3 {
            "[{'Tony Blair': 'Person'}]"
        } else {
            "[{'UN': 'Organization'}]"
        }
        .into())
    }));
    let run = run_one(
        "en",
        &ACE[..2],
        &config(PromptMode::Decomposed, ScLevel::QuestionLevel, 5),
        mock.clone(),
        &s,
    );
    assert_eq!(
        run.instances[0].turns[0].context_answer,
        "[{'Tony Blair': 'Person'}]"
    );
    let second = &mock.requests()[5];
    assert_eq!(second.messages[2].role, Role::Assistant);
    assert_eq!(second.messages[2].content, "[{'Tony Blair': 'Person'}]");
}

#[test]
fn sample_level_runs_independent_dialogues() {
    let s = Setup::new();
    let mock = echo_mock();
    let run = run_one(
        "en",
        &ACE,
        &config(PromptMode::Decomposed, ScLevel::SampleLevel, 3),
        mock.clone(),
        &s,
    );
    assert_eq!(mock.requests().len(), 21);
    assert_eq!(run.question_counts(), vec![7, 7, 7]);
    for inst in &run.instances {
        for other in 0..3 {
            if other == inst.instance {
                continue;
            }
            let foreign = format!("#{other}'");
            for t in &inst.turns {
                assert!(!t.context_answer.contains(&foreign));
                assert!(t.responses.iter().all(|r| !r.contains(&foreign)));
            }
        }
    }
    for r in mock.requests() {
        let foreign = (0..3)
            .filter(|&j| j != r.sample_index)
            .map(|j| format!("#{j}'"));
        for f in foreign {
            assert!(
                r.messages.iter().all(|m| !m.content.contains(&f)),
                "leak into sample {}",
                r.sample_index
            );
        }
    }
}

#[test]
fn four_label_counts() {
    let zh = ["人名", "地名", "机构名称", "地缘政治实体"];
    let s = Setup::new();
    let mock = echo_mock();
    run_one(
        "zh",
        &zh,
        &config(PromptMode::Decomposed, ScLevel::QuestionLevel, 5),
        mock.clone(),
        &s,
    );
    assert_eq!(mock.calls(), 20);
    let s = Setup::new();
    let mock = echo_mock();
    run_one(
        "zh",
        &zh,
        &config(PromptMode::Decomposed, ScLevel::SampleLevel, 3),
        mock.clone(),
        &s,
    );
    assert_eq!(mock.calls(), 12);
}

#[test]
fn turns_extend_the_previous_turn() {
    let s = Setup::new();
    let mock = echo_mock();
    let run = run_one(
        "en",
        &ACE,
        &config(PromptMode::Decomposed, ScLevel::Off, 1),
        mock.clone(),
        &s,
    );
    let reqs = mock.requests();
    for k in 1..reqs.len() {
        let (prev, cur) = (&reqs[k - 1].messages, &reqs[k].messages);
        assert_eq!(cur.len(), prev.len() + 2);
        assert_eq!(&cur[..prev.len()], &prev[..]);
        assert_eq!(cur[prev.len()].role, Role::Assistant);
        assert_eq!(
            cur[prev.len()].content,
            run.instances[0].turns[k - 1].context_answer
        );
    }
}

#[test]
fn vanilla_is_one_call() {
    let s = Setup::new();
    let mock = echo_mock();
    let run = run_one(
        "en",
        &ACE,
        &config(PromptMode::Vanilla, ScLevel::Off, 1),
        mock.clone(),
        &s,
    );
    assert_eq!(mock.calls(), 1);
    assert_eq!(run.question_counts(), vec![1]);
    let s = Setup::new();
    let mock = echo_mock();
    run_one(
        "en",
        &ACE,
        &config(PromptMode::Vanilla, ScLevel::SampleLevel, 4),
        mock.clone(),
        &s,
    );
    assert_eq!(mock.calls(), 4);
}

#[test]
fn question_level_needs_decomposed() {
    let cfg = config(PromptMode::Vanilla, ScLevel::QuestionLevel, 5);
    assert!(matches!(cfg.validate(), Err(RunError::Config(_))));
}

// ---- whole runs ----

fn sentences() -> Vec<Sentence> {
    (0..6)
        .map(|i| {
            Sentence::new(
                format!("s{i}"),
                format!("Sentence {i} mentions Tony Blair ."),
                vec![],
            )
        })
        .collect()
}

fn header(digest: &str) -> RunHeader {
    RunHeader {
        config_digest: digest.into(),
        config: serde_json::json!({"k": digest}),
        dataset: DatasetInfo {
            name: "toy".into(),
            language: Language::En,
            sentences: 6,
        },
        subset: None,
    }
}

fn full_run(
    s: &Setup,
    mock: Arc<MockBackend>,
    digest: &str,
    workers: usize,
) -> Result<(usize, Vec<String>), RunError> {
    let pack = templates("en");
    let mut cfg = config(PromptMode::Decomposed, ScLevel::Off, 1);
    cfg.workers = workers;
    let plan = PromptPlan::new(cfg.mode, None, vec![]);
    let set = labels(&ACE[..3]);
    let order = LabelOrder::new(set.clone(), OrderProvenance::Manual).unwrap();
    let prompter = Prompter::new(&pack, &plan, &set, &order).unwrap();
    let gw = Gateway::new(mock.clone(), s.store());
    let runner = Runner::new(&cfg, prompter, &gw).unwrap();
    let paths = RunPaths::new(&s.root, "t");
    let summary = run_experiment(
        &runner,
        &sentences(),
        &AnnotationMap::new(),
        &paths,
        header(digest),
    )?;
    Ok((
        summary.stats.backend_calls,
        summary.failed.iter().map(|f| f.id.clone()).collect(),
    ))
}

fn snapshot(s: &Setup) -> Vec<Vec<u8>> {
    ["transcripts.jsonl", "manifest.json", "raw_responses.jsonl"]
        .iter()
        .map(|f| fs::read(s.root.join("t").join(f)).unwrap())
        .collect()
}

#[test]
fn rerun_makes_no_calls_and_changes_no_bytes() {
    let s = Setup::new();
    let (calls, failed) = full_run(&s, echo_mock(), "d1", 3).unwrap();
    assert_eq!((calls, failed.len()), (18, 0));
    let before = snapshot(&s);
    let runs = read_transcripts(&s.root.join("t/transcripts.jsonl")).unwrap();
    let ids: Vec<&str> = runs.iter().map(|r| r.sentence_id.as_str()).collect();
    assert_eq!(ids, ["s0", "s1", "s2", "s3", "s4", "s5"]);

    let again = echo_mock();
    let (calls, _) = full_run(&s, again.clone(), "d1", 3).unwrap();
    assert_eq!(calls, 0);
    assert_eq!(again.calls(), 0);
    assert_eq!(snapshot(&s), before);
}

#[test]
fn failed_sentences_are_retried_on_resume() {
    let s = Setup::new();
    let flaky = Arc::new(MockBackend::from_fn(|r: &ChatRequest| {
        if r.messages[0].content.contains("Sentence 2 ") {
            Err(BackendError::Fatal("boom".into()))
        } else {
            Ok("[]".into())
        }
    }));
    let (_, failed) = full_run(&s, flaky, "d1", 2).unwrap();
    assert_eq!(failed, ["s2"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(s.root.join("t/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["ok"], 5);

    let healthy = echo_mock();
    let (calls, failed) = full_run(&s, healthy, "d1", 2).unwrap();
    assert!(failed.is_empty());
    assert_eq!(calls, 3);
}

#[test]
fn changed_config_is_refused() {
    let s = Setup::new();
    full_run(&s, echo_mock(), "d1", 1).unwrap();
    let err = full_run(&s, echo_mock(), "d2", 1).unwrap_err();
    assert!(matches!(err, RunError::DigestMismatch { .. }), "{err}");
}

#[test]
fn missing_annotations_stop_the_run_before_any_call() {
    let s = Setup::new();
    let pack = templates("en");
    let cfg = config(PromptMode::Decomposed, ScLevel::Off, 1);
    let plan = PromptPlan::new(cfg.mode, None, vec![nerqa_core::syntax::SyntaxKind::Pos]);
    let set = labels(&ACE);
    let order = LabelOrder::new(set.clone(), OrderProvenance::Manual).unwrap();
    let prompter = Prompter::new(&pack, &plan, &set, &order).unwrap();
    let mock = echo_mock();
    let gw = Gateway::new(mock.clone(), s.store());
    let runner = Runner::new(&cfg, prompter, &gw).unwrap();
    let err = run_experiment(
        &runner,
        &sentences(),
        &AnnotationMap::new(),
        &RunPaths::new(&s.root, "t"),
        header("d"),
    )
    .unwrap_err();
    assert!(matches!(err, RunError::Config(_)));
    assert_eq!(mock.calls(), 0);
}
