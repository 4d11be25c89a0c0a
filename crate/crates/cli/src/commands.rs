//! Subcommand implementations. Each returns the process exit code on
//! completion; an `Err` means bad input or configuration (exit 2).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use nerqa_core::consensus::{vote_run, VoteMode};
use nerqa_core::corpus::{write_label_order, LabelOrder, OrderProvenance};
use nerqa_core::gateway::{
    BackendKind, Gateway, MockBackend, MockScript, OpenAiBackend, RecordStore,
};
use nerqa_core::http::{HttpTransport, UreqTransport};
use nerqa_core::orchestrator::{run_experiment, RunHeader, RunPaths, Runner};
use nerqa_core::prompt::{build_order_elicitation, Prompter, TemplatePack};
use nerqa_core::pylit::{scan_lists, Literal};
use nerqa_core::scoreboard::{
    aggregate_report, predictions_jsonl, read_predictions, render_markdown, summarize, RunReport,
};
use nerqa_core::syntax::{fetch_annotations, FetchOptions, SyntaxKind};
use nerqa_core::transcript::{read_transcripts, ScLevel};
use serde_json::json;

use crate::config::{load_dataset, prepare, BackendSection, ConfigFile};

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 1;

/// Build the gateway for `kind`. Only the live backend touches `transport`.
pub fn build_gateway(
    b: &BackendSection,
    kind: BackendKind,
    store: RecordStore,
    transport: Arc<dyn HttpTransport>,
) -> Result<Gateway> {
    Ok(match kind {
        BackendKind::Live => {
            let endpoint = b
                .endpoint_url
                .as_deref()
                .context("backend.endpoint_url is required for the live backend")?;
            let key = b
                .api_key
                .clone()
                .or_else(|| std::env::var(&b.api_key_env).ok());
            if key.is_none() {
                log::warn!(
                    "no API key in config or ${}; sending unauthenticated requests",
                    b.api_key_env
                );
            }
            let backend =
                OpenAiBackend::new(transport, endpoint, key, Duration::from_secs(b.timeout_s));
            let gw = Gateway::new(Arc::new(backend), store)
                .with_retries(b.retry_max, Duration::from_secs(1));
            match b.rpm_ceiling {
                Some(rpm) if rpm > 0.0 && rpm.is_finite() => gw.with_rate_limit(rpm),
                Some(rpm) => bail!("backend.rpm_ceiling must be positive, got {rpm}"),
                None => gw,
            }
        }
        BackendKind::Replay => Gateway::replay(store),
        BackendKind::Mock => {
            let script = match &b.mock_script {
                Some(p) => MockScript::load(p)?,
                None => MockScript::default(),
            };
            Gateway::new(Arc::new(MockBackend::from_script(script)), store)
                .with_retries(b.retry_max, Duration::ZERO)
        }
    })
}

pub fn cmd_run(c: &ConfigFile) -> Result<u8> {
    let prep = prepare(c)?;
    let paths = RunPaths::new(&c.runs_dir, &prep.experiment.run_id);
    let store = RecordStore::open(&paths.raw_responses())
        .with_context(|| format!("opening {}", paths.raw_responses().display()))?;
    let gateway = build_gateway(
        &c.backend,
        c.backend.kind,
        store,
        Arc::new(UreqTransport::default()),
    )?;
    let prompter = Prompter::new(
        &prep.pack,
        &prep.plan,
        &prep.dataset.label_set,
        &prep.dataset.label_order,
    )?;
    let runner = Runner::new(&prep.experiment, prompter, &gateway)?;
    let header = RunHeader {
        config_digest: prep.digest.clone(),
        config: prep.semantic.clone(),
        dataset: prep.dataset_info(),
        subset: prep.subset.clone(),
    };
    let summary = run_experiment(
        &runner,
        &prep.dataset.sentences,
        &prep.annotations,
        &paths,
        header,
    )?;

    println!(
        "run {}: {}/{} sentences ok, {} failed; backend calls {}, cache hits {}, retries {}",
        prep.experiment.run_id,
        summary.ok,
        summary.total,
        summary.failed.len(),
        summary.stats.backend_calls,
        summary.stats.cache_hits,
        summary.stats.retries,
    );
    if summary.resumed > 0 {
        println!("resumed, {} new calls", summary.stats.backend_calls);
    }
    for f in &summary.failed {
        eprintln!("failed {}: {}", f.id, f.error);
    }
    println!("run directory: {}", paths.dir.display());
    Ok(if summary.failed.is_empty() {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    })
}

/// Re-vote stored responses into `predictions.jsonl` and `votes.jsonl`.
pub fn cmd_vote(run_dir: &Path, level: Option<ScLevel>, mode: VoteMode) -> Result<u8> {
    let paths = RunPaths {
        dir: run_dir.to_path_buf(),
    };
    let tpath = paths.transcripts();
    if !tpath.exists() {
        bail!(
            "no transcripts at {}; run the experiment first",
            tpath.display()
        );
    }
    let runs = read_transcripts(&tpath).with_context(|| format!("reading {}", tpath.display()))?;
    let mut preds = Vec::with_capacity(runs.len());
    let mut votes = String::new();
    for run in &runs {
        let v = vote_run(run, level.unwrap_or(run.sc), mode)?;
        votes.push_str(&serde_json::to_string(&v)?);
        votes.push('\n');
        preds.push(v);
    }
    let body = predictions_jsonl(
        preds
            .iter()
            .map(|v| (v.sentence_id.as_str(), v.mentions.as_slice())),
    );
    fs::write(run_dir.join("predictions.jsonl"), body)?;
    fs::write(run_dir.join("votes.jsonl"), votes)?;
    let ties = preds
        .iter()
        .filter(|v| v.votes.iter().any(|r| r.has_tie()))
        .count();
    println!(
        "voted {} sentence(s) ({} with label ties) -> {}",
        preds.len(),
        ties,
        run_dir.join("predictions.jsonl").display()
    );
    Ok(EXIT_OK)
}

fn column_name(p: &Path) -> String {
    let stem = p
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match p.parent().and_then(Path::file_name) {
        Some(dir) if stem == "predictions" => dir.to_string_lossy().into_owned(),
        _ => stem,
    }
}

fn reports(
    c: &ConfigFile,
    predictions: &[PathBuf],
) -> Result<Vec<(String, RunReport, nerqa_core::scoreboard::ErrorReport)>> {
    let dataset = load_dataset(c)?;
    predictions
        .iter()
        .map(|p| {
            let pred = read_predictions(p).map_err(anyhow::Error::msg)?;
            let (report, errors) = aggregate_report(&pred, &dataset)
                .with_context(|| format!("scoring {}", p.display()))?;
            Ok((column_name(p), report, errors))
        })
        .collect()
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// `metrics.json` and `report.md`. Several prediction files (one per seed)
/// add a mean/std summary.
pub fn cmd_eval(c: &ConfigFile, predictions: &[PathBuf], out: &Path) -> Result<u8> {
    let rs = reports(c, predictions)?;
    fs::create_dir_all(out)?;
    let columns: Vec<(String, RunReport)> =
        rs.iter().map(|(n, r, _)| (n.clone(), r.clone())).collect();
    let summary = (rs.len() > 1)
        .then(|| summarize(&rs.iter().map(|(_, r, _)| r.metrics).collect::<Vec<_>>()));
    if rs.len() == 1 {
        write_json(&out.join("metrics.json"), &rs[0].1)?;
    } else {
        let runs: Vec<_> = rs
            .iter()
            .map(|(n, r, _)| json!({"name": n, "report": r}))
            .collect();
        write_json(
            &out.join("metrics.json"),
            &json!({"runs": runs, "summary": summary}),
        )?;
    }
    fs::write(
        out.join("report.md"),
        render_markdown(&columns, summary.as_ref()),
    )?;
    for (name, r, _) in &rs {
        println!(
            "{name}: P {:.4} R {:.4} F1 {:.4} ({} sentences)",
            r.metrics.precision, r.metrics.recall, r.metrics.f1, r.sentences
        );
    }
    if let Some(s) = summary {
        println!(
            "F1 mean {:.4} std {:.4} over {} runs",
            s.f1.mean, s.f1.std, s.runs
        );
    }
    Ok(EXIT_OK)
}

/// `errors.jsonl` (one classified error per line) and `errors.md`.
pub fn cmd_errors(c: &ConfigFile, predictions: &Path, out: &Path) -> Result<u8> {
    let mut rs = reports(c, &[predictions.to_path_buf()])?;
    let (name, report, errors) = rs.pop().expect("one report");
    fs::create_dir_all(out)?;
    let mut body = String::new();
    for item in &errors.items {
        body.push_str(&serde_json::to_string(item)?);
        body.push('\n');
    }
    fs::write(out.join("errors.jsonl"), body)?;
    fs::write(
        out.join("errors.md"),
        render_markdown(&[(name, report.clone())], None),
    )?;
    println!(
        "{} errors across {} sentences",
        report.errors.total, report.sentences
    );
    Ok(EXIT_OK)
}

/// How a proposed order differs from the label set.
#[derive(Debug, PartialEq, Eq)]
pub struct OrderDiff {
    pub missing: Vec<String>,
    pub unknown: Vec<String>,
    pub repeated: Vec<String>,
}

impl std::fmt::Display for OrderDiff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for l in &self.missing {
            writeln!(f, "- {l}  (missing)")?;
        }
        for l in &self.unknown {
            writeln!(f, "+ {l}  (not in label set)")?;
        }
        for l in &self.repeated {
            writeln!(f, "! {l}  (repeated)")?;
        }
        Ok(())
    }
}

/// Read a label order out of a model response.
///
/// A bracketed list of strings wins (the last one, if several). Otherwise
/// labels are taken in order of their first exact occurrence as a separate
/// item in numbered or delimited text.
pub fn parse_order(response: &str, labels: &[String]) -> Result<Vec<String>, OrderDiff> {
    let listed = scan_lists(response)
        .into_iter()
        .rev()
        .find_map(|(_, lit)| match lit {
            Literal::List(items) if !items.is_empty() => items
                .into_iter()
                .map(|i| match i {
                    Literal::Str(s) => Some(s.trim().to_string()),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>(),
            _ => None,
        });
    let proposed = listed.unwrap_or_else(|| {
        let seps: &[char] = &['\n', ',', '，', '、', ';', '；', '>', '→'];
        response
            .split(seps)
            .map(|t| {
                t.trim()
                    .trim_start_matches(|c: char| {
                        c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*' | ' ' | '、')
                    })
                    .trim_matches(|c: char| {
                        c.is_whitespace()
                            || matches!(c, '\'' | '"' | '“' | '”' | '‘' | '’' | '`' | '。' | '.')
                    })
                    .to_string()
            })
            .filter(|t| labels.contains(t))
            .collect()
    });

    let set: BTreeSet<&String> = labels.iter().collect();
    let mut seen = BTreeSet::new();
    let mut diff = OrderDiff {
        missing: Vec::new(),
        unknown: Vec::new(),
        repeated: Vec::new(),
    };
    for p in &proposed {
        if !set.contains(p) {
            diff.unknown.push(p.clone());
        } else if !seen.insert(p) {
            diff.repeated.push(p.clone());
        }
    }
    diff.missing = labels
        .iter()
        .filter(|l| !seen.contains(l))
        .cloned()
        .collect();
    if diff.missing.is_empty() && diff.unknown.is_empty() && diff.repeated.is_empty() {
        Ok(proposed)
    } else {
        Err(diff)
    }
}

/// Ask the model for a label order and write it to `out`.
pub fn cmd_order(c: &ConfigFile, labels: Vec<String>, out: &Path) -> Result<u8> {
    if labels.is_empty() {
        bail!("no labels to order");
    }
    let pack = TemplatePack::load(&c.prompt.templates)?;
    let messages = build_order_elicitation(&labels, &pack)?;
    let store_path = c.runs_dir.join("label-order").join("raw_responses.jsonl");
    let store = RecordStore::open(&store_path)
        .with_context(|| format!("opening {}", store_path.display()))?;
    let gateway = build_gateway(
        &c.backend,
        c.backend.kind,
        store,
        Arc::new(UreqTransport::default()),
    )?;
    let response = gateway
        .complete(&messages, &c.single_params())?
        .pop()
        .expect("one sample requested");
    match parse_order(&response, &labels) {
        Ok(order) => {
            let order = LabelOrder::new(order, OrderProvenance::ModelProposed)?;
            if let Some(dir) = out.parent() {
                fs::create_dir_all(dir)?;
            }
            write_label_order(out, &order)?;
            println!("label order: {}", serialize_labels(order.labels()));
            println!("written to {}", out.display());
            Ok(EXIT_OK)
        }
        Err(diff) => {
            let raw = out.with_extension("response.txt");
            fs::write(&raw, &response)?;
            eprintln!("could not read a complete label order from the response:\n{diff}");
            eprintln!("raw response saved to {}", raw.display());
            Ok(EXIT_PARTIAL)
        }
    }
}

fn serialize_labels(labels: &[String]) -> String {
    labels.join(" -> ")
}

/// Fetch syntactic annotations for the configured sentences.
pub fn cmd_annotate(
    c: &ConfigFile,
    endpoint: &str,
    kinds: &[SyntaxKind],
    out: &Path,
    opts: &FetchOptions,
    transport: &dyn HttpTransport,
) -> Result<u8> {
    let full = load_dataset(c)?;
    let ds = match c.dataset.subset_n {
        Some(n) => full.sample_subset(n, c.dataset.subset_seed)?,
        None => full,
    };
    if kinds.is_empty() {
        bail!("no syntax kinds requested");
    }
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    let got = fetch_annotations(
        transport,
        endpoint,
        &ds.sentences,
        ds.language,
        kinds,
        opts,
        out,
    )?;
    println!("wrote {} annotation(s) to {}", got.len(), out.display());
    Ok(EXIT_OK)
}
