//! Span-level micro P/R/F1 and the prediction error taxonomy.
//!
//! Matching is on exact `(surface, label)` strings with multiset semantics:
//! a gold pair can be matched at most as many times as it occurs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Mention};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("prediction and gold sentence ids differ: {0}")]
    Shape(String),
}

/// sentence id -> mentions
pub type MentionsById = BTreeMap<String, Vec<Mention>>;

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    entities: Vec<Mention>,
}

/// Read predictions in the dataset JSONL schema: `{"id", "entities":
/// [{"text", "label"}]}` per line. Extra fields are ignored.
pub fn read_predictions(path: &Path) -> Result<MentionsById, String> {
    let raw = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = MentionsById::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(line)
            .map_err(|e| format!("{}: line {}: {e}", path.display(), i + 1))?;
        if out.insert(p.id.clone(), p.entities).is_some() {
            return Err(format!("{}: duplicate id {:?}", path.display(), p.id));
        }
    }
    Ok(out)
}

/// Write predictions, one line per sentence in `order`.
pub fn predictions_jsonl<'a>(order: impl IntoIterator<Item = (&'a str, &'a [Mention])>) -> String {
    let mut out = String::new();
    for (id, entities) in order {
        let line = PredictionLine {
            id: id.to_string(),
            text: None,
            entities: entities.to_vec(),
        };
        out.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Multiset match of one sentence. Returns matched count and the indices of
/// unmatched predictions and unmatched gold mentions.
fn match_sentence(pred: &[Mention], gold: &[Mention]) -> (usize, Vec<usize>, Vec<usize>) {
    let mut available: HashMap<&Mention, Vec<usize>> = HashMap::new();
    for (i, g) in gold.iter().enumerate().rev() {
        available.entry(g).or_default().push(i);
    }
    let mut tp = 0;
    let mut unmatched_pred = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        match available.get_mut(p).and_then(Vec::pop) {
            Some(_) => tp += 1,
            None => unmatched_pred.push(i),
        }
    }
    let mut unmatched_gold: Vec<usize> = available.into_values().flatten().collect();
    unmatched_gold.sort_unstable();
    (tp, unmatched_pred, unmatched_gold)
}

fn check_ids(pred: &MentionsById, gold: &MentionsById) -> Result<(), ScoreError> {
    if pred.len() == gold.len() && pred.keys().eq(gold.keys()) {
        return Ok(());
    }
    let missing: Vec<&String> = gold
        .keys()
        .filter(|k| !pred.contains_key(*k))
        .take(5)
        .collect();
    let extra: Vec<&String> = pred
        .keys()
        .filter(|k| !gold.contains_key(*k))
        .take(5)
        .collect();
    Err(ScoreError::Shape(format!(
        "missing predictions for {missing:?}, unknown ids {extra:?}"
    )))
}

/// Micro-averaged metrics across sentences.
pub fn score(pred: &MentionsById, gold: &MentionsById) -> Result<Metrics, ScoreError> {
    check_ids(pred, gold)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (id, g) in gold {
        let p = &pred[id];
        let (t, up, ug) = match_sentence(p, g);
        tp += t;
        fp += up.len();
        fn_ += ug.len();
    }
    Ok(Metrics::from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    OodType,
    WrongType,
    ContainGold,
    ContainedByGold,
    OverlapGold,
    CompletelyO,
    Omitted,
    OodMention,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 8] = [
        ErrorCategory::OodType,
        ErrorCategory::WrongType,
        ErrorCategory::ContainGold,
        ErrorCategory::ContainedByGold,
        ErrorCategory::OverlapGold,
        ErrorCategory::CompletelyO,
        ErrorCategory::Omitted,
        ErrorCategory::OodMention,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub ood_type: usize,
    pub wrong_type: usize,
    pub contain_gold: usize,
    pub contained_by_gold: usize,
    pub overlap_gold: usize,
    pub completely_o: usize,
    pub omitted: usize,
    pub ood_mention: usize,
    pub total: usize,
}

impl ErrorCounts {
    pub fn get(&self, c: ErrorCategory) -> usize {
        match c {
            ErrorCategory::OodType => self.ood_type,
            ErrorCategory::WrongType => self.wrong_type,
            ErrorCategory::ContainGold => self.contain_gold,
            ErrorCategory::ContainedByGold => self.contained_by_gold,
            ErrorCategory::OverlapGold => self.overlap_gold,
            ErrorCategory::CompletelyO => self.completely_o,
            ErrorCategory::Omitted => self.omitted,
            ErrorCategory::OodMention => self.ood_mention,
        }
    }

    fn bump(&mut self, c: ErrorCategory) {
        let slot = match c {
            ErrorCategory::OodType => &mut self.ood_type,
            ErrorCategory::WrongType => &mut self.wrong_type,
            ErrorCategory::ContainGold => &mut self.contain_gold,
            ErrorCategory::ContainedByGold => &mut self.contained_by_gold,
            ErrorCategory::OverlapGold => &mut self.overlap_gold,
            ErrorCategory::CompletelyO => &mut self.completely_o,
            ErrorCategory::Omitted => &mut self.omitted,
            ErrorCategory::OodMention => &mut self.ood_mention,
        };
        *slot += 1;
        self.total += 1;
    }

    fn add(&mut self, other: &ErrorCounts) {
        for c in ErrorCategory::ALL {
            for _ in 0..other.get(c) {
                self.bump(c);
            }
        }
    }

    /// Percentage of `total` per category; all zero when there are no errors.
    pub fn percentages(&self) -> BTreeMap<ErrorCategory, f64> {
        ErrorCategory::ALL
            .into_iter()
            .map(|c| (c, 100.0 * ratio(self.get(c), self.total)))
            .collect()
    }
}

impl PartialOrd for ErrorCategory {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ErrorCategory {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let pos = |c: &ErrorCategory| ErrorCategory::ALL.iter().position(|x| x == c);
        pos(self).cmp(&pos(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInstance {
    pub sentence_id: String,
    pub category: ErrorCategory,
    /// The offending prediction, or the omitted gold mention.
    pub mention: Mention,
    /// Gold mentions the prediction was judged against.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub related_gold: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    pub counts: ErrorCounts,
    pub items: Vec<ErrorInstance>,
}

impl ErrorReport {
    pub fn merge(&mut self, other: ErrorReport) {
        self.counts.add(&other.counts);
        self.items.extend(other.items);
    }
}

fn char_span(text: &str, needle: &str) -> Option<(usize, usize)> {
    let byte = text.find(needle)?;
    let start = text[..byte].chars().count();
    Some((start, start + needle.chars().count()))
}

/// Category of one unmatched prediction, with the gold indices it relates to.
/// Rules are tried in order and the first that applies wins.
pub fn classify_prediction(
    pred: &Mention,
    text: &str,
    gold: &[Mention],
    labels: &[String],
) -> (ErrorCategory, Vec<usize>) {
    if !text.contains(&pred.surface) {
        return (ErrorCategory::OodMention, Vec::new());
    }
    if !labels.contains(&pred.label) {
        return (ErrorCategory::OodType, Vec::new());
    }
    let related = |f: &dyn Fn(&Mention) -> bool| -> Vec<usize> {
        gold.iter()
            .enumerate()
            .filter(|(_, g)| f(g))
            .map(|(i, _)| i)
            .collect()
    };
    let same_surface = related(&|g| g.surface == pred.surface && g.label != pred.label);
    if !same_surface.is_empty() {
        return (ErrorCategory::WrongType, same_surface);
    }
    let contains = related(&|g| g.surface != pred.surface && pred.surface.contains(&g.surface));
    if !contains.is_empty() {
        return (ErrorCategory::ContainGold, contains);
    }
    let contained = related(&|g| g.surface != pred.surface && g.surface.contains(&pred.surface));
    if !contained.is_empty() {
        return (ErrorCategory::ContainedByGold, contained);
    }
    let (ps, pe) = char_span(text, &pred.surface).expect("checked by rule 1");
    let overlapping = related(&|g| match char_span(text, &g.surface) {
        Some((gs, ge)) => {
            let share = ps < ge && gs < pe;
            let nested = (ps <= gs && ge <= pe) || (gs <= ps && pe <= ge);
            share && !nested
        }
        None => false,
    });
    if !overlapping.is_empty() {
        return (ErrorCategory::OverlapGold, overlapping);
    }
    (ErrorCategory::CompletelyO, Vec::new())
}

/// Classify every error in one sentence.
///
/// Unmatched predictions get exactly one category. An unmatched gold mention
/// counts as omitted only if no wrong-type or boundary error points at it.
pub fn classify_errors(
    sentence_id: &str,
    text: &str,
    pred: &[Mention],
    gold: &[Mention],
    labels: &[String],
) -> ErrorReport {
    let (_, unmatched_pred, unmatched_gold) = match_sentence(pred, gold);
    let mut report = ErrorReport::default();
    let mut implicated = vec![false; gold.len()];
    for i in unmatched_pred {
        let p = &pred[i];
        let (cat, rel) = classify_prediction(p, text, gold, labels);
        for &g in &rel {
            implicated[g] = true;
        }
        report.counts.bump(cat);
        report.items.push(ErrorInstance {
            sentence_id: sentence_id.to_string(),
            category: cat,
            mention: p.clone(),
            related_gold: rel.iter().map(|&g| gold[g].clone()).collect(),
        });
    }
    for g in unmatched_gold {
        // a gold pair that is implicated stays implicated for every copy
        let implicated_any = gold
            .iter()
            .enumerate()
            .any(|(k, other)| implicated[k] && *other == gold[g]);
        if !implicated_any {
            report.counts.bump(ErrorCategory::Omitted);
            report.items.push(ErrorInstance {
                sentence_id: sentence_id.to_string(),
                category: ErrorCategory::Omitted,
                mention: gold[g].clone(),
                related_gold: Vec::new(),
            });
        }
    }
    report
}

fn gold_for(pred: &MentionsById, dataset: &Dataset) -> Result<MentionsById, ScoreError> {
    pred.keys()
        .map(|id| {
            dataset
                .get(id)
                .map(|s| (id.clone(), s.gold.clone()))
                .ok_or_else(|| ScoreError::Shape(format!("prediction for unknown sentence {id:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sentences: usize,
    pub metrics: Metrics,
    pub errors: ErrorCounts,
    pub error_percentages: BTreeMap<ErrorCategory, f64>,
}

/// Score and classify predictions against the dataset sentences they cover.
pub fn aggregate_report(
    pred: &MentionsById,
    dataset: &Dataset,
) -> Result<(RunReport, ErrorReport), ScoreError> {
    let gold = gold_for(pred, dataset)?;
    let metrics = score(pred, &gold)?;
    let mut errors = ErrorReport::default();
    for (id, p) in pred {
        let s = dataset.get(id).expect("checked by gold_for");
        errors.merge(classify_errors(id, &s.text, p, &s.gold, &dataset.label_set));
    }
    Ok((
        RunReport {
            sentences: pred.len(),
            metrics,
            errors: errors.counts,
            error_percentages: errors.counts.percentages(),
        },
        errors,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: 0.0,
                std: 0.0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub runs: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

pub fn summarize(runs: &[Metrics]) -> SeedSummary {
    let col = |f: fn(&Metrics) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    SeedSummary {
        runs: runs.len(),
        precision: col(|m| m.precision),
        recall: col(|m| m.recall),
        f1: col(|m| m.f1),
    }
}

const TABLE_ROWS: [(&str, &str, ErrorCategory); 8] = [
    ("Type", "OOD types", ErrorCategory::OodType),
    ("", "Wrong types", ErrorCategory::WrongType),
    ("Boundary", "Contain gold.", ErrorCategory::ContainGold),
    ("", "Contained by gold.", ErrorCategory::ContainedByGold),
    ("", "Overlap with gold.", ErrorCategory::OverlapGold),
    ("Completely-O", "", ErrorCategory::CompletelyO),
    ("Omitted mentions", "", ErrorCategory::Omitted),
    ("OOD mentions", "", ErrorCategory::OodMention),
];

/// Markdown report: metrics line(s) followed by the error-type table with
/// one count/percentage column pair per run.
pub fn render_markdown(columns: &[(String, RunReport)], summary: Option<&SeedSummary>) -> String {
    let mut out = String::from(
        "# Evaluation report\n\n| Run | Sentences | P | R | F1 |\n|---|---|---|---|---|\n",
    );
    for (name, r) in columns {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "| {name} | {} | {:.2} | {:.2} | {:.2} |",
            r.sentences,
            100.0 * m.precision,
            100.0 * m.recall,
            100.0 * m.f1
        );
    }
    if let Some(s) = summary {
        let _ = writeln!(
            out,
            "| mean (std) over {} | | {:.2} ({:.2}) | {:.2} ({:.2}) | {:.2} ({:.2}) |",
            s.runs,
            100.0 * s.precision.mean,
            100.0 * s.precision.std,
            100.0 * s.recall.mean,
            100.0 * s.recall.std,
            100.0 * s.f1.mean,
            100.0 * s.f1.std
        );
    }
    out.push_str("\n## Error types\n\n| Error types | |");
    for (name, _) in columns {
        let _ = write!(out, " {name} | % |");
    }
    out.push_str("\n|---|---|");
    for _ in columns {
        out.push_str("---|---|");
    }
    out.push('\n');
    for (group, row, cat) in TABLE_ROWS {
        let _ = write!(out, "| {group} | {row} |");
        for (_, r) in columns {
            let _ = write!(
                out,
                " {} | {:.2} |",
                r.errors.get(cat),
                r.error_percentages[&cat]
            );
        }
        out.push('\n');
    }
    out.push_str("| Total | |");
    for (_, r) in columns {
        let _ = write!(
            out,
            " {} | {:.2} |",
            r.errors.total,
            if r.errors.total > 0 { 100.0 } else { 0.0 }
        );
    }
    out.push('\n');
    out
}
