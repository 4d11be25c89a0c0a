//! Client for the annotation exporter service.
//!
//! Request: `{"texts": [{"id", "text", "language"}], "kinds": [...]}`.
//! Response: a JSON array of sidecar records (or `{"records": [...]}`),
//! one per requested id.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::{write_annotations, Result, SyntacticAnnotation, SyntaxError, SyntaxKind};
use crate::corpus::{Language, Sentence};
use crate::http::HttpTransport;

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub batch_size: usize,
    /// Maximum concurrent requests.
    pub parallelism: usize,
    pub timeout: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            parallelism: 4,
            timeout: Duration::from_secs(120),
        }
    }
}

/// Request annotations for `sentences` and write them to `out` in sentence
/// order. Only the requested kinds are kept from each response record.
pub fn fetch_annotations(
    transport: &dyn HttpTransport,
    endpoint: &str,
    sentences: &[Sentence],
    language: Language,
    kinds: &[SyntaxKind],
    opts: &FetchOptions,
    out: &Path,
) -> Result<Vec<SyntacticAnnotation>> {
    for &k in kinds {
        if !k.available_for(language) {
            return Err(SyntaxError::Unsupported {
                kind: k,
                reason: format!("not available for language {language}"),
            });
        }
    }
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();

    let batches: Vec<&[Sentence]> = sentences.chunks(opts.batch_size.max(1)).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<SyntacticAnnotation>>>>> =
        Mutex::new((0..batches.len()).map(|_| None).collect());
    let workers = opts.parallelism.max(1).min(batches.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(batch) = batches.get(i) else { break };
                let r = fetch_batch(transport, endpoint, batch, language, &kinds, opts.timeout);
                results.lock().expect("results poisoned")[i] = Some(r);
            });
        }
    });

    let mut all = Vec::with_capacity(sentences.len());
    for r in results.into_inner().expect("results poisoned") {
        all.extend(r.expect("every batch ran")?);
    }
    write_annotations(out, &all)?;
    Ok(all)
}

fn fetch_batch(
    transport: &dyn HttpTransport,
    endpoint: &str,
    batch: &[Sentence],
    language: Language,
    kinds: &[SyntaxKind],
    timeout: Duration,
) -> Result<Vec<SyntacticAnnotation>> {
    let texts: Vec<Value> = batch
        .iter()
        .map(|s| json!({"id": s.id, "text": s.text, "language": language}))
        .collect();
    let body = json!({"texts": texts, "kinds": kinds});
    let resp = transport.post_json(endpoint, &[], &body, timeout)?;
    if !(200..300).contains(&resp.status) {
        return Err(SyntaxError::Contract(format!(
            "status {}: {}",
            resp.status,
            resp.body.chars().take(200).collect::<String>()
        )));
    }
    let parsed: Value = serde_json::from_str(&resp.body)
        .map_err(|e| SyntaxError::Contract(format!("response is not JSON: {e}")))?;
    let records = match parsed {
        Value::Array(items) => items,
        Value::Object(mut obj) => match obj.remove("records") {
            Some(Value::Array(items)) => items,
            _ => return Err(SyntaxError::Contract("missing field `records`".into())),
        },
        _ => {
            return Err(SyntaxError::Contract(
                "response must be a list of records".into(),
            ))
        }
    };

    let mut by_id: HashMap<String, SyntacticAnnotation> = HashMap::new();
    for (i, rec) in records.into_iter().enumerate() {
        let id = match rec.get("sentence_id") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                return Err(SyntaxError::Contract(format!(
                    "record {i}: field `sentence_id` is not a string"
                )))
            }
            None => {
                return Err(SyntaxError::Contract(format!(
                    "record {i}: missing field `sentence_id`"
                )))
            }
        };
        if let Some(e) = rec.get("error") {
            return Err(SyntaxError::Contract(format!(
                "record {id}: exporter error {e}"
            )));
        }
        let mut ann: SyntacticAnnotation = serde_json::from_value(rec)
            .map_err(|e| SyntaxError::Contract(format!("record {id}: {e}")))?;
        ann.restrict_to(kinds);
        ann.validate()?;
        by_id.insert(id, ann);
    }

    batch
        .iter()
        .map(|s| {
            let ann = by_id.remove(&s.id).ok_or_else(|| {
                SyntaxError::Contract(format!("no record for sentence_id {:?}", s.id))
            })?;
            if let Some(k) = kinds.iter().find(|k| !ann.has(**k)) {
                return Err(SyntaxError::Contract(format!(
                    "record {}: missing field `{k}`",
                    s.id
                )));
            }
            Ok(ann)
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|v| match by_id.keys().next() {
            Some(extra) => Err(SyntaxError::Contract(format!(
                "unexpected sentence_id {extra:?}"
            ))),
            None => Ok(v),
        })
}
