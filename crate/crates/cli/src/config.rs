//! TOML experiment configuration.
//!
//! Relative paths are resolved against the directory holding the config
//! file. The manifest digest covers only fields that change what the model
//! is asked or how answers are combined. Operational settings such as the
//! backend choice are left out so replaying a live run keeps its digest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nerqa_core::consensus::VoteMode;
use nerqa_core::corpus::{load_label_order, Dataset, DatasetFormat, Language, OrderProvenance};
use nerqa_core::gateway::{
    BackendKind, CompletionParams, DEFAULT_MAX_TOKENS, DEFAULT_RETRY_MAX, SC_TEMPERATURE,
};
use nerqa_core::orchestrator::{DatasetInfo, ExperimentConfig, SubsetInfo};
use nerqa_core::prompt::{Demonstration, Hint, PromptMode, PromptPlan, TemplatePack};
use nerqa_core::syntax::{cross_check, load_annotations, AnnotationMap, SyntaxKind};
use nerqa_core::transcript::ScLevel;
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub backend: BackendSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: DatasetFormat,
    pub language: Language,
    #[serde(default)]
    pub name: Option<String>,
    /// One label per line. Required by `run`; written by `order`.
    #[serde(default)]
    pub label_order: Option<PathBuf>,
    #[serde(default = "default_provenance")]
    pub label_order_provenance: OrderProvenance,
    /// Display order of the label set in prompts; defaults to the order.
    #[serde(default)]
    pub label_set: Option<Vec<String>>,
    #[serde(default)]
    pub subset_n: Option<usize>,
    #[serde(default)]
    pub subset_seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    #[serde(default = "default_templates")]
    pub templates: PathBuf,
    #[serde(default)]
    pub mode: PromptMode,
    #[serde(default)]
    pub hint: Option<Hint>,
    #[serde(default)]
    pub tool_kinds: Vec<SyntaxKind>,
    /// Sidecar JSONL of syntactic annotations.
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    /// JSONL of few-shot demonstrations (vanilla mode only).
    #[serde(default)]
    pub demonstrations: Option<PathBuf>,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            templates: default_templates(),
            mode: PromptMode::default(),
            hint: None,
            tool_kinds: Vec::new(),
            annotations: None,
            demonstrations: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(default)]
    pub sc: ScLevel,
    #[serde(default = "default_sc_n")]
    pub sc_n: usize,
    #[serde(default)]
    pub vote_mode: VoteMode,
    /// Defaults to 0 without self-consistency and 0.7 with it.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_model")]
    pub model_name: String,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            sc: ScLevel::Off,
            sc_n: default_sc_n(),
            vote_mode: VoteMode::default(),
            temperature: None,
            max_tokens: default_max_tokens(),
            model_name: default_model(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default = "default_backend")]
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub rpm_ceiling: Option<f64>,
    #[serde(default = "default_retry_max")]
    pub retry_max: u32,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: default_backend(),
            endpoint_url: None,
            api_key: None,
            api_key_env: default_key_env(),
            rpm_ceiling: None,
            retry_max: default_retry_max(),
            timeout_s: default_timeout(),
            mock_script: None,
        }
    }
}

fn default_runs_dir() -> PathBuf {
    "runs".into()
}
fn default_workers() -> usize {
    4
}
fn default_format() -> DatasetFormat {
    DatasetFormat::Jsonl
}
fn default_provenance() -> OrderProvenance {
    OrderProvenance::Manual
}
fn default_templates() -> PathBuf {
    "templates".into()
}
fn default_sc_n() -> usize {
    5
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}
fn default_model() -> String {
    "gpt-3.5-turbo".into()
}
fn default_backend() -> BackendKind {
    BackendKind::Live
}
fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_retry_max() -> u32 {
    DEFAULT_RETRY_MAX
}
fn default_timeout() -> u64 {
    60
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub run_id: Option<String>,
    pub seed: Option<u64>,
    pub subset_n: Option<usize>,
    pub backend: Option<BackendKind>,
    pub mode: Option<PromptMode>,
    pub sc: Option<ScLevel>,
    pub sc_n: Option<usize>,
    pub workers: Option<usize>,
}

/// Parse a config file and apply overrides.
pub fn load(path: &Path, o: &Overrides) -> Result<ConfigFile> {
    let raw =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut c: ConfigFile =
        toml::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let abs = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    abs(&mut c.runs_dir);
    abs(&mut c.dataset.path);
    abs(&mut c.prompt.templates);
    for p in [
        &mut c.dataset.label_order,
        &mut c.prompt.annotations,
        &mut c.prompt.demonstrations,
        &mut c.backend.mock_script,
    ]
    .into_iter()
    .flatten()
    {
        abs(p);
    }

    if let Some(v) = &o.run_id {
        c.run_id = Some(v.clone());
    }
    if let Some(v) = o.seed {
        c.dataset.subset_seed = v;
    }
    if let Some(v) = o.subset_n {
        c.dataset.subset_n = Some(v);
    }
    if let Some(v) = o.backend {
        c.backend.kind = v;
    }
    if let Some(v) = o.mode {
        c.prompt.mode = v;
    }
    if let Some(v) = o.sc {
        c.sampling.sc = v;
    }
    if let Some(v) = o.sc_n {
        c.sampling.sc_n = v;
    }
    if let Some(v) = o.workers {
        c.workers = v;
    }
    Ok(c)
}

impl ConfigFile {
    pub fn run_id(&self) -> Result<&str> {
        self.run_id
            .as_deref()
            .context("no run id: set `run_id` in the config or pass --run-id")
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.runs_dir.join(self.run_id()?))
    }

    fn params(&self) -> CompletionParams {
        let s = &self.sampling;
        let sc = (s.sc != ScLevel::Off).then_some(s.sc_n);
        let mut p = CompletionParams::defaults(&s.model_name, sc);
        p.max_tokens = s.max_tokens;
        p.temperature = s
            .temperature
            .unwrap_or(if sc.is_some() { SC_TEMPERATURE } else { 0.0 });
        p
    }

    /// Sampling parameters for one-off requests such as order elicitation.
    pub fn single_params(&self) -> CompletionParams {
        let mut p = CompletionParams::defaults(&self.sampling.model_name, None);
        p.max_tokens = self.sampling.max_tokens;
        if let Some(t) = self.sampling.temperature {
            p.temperature = t;
        }
        p
    }
}

/// The dataset with its label order, before subsetting.
pub fn load_dataset(c: &ConfigFile) -> Result<Dataset> {
    let d = &c.dataset;
    let order_path = d
        .label_order
        .as_ref()
        .context("dataset.label_order is not set (write one with `nerqa order`)")?;
    let order = load_label_order(order_path, d.label_order_provenance)?;
    let mut ds = Dataset::load(&d.path, d.format, d.language, order)?;
    if let Some(name) = &d.name {
        ds.name = name.clone();
    }
    if let Some(set) = &d.label_set {
        ds = ds.with_label_set(set.clone())?;
    }
    Ok(ds)
}

/// Everything `run` needs, loaded and checked.
pub struct Prepared {
    pub full: Dataset,
    pub dataset: Dataset,
    pub subset: Option<SubsetInfo>,
    pub pack: TemplatePack,
    pub plan: PromptPlan,
    pub annotations: AnnotationMap,
    pub experiment: ExperimentConfig,
    pub semantic: Value,
    pub digest: String,
}

impl Prepared {
    pub fn dataset_info(&self) -> DatasetInfo {
        DatasetInfo {
            name: self.full.name.clone(),
            language: self.full.language,
            sentences: self.full.sentences.len(),
        }
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash of every file in a template pack, by name.
fn dir_sha256(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading template pack {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    names.retain(|p| p.is_file());
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        h.update(
            p.file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .as_bytes(),
        );
        h.update([0]);
        h.update(fs::read(&p)?);
        h.update([0]);
    }
    Ok(hex::encode(h.finalize()))
}

fn load_demonstrations(path: &Path) -> Result<Vec<Demonstration>> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

pub fn prepare(c: &ConfigFile) -> Result<Prepared> {
    let run_id = c.run_id()?.to_string();
    let full = load_dataset(c)?;
    let (dataset, subset) = match c.dataset.subset_n {
        Some(n) => {
            let ds = full.sample_subset(n, c.dataset.subset_seed)?;
            let ids = ds.sentences.iter().map(|s| s.id.clone()).collect();
            (
                ds,
                Some(SubsetInfo {
                    n,
                    seed: c.dataset.subset_seed,
                    ids,
                }),
            )
        }
        None => (full.clone(), None),
    };

    let pack = TemplatePack::load(&c.prompt.templates)?;
    if pack.language != full.language {
        bail!(
            "template pack {} is for {}, dataset is {}",
            c.prompt.templates.display(),
            pack.language,
            full.language
        );
    }
    let mut plan = PromptPlan::new(c.prompt.mode, c.prompt.hint, c.prompt.tool_kinds.clone());
    if let Some(p) = &c.prompt.demonstrations {
        plan.shots = load_demonstrations(p)?;
    }
    plan.validate(full.language)?;

    let annotations = match &c.prompt.annotations {
        Some(p) => {
            let map = load_annotations(p)?;
            for w in cross_check(&map, &dataset.sentences)? {
                log::debug!("{w}");
            }
            map
        }
        None => AnnotationMap::new(),
    };
    if !plan.required_kinds().is_empty() && c.prompt.annotations.is_none() {
        bail!("the prompt plan needs syntactic annotations but prompt.annotations is not set");
    }

    let s = &c.sampling;
    let params = c.params();
    params.validate()?;
    let experiment = ExperimentConfig {
        run_id,
        mode: plan.mode,
        sc: s.sc,
        sc_n: s.sc_n,
        vote_mode: s.vote_mode,
        params: params.clone(),
        workers: c.workers,
    };
    experiment.validate()?;

    let hash_opt = |p: &Option<PathBuf>| -> Result<Value> {
        Ok(match p {
            Some(p) => Value::String(file_sha256(p)?),
            None => Value::Null,
        })
    };
    let semantic = json!({
        "dataset": {
            "name": full.name,
            "language": full.language,
            "format": c.dataset.format,
            "sha256": file_sha256(&c.dataset.path)?,
            "label_order": full.label_order.labels(),
            "label_set": full.label_set,
        },
        "subset": subset.as_ref().map(|s| json!({"n": s.n, "seed": s.seed})),
        "prompt": {
            "mode": plan.mode,
            "hint": plan.hint,
            "tool_kinds": plan.tool_kinds,
            "templates_sha256": dir_sha256(&c.prompt.templates)?,
            "annotations_sha256": hash_opt(&c.prompt.annotations)?,
            "demonstrations_sha256": hash_opt(&c.prompt.demonstrations)?,
        },
        "sampling": {
            "sc": s.sc,
            "sc_n": if s.sc == ScLevel::Off { Value::Null } else { json!(s.sc_n) },
            "vote_mode": if s.sc == ScLevel::QuestionLevel { json!(s.vote_mode) } else { Value::Null },
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "model_name": params.model_name,
        },
    });
    let digest = hex::encode(Sha256::digest(serde_json::to_vec(&semantic)?));

    Ok(Prepared {
        full,
        dataset,
        subset,
        pack,
        plan,
        annotations,
        experiment,
        semantic,
        digest,
    })
}
