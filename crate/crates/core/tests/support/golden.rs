//! Prompt fixture loading and rendering, shared with the acceptance harness.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nerqa_core::corpus::{LabelOrder, OrderProvenance, Sentence};
use nerqa_core::prompt::{
    build_order_elicitation, ChatMessage, PromptPlan, Prompter, TemplatePack,
};
use nerqa_core::syntax::SyntacticAnnotation;
use serde::Deserialize;

#[derive(Deserialize)]
pub struct Context {
    pub text: String,
    pub label_set: Vec<String>,
    pub label_order: Vec<String>,
    pub annotation: SyntacticAnnotation,
}

#[derive(Deserialize)]
pub struct Fixture {
    pub name: String,
    pub origin: String,
    pub language: String,
    pub kind: String,
    pub plan: PromptPlan,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub history: Vec<(String, String)>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    pub messages: Vec<ChatMessage>,
}

/// Fixtures and their shared contexts under `core_dir`, plus the shipped
/// template packs.
pub struct Golden {
    pub fixtures: Vec<Fixture>,
    pub contexts: HashMap<String, Context>,
    pub packs: HashMap<String, TemplatePack>,
}

impl Golden {
    pub fn load(core_dir: &Path) -> Self {
        let dir = core_dir.join("tests/fixtures/prompts");
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "context.json")
            .collect();
        paths.sort();
        let fixtures = paths
            .iter()
            .map(|p| serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap())
            .collect();
        let contexts =
            serde_json::from_str(&fs::read_to_string(dir.join("context.json")).unwrap()).unwrap();
        let templates = core_dir.join("../../templates");
        let packs = ["zh", "en"]
            .iter()
            .map(|l| {
                (
                    l.to_string(),
                    TemplatePack::load(&templates.join(l)).unwrap(),
                )
            })
            .collect();
        Golden {
            fixtures,
            contexts,
            packs,
        }
    }

    pub fn render(&self, fx: &Fixture) -> Vec<ChatMessage> {
        let pack = &self.packs[&fx.language];
        if fx.kind == "order" {
            return build_order_elicitation(fx.labels.as_ref().unwrap(), pack).unwrap();
        }
        let c = &self.contexts[&fx.language];
        let order = LabelOrder::new(c.label_order.clone(), OrderProvenance::ModelProposed).unwrap();
        let prompter = Prompter::new(pack, &fx.plan, &c.label_set, &order).unwrap();
        let sentence = Sentence::new(c.annotation.sentence_id.clone(), c.text.clone(), vec![]);
        match fx.kind.as_str() {
            "vanilla" => prompter
                .build_vanilla_messages(&sentence, Some(&c.annotation))
                .unwrap(),
            "turn" => prompter
                .build_decomposed_turn(
                    &sentence,
                    fx.label.as_deref().unwrap(),
                    &fx.history,
                    Some(&c.annotation),
                )
                .unwrap(),
            other => panic!("unknown fixture kind {other}"),
        }
    }

    /// One description per fixture whose rendering differs.
    pub fn mismatches(&self) -> Vec<String> {
        self.fixtures
            .iter()
            .filter_map(|fx| {
                let got = self.render(fx);
                (got != fx.messages).then(|| {
                    format!(
                        "{}:\n  expected {:?}\n  got      {:?}",
                        fx.name,
                        fx.messages.iter().map(|m| &m.content).collect::<Vec<_>>(),
                        got.iter().map(|m| &m.content).collect::<Vec<_>>()
                    )
                })
            })
            .collect()
    }

    pub fn transcribed(&self) -> usize {
        self.fixtures
            .iter()
            .filter(|f| f.origin == "transcribed")
            .count()
    }
}
