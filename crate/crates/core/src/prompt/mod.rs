//! Prompt assembly from a template pack.
//!
//! A decomposed dialogue opens with a shared preamble message (label set,
//! instruction, optional front hint, text, optional parser output) and then
//! asks one question per label, carrying earlier answers as context. The
//! vanilla prompt puts the preamble and a single all-labels question in one
//! message.

mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{parse_response, serialize_answer, Diagnostic};
use crate::corpus::{LabelOrder, Language, Sentence};
use crate::pylit;
use crate::syntax::{render_body, SyntacticAnnotation, SyntaxKind};

pub use template::{Template, TemplatePack};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template pack {path}: {message}")]
    Pack { path: String, message: String },
    #[error("invalid prompt plan: {0}")]
    Plan(String),
    #[error("cannot assemble prompt: {0}")]
    Assembly(String),
    #[error("{0}")]
    Argument(String),
}

type Result<T, E = PromptError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Vanilla,
    #[default]
    Decomposed,
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vanilla" => Ok(PromptMode::Vanilla),
            "decomposed" => Ok(PromptMode::Decomposed),
            other => Err(format!("unknown prompt mode {other:?}")),
        }
    }
}

/// Front: appended to the task instruction. Back: appended to the answer cue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintPosition {
    Front,
    Back,
}

impl HintPosition {
    pub fn as_str(self) -> &'static str {
        match self {
            HintPosition::Front => "front",
            HintPosition::Back => "back",
        }
    }
}

/// Whether the model is told to do the analysis itself or to use the
/// parser output supplied in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HintSource {
    #[serde(rename = "self")]
    SelfAnalysis,
    #[serde(rename = "tool")]
    Tool,
}

impl HintSource {
    pub fn as_str(self) -> &'static str {
        match self {
            HintSource::SelfAnalysis => "self",
            HintSource::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hint {
    pub kind: SyntaxKind,
    pub position: HintPosition,
    pub source: HintSource,
}

/// A solved example shown before the test text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<SyntacticAnnotation>,
    /// Gold answer in the canonical answer format.
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptPlan {
    pub mode: PromptMode,
    #[serde(default)]
    pub hint: Option<Hint>,
    #[serde(default)]
    pub tool_kinds: Vec<SyntaxKind>,
    #[serde(default)]
    pub shots: Vec<Demonstration>,
}

impl PromptPlan {
    pub fn new(mode: PromptMode, hint: Option<Hint>, mut tool_kinds: Vec<SyntaxKind>) -> Self {
        tool_kinds.sort();
        tool_kinds.dedup();
        Self {
            mode,
            hint,
            tool_kinds,
            shots: Vec::new(),
        }
    }

    pub fn validate(&self, language: Language) -> Result<()> {
        let plan = |m: String| Err(PromptError::Plan(m));
        for &k in &self.tool_kinds {
            if !k.tool_capable() {
                return plan(format!("{k} cannot be supplied by a parsing tool"));
            }
            if !k.available_for(language) {
                return plan(format!("{k} is not available for {language}"));
            }
        }
        if let Some(h) = self.hint {
            if !h.kind.available_for(language) {
                return plan(format!("{} is not available for {language}", h.kind));
            }
            if h.source == HintSource::Tool && !self.tool_kinds.contains(&h.kind) {
                return plan(format!(
                    "a tool hint for {} needs {} among the tool kinds",
                    h.kind, h.kind
                ));
            }
        }
        if !self.shots.is_empty() && self.mode != PromptMode::Vanilla {
            return plan("demonstrations are only supported with the vanilla prompt".into());
        }
        Ok(())
    }

    /// Annotation kinds each test sentence must have.
    pub fn required_kinds(&self) -> &[SyntaxKind] {
        &self.tool_kinds
    }

    /// Parser output shown with each demonstration: the tool kinds plus the
    /// hinted kind when a parser can produce it.
    fn shot_kinds(&self) -> Vec<SyntaxKind> {
        let mut kinds = self.tool_kinds.clone();
        if let Some(h) = self.hint.filter(|h| h.kind.tool_capable()) {
            kinds.push(h.kind);
        }
        kinds.sort();
        kinds.dedup();
        kinds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// The exact hint sentence for one `(kind, position, source)`.
pub fn render_hint(
    kind: SyntaxKind,
    position: HintPosition,
    source: HintSource,
    pack: &TemplatePack,
) -> Result<String> {
    if source == HintSource::Tool && !kind.tool_capable() {
        return Err(PromptError::Plan(format!("{kind} has no tool hint")));
    }
    pack.render(&template::hint_slot(kind, position, source), &[])
}

/// Ask the model to propose a label order.
pub fn build_order_elicitation(labels: &[String], pack: &TemplatePack) -> Result<Vec<ChatMessage>> {
    if labels.is_empty() {
        return Err(PromptError::Argument("no labels to order".into()));
    }
    let set = pylit::repr_list(labels);
    Ok(vec![ChatMessage::user(
        pack.render("order_elicitation", &[("label_set", &set)])?,
    )])
}

fn tool_info(
    pack: &TemplatePack,
    kinds: &[SyntaxKind],
    ann: Option<&SyntacticAnnotation>,
    whose: &str,
) -> Result<String> {
    let mut out = String::new();
    for &kind in kinds {
        let a =
            ann.ok_or_else(|| PromptError::Assembly(format!("{whose} has no {kind} annotation")))?;
        let body = render_body(a, kind)
            .map_err(|_| PromptError::Assembly(format!("{whose} has no {kind} annotation")))?;
        out.push_str(&pack.render(&format!("tool_block.{kind}"), &[("content", &body)])?);
        out.push('\n');
    }
    Ok(out)
}

/// Demonstration block placed before the test text. Empty for zero-shot.
pub fn render_demonstrations(
    shots: &[Demonstration],
    plan: &PromptPlan,
    pack: &TemplatePack,
) -> Result<String> {
    let kinds = plan.shot_kinds();
    let mut out = String::new();
    for (i, shot) in shots.iter().enumerate() {
        let parsed = parse_response(&shot.answer);
        let canonical = parsed.diagnostics == [Diagnostic::Clean]
            && serialize_answer(&parsed.mentions) == shot.answer;
        if !canonical {
            return Err(PromptError::Assembly(format!(
                "demonstration {i}: answer {:?} is not in the canonical answer format",
                shot.answer
            )));
        }
        let info = tool_info(
            pack,
            &kinds,
            shot.annotation.as_ref(),
            &format!("demonstration {i}"),
        )?;
        out.push_str(&pack.render(
            "demonstration",
            &[
                ("text", &shot.text),
                ("tool_info", &info),
                ("answer", &shot.answer),
            ],
        )?);
    }
    Ok(out)
}

/// Everything needed to build the prompts of one experiment.
#[derive(Debug, Clone, Copy)]
pub struct Prompter<'a> {
    pub pack: &'a TemplatePack,
    pub plan: &'a PromptPlan,
    /// Labels as displayed in the preamble.
    pub label_set: &'a [String],
    pub order: &'a LabelOrder,
}

impl<'a> Prompter<'a> {
    pub fn new(
        pack: &'a TemplatePack,
        plan: &'a PromptPlan,
        label_set: &'a [String],
        order: &'a LabelOrder,
    ) -> Result<Self> {
        if label_set.is_empty() {
            return Err(PromptError::Argument("empty label set".into()));
        }
        plan.validate(pack.language)?;
        Ok(Self {
            pack,
            plan,
            label_set,
            order,
        })
    }

    fn hint_text(&self, position: HintPosition) -> Result<String> {
        match self.plan.hint {
            Some(h) if h.position == position => {
                let hint = render_hint(h.kind, h.position, h.source, self.pack)?;
                Ok(format!("{}{hint}", self.pack.language.token_joiner()))
            }
            _ => Ok(String::new()),
        }
    }

    fn instruction(&self) -> Result<String> {
        let tool_kind = match self.plan.hint {
            Some(h) if h.source == HintSource::Tool => Some(h.kind),
            _ => self.plan.tool_kinds.first().copied(),
        };
        match tool_kind {
            Some(k) => self.pack.render(&format!("task_instruction_tool.{k}"), &[]),
            None => self.pack.render("task_instruction", &[]),
        }
    }

    /// The shared first part of every prompt for `sentence`.
    pub fn preamble(
        &self,
        sentence: &Sentence,
        ann: Option<&SyntacticAnnotation>,
    ) -> Result<String> {
        let set = pylit::repr_list(self.label_set);
        let instruction = self.instruction()?;
        let front = self.hint_text(HintPosition::Front)?;
        let demos = render_demonstrations(&self.plan.shots, self.plan, self.pack)?;
        let info = tool_info(
            self.pack,
            &self.plan.tool_kinds,
            ann,
            &format!("sentence {}", sentence.id),
        )?;
        self.pack.render(
            "preamble",
            &[
                ("label_set", &set),
                ("instruction", &instruction),
                ("hint_front", &front),
                ("demonstrations", &demos),
                ("text", &sentence.text),
                ("tool_info", &info),
            ],
        )
    }

    /// The question for one label, or the all-labels question when `None`.
    pub fn question(&self, label: Option<&str>) -> Result<String> {
        let format = self.pack.render("answer_format", &[])?;
        let back = self.hint_text(HintPosition::Back)?;
        match label {
            Some(l) => {
                if !self.order.contains(l) {
                    return Err(PromptError::Argument(format!(
                        "label {l:?} is not in the label order"
                    )));
                }
                self.pack.render(
                    "question",
                    &[
                        ("label", l),
                        ("answer_format", &format),
                        ("hint_back", &back),
                    ],
                )
            }
            None => self.pack.render(
                "question_all",
                &[("answer_format", &format), ("hint_back", &back)],
            ),
        }
    }

    /// A single user message asking for all labels at once.
    pub fn build_vanilla_messages(
        &self,
        sentence: &Sentence,
        ann: Option<&SyntacticAnnotation>,
    ) -> Result<Vec<ChatMessage>> {
        if self.plan.mode != PromptMode::Vanilla {
            return Err(PromptError::Argument("plan is not in vanilla mode".into()));
        }
        let preamble = self.preamble(sentence, ann)?;
        Ok(vec![ChatMessage::user(preamble + &self.question(None)?)])
    }

    /// Messages for the turn asking about `label`, after the `(question,
    /// answer)` pairs of earlier turns.
    pub fn build_decomposed_turn(
        &self,
        sentence: &Sentence,
        label: &str,
        history: &[(String, String)],
        ann: Option<&SyntacticAnnotation>,
    ) -> Result<Vec<ChatMessage>> {
        if self.plan.mode != PromptMode::Decomposed {
            return Err(PromptError::Argument(
                "plan is not in decomposed mode".into(),
            ));
        }
        let question = self.question(Some(label))?;
        let mut messages = Vec::with_capacity(2 + 2 * history.len());
        messages.push(ChatMessage::user(self.preamble(sentence, ann)?));
        for (q, a) in history {
            messages.push(ChatMessage::user(q.clone()));
            messages.push(ChatMessage::assistant(a.clone()));
        }
        messages.push(ChatMessage::user(question));
        Ok(messages)
    }
}
