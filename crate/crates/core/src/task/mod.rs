//! Datasets, the classification forward template, label parsing and scoring.

mod dataset;
mod presets;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Backend, CompletionRequest, GatewayError};
use crate::template::TemplateText;

pub use dataset::{load_dataset, sample_batch};
pub use presets::{preset, presets, TaskPreset};

/// Forward pass template: prompt, input, then a literal `Answer:` line.
pub const FORWARD_TEMPLATE: &str = "{{ prompt }}\n{{ input }}\nAnswer:";

/// Generation budget for one prediction.
pub const PREDICT_MAX_TOKENS: u32 = 16;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: label `{label}` is not one of {allowed:?}")]
    Label {
        line: usize,
        label: String,
        allowed: Vec<String>,
    },
    #[error("cannot draw {requested} distinct examples from a pool of {available}")]
    Size { requested: usize, available: usize },
    #[error("cannot score against an empty example set")]
    EmptySet,
    #[error("invalid task `{name}`: {message}")]
    Invalid { name: String, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub input_text: String,
    pub gold_label: String,
}

impl LabeledExample {
    pub fn new(input_text: impl Into<String>, gold_label: impl Into<String>) -> Self {
        Self {
            input_text: input_text.into(),
            gold_label: gold_label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Exactly one label from the label set must appear in the completion.
    ClassificationAccuracy,
    /// Normalized completion must equal the normalized gold answer; when
    /// both contain numbers, the last numbers are compared instead.
    ExactMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBinding {
    pub name: String,
    /// Ordered class labels; empty for free-form exact-match tasks.
    pub label_set: Vec<String>,
    pub train: Vec<LabeledExample>,
    pub holdout: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub initial_prompt: String,
    pub forward_template: TemplateText,
}

impl TaskBinding {
    pub fn kind(&self) -> ScoreKind {
        if self.label_set.is_empty() {
            ScoreKind::ExactMatch
        } else {
            ScoreKind::ClassificationAccuracy
        }
    }

    /// Checks the binding's invariants: nonempty initial prompt, pairwise
    /// disjoint splits, nonempty inputs and in-set labels.
    pub fn validate(&self) -> Result<(), TaskError> {
        let invalid = |message: String| TaskError::Invalid {
            name: self.name.clone(),
            message,
        };
        if self.initial_prompt.trim().is_empty() {
            return Err(invalid("initial prompt is empty".into()));
        }
        let splits = [
            ("train", &self.train),
            ("holdout", &self.holdout),
            ("test", &self.test),
        ];
        let mut seen = std::collections::HashMap::new();
        for (split, examples) in splits {
            for ex in examples.iter() {
                if ex.input_text.is_empty() {
                    return Err(invalid(format!("{split} split has an empty input")));
                }
                if !self.label_set.is_empty() && !self.label_set.contains(&ex.gold_label) {
                    return Err(invalid(format!(
                        "{split} label `{}` outside label set",
                        ex.gold_label
                    )));
                }
                if let Some(other) = seen.insert(ex.input_text.as_str(), split) {
                    if other != split {
                        return Err(invalid(format!(
                            "input `{}` appears in both {other} and {split}",
                            ex.input_text
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn render(&self, prompt: &str, input_text: &str) -> String {
        if self.forward_template.as_str() == FORWARD_TEMPLATE {
            return render_forward(prompt, input_text);
        }
        self.forward_template
            .render(&[("prompt", prompt), ("input", input_text)])
            .unwrap_or_else(|_| render_forward(prompt, input_text))
    }
}

/// `prompt`, newline, `input_text`, newline, `Answer:`.
pub fn render_forward(prompt: &str, input_text: &str) -> String {
    let mut s = String::with_capacity(prompt.len() + input_text.len() + 9);
    s.push_str(prompt);
    s.push('\n');
    s.push_str(input_text);
    s.push_str("\nAnswer:");
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedLabel {
    Label(String),
    Unmatched,
}

fn normalized_words(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Accepts iff exactly one label occurs in the completion. Matching is
/// case-insensitive over word runs, so punctuation and spacing are ignored
/// and `objective` does not match inside `subjective`.
pub fn parse_label(completion: &str, label_set: &[String]) -> ParsedLabel {
    let words = normalized_words(completion);
    let mut hits = label_set
        .iter()
        .filter(|label| contains_run(&words, &normalized_words(label)));
    match (hits.next(), hits.next()) {
        (Some(label), None) => ParsedLabel::Label(label.clone()),
        _ => ParsedLabel::Unmatched,
    }
}

/// Last number in the text, with thousands separators removed.
pub fn extract_last_number(text: &str) -> Option<String> {
    let mut last = None;
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let starts = chars[i].is_ascii_digit()
            || (chars[i] == '-' && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit()));
        if !starts {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len()
            && (chars[j].is_ascii_digit()
                || ((chars[j] == ',' || chars[j] == '.')
                    && chars.get(j + 1).is_some_and(|c| c.is_ascii_digit())))
        {
            j += 1;
        }
        let raw: String = chars[i..j].iter().filter(|c| **c != ',').collect();
        let trimmed = if raw.contains('.') {
            raw.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            raw
        };
        last = Some(trimmed);
        i = j;
    }
    last
}

fn normalize_answer(s: &str) -> String {
    normalized_words(s).join(" ")
}

pub fn exact_match(completion: &str, gold: &str) -> bool {
    match (extract_last_number(completion), extract_last_number(gold)) {
        (Some(a), Some(b)) => a == b,
        _ => normalize_answer(completion) == normalize_answer(gold),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub raw: String,
    pub parsed: ParsedLabel,
}

/// Greedy forward pass with the default template.
pub fn predict(
    lm: &dyn Backend,
    prompt: &str,
    input_text: &str,
    label_set: &[String],
) -> Result<Prediction, TaskError> {
    predict_rendered(lm, render_forward(prompt, input_text), label_set)
}

fn predict_rendered(
    lm: &dyn Backend,
    rendered: String,
    label_set: &[String],
) -> Result<Prediction, TaskError> {
    let request = CompletionRequest::new(rendered, PREDICT_MAX_TOKENS, 0.0).with_tag("predict");
    let raw = lm.complete(&request)?.text;
    let parsed = parse_label(&raw, label_set);
    Ok(Prediction { raw, parsed })
}

pub fn predict_for(
    task: &TaskBinding,
    lm: &dyn Backend,
    prompt: &str,
    input_text: &str,
) -> Result<Prediction, TaskError> {
    predict_rendered(lm, task.render(prompt, input_text), &task.label_set)
}

fn is_correct(kind: ScoreKind, prediction: &Prediction, gold: &str) -> bool {
    match kind {
        ScoreKind::ClassificationAccuracy => {
            matches!(&prediction.parsed, ParsedLabel::Label(l) if l == gold)
        }
        ScoreKind::ExactMatch => exact_match(&prediction.raw, gold),
    }
}

/// Fraction of `examples` answered correctly under the default template.
/// Unmatched predictions count as wrong.
pub fn score_prompt(
    prompt: &str,
    examples: &[LabeledExample],
    lm: &dyn Backend,
    kind: ScoreKind,
    label_set: &[String],
) -> Result<f64, TaskError> {
    score_with(examples, kind, |ex| {
        predict_rendered(lm, render_forward(prompt, &ex.input_text), label_set)
    })
}

fn score_with(
    examples: &[LabeledExample],
    kind: ScoreKind,
    mut predict: impl FnMut(&LabeledExample) -> Result<Prediction, TaskError>,
) -> Result<f64, TaskError> {
    if examples.is_empty() {
        return Err(TaskError::EmptySet);
    }
    let mut correct = 0usize;
    for ex in examples {
        if is_correct(kind, &predict(ex)?, &ex.gold_label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Score function S: maps a candidate prompt to a value in `[0, 1]`.
pub trait Scorer {
    fn score(&self, prompt: &str) -> Result<f64, TaskError>;
}

impl<F> Scorer for F
where
    F: Fn(&str) -> Result<f64, TaskError>,
{
    fn score(&self, prompt: &str) -> Result<f64, TaskError> {
        self(prompt)
    }
}

/// Accuracy of a prompt on a fixed slice of a task, through a backend.
pub struct ScoreFunction<'a> {
    task: &'a TaskBinding,
    examples: &'a [LabeledExample],
    lm: &'a dyn Backend,
}

impl<'a> ScoreFunction<'a> {
    pub fn new(task: &'a TaskBinding, examples: &'a [LabeledExample], lm: &'a dyn Backend) -> Self {
        Self { task, examples, lm }
    }

    pub fn holdout(task: &'a TaskBinding, lm: &'a dyn Backend) -> Self {
        Self::new(task, &task.holdout, lm)
    }

    pub fn test(task: &'a TaskBinding, lm: &'a dyn Backend) -> Self {
        Self::new(task, &task.test, lm)
    }
}

impl Scorer for ScoreFunction<'_> {
    fn score(&self, prompt: &str) -> Result<f64, TaskError> {
        score_with(self.examples, self.task.kind(), |ex| {
            predict_for(self.task, self.lm, prompt, &ex.input_text)
        })
    }
}
