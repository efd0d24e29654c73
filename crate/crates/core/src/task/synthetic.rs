//! A small generated two-class task for offline runs and tests.

use rand::seq::IndexedRandom;

use super::{LabeledExample, TaskBinding, FORWARD_TEMPLATE};
use crate::gateway::{Fallback, Matcher, Rule, ScriptedBackend, ScriptedResponse};
use crate::rng::RandomStream;
use crate::template::TemplateText;

pub const POSITIVE_WORDS: &[&str] = &["great", "lovely", "superb", "delightful", "charming"];
pub const NEGATIVE_WORDS: &[&str] = &["awful", "dull", "tedious", "clumsy", "bland"];
const SUBJECTS: &[&str] = &[
    "film", "meal", "hotel", "concert", "novel", "flight", "game",
];

/// Builds disjoint train/holdout/test splits of short reviews labelled
/// `positive` or `negative`. Each input carries a unique serial number.
pub fn binary_sentiment(seed: u64, train: usize, holdout: usize, test: usize) -> TaskBinding {
    let mut rng = RandomStream::new(seed);
    let mut serial = 0usize;
    let mut make = |n: usize| -> Vec<LabeledExample> {
        (0..n)
            .map(|_| {
                serial += 1;
                let positive = rng.next_unit() < 0.5;
                let word = if positive {
                    POSITIVE_WORDS
                } else {
                    NEGATIVE_WORDS
                }
                .choose(&mut rng)
                .expect("nonempty");
                let subject = SUBJECTS.choose(&mut rng).expect("nonempty");
                LabeledExample::new(
                    format!("review #{serial}: the {subject} was {word}"),
                    if positive { "positive" } else { "negative" },
                )
            })
            .collect()
    };
    let train = make(train);
    let holdout = make(holdout);
    let test = make(test);
    TaskBinding {
        name: "synthetic-sentiment".into(),
        label_set: vec!["positive".into(), "negative".into()],
        train,
        holdout,
        test,
        initial_prompt: "Classify the input text as positive or negative.".into(),
        forward_template: TemplateText::new(FORWARD_TEMPLATE),
    }
}

/// Scripted backend for [`binary_sentiment`].
///
/// Forward passes are answered correctly when the prompt contains `cue` and
/// with a constant `positive` otherwise, so a prompt's holdout accuracy is
/// about 0.5 without the cue and 1.0 with it. Refinement requests get
/// pseudo-text from a vocabulary that includes the cue.
pub fn sentiment_backend(cue: &str) -> ScriptedBackend {
    let answer_for = |word: &str, label: &str| Rule {
        matcher: Matcher::All(vec![
            Matcher::Contains(cue.to_string()),
            Matcher::EndsWith(format!(" was {word}\nAnswer:")),
        ]),
        response: ScriptedResponse::stop(format!(" {label}")),
    };
    let mut rules: Vec<Rule> = POSITIVE_WORDS
        .iter()
        .map(|w| answer_for(w, "positive"))
        .chain(NEGATIVE_WORDS.iter().map(|w| answer_for(w, "negative")))
        .collect();
    rules.push(Rule {
        matcher: Matcher::EndsWith("\nAnswer:".into()),
        response: ScriptedResponse::stop(" positive"),
    });
    let vocabulary = [
        "classify",
        "the",
        "review",
        "sentiment",
        "carefully",
        "label",
        "tone",
        "words",
        "text",
        "decide",
        cue,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    ScriptedBackend::new(rules, Fallback::Vocabulary(vocabulary))
}
