use super::{
    momentum_weights, sample_source, GenerationMode, GenerationParams, OptimizerError,
    OptimizerHistory, PromptRecord, Triple,
};
use crate::gateway::{Backend, CompletionRequest};
use crate::rng::RandomStream;
use crate::template::TemplateText;

/// Formats observations for inclusion in a template.
pub fn render_triples(triples: &[Triple]) -> String {
    if triples.is_empty() {
        return "(none)".to_string();
    }
    triples
        .iter()
        .map(|t| {
            format!(
                "Input: {}\nCorrect output: {}\nModel output: {}",
                t.input, t.gold, t.prediction
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Asks the model for an error analysis of `current` on its own batch.
pub fn compute_textual_gradient(
    current: &PromptRecord,
    analyze_template: &TemplateText,
    lm: &dyn Backend,
    gen: &GenerationParams,
) -> Result<String, OptimizerError> {
    if current.batch_triples.is_empty() {
        return Err(OptimizerError::EmptyBatch);
    }
    let prompt = analyze_template.render(&[
        ("prompt", &current.prompt_text),
        ("examples", &render_triples(&current.batch_triples)),
    ])?;
    let request = CompletionRequest::new(prompt, gen.gradient_max_tokens, gen.temperature)
        .with_tag(format!("analyze/iter{}", current.iteration));
    Ok(lm.complete(&request)?.text)
}

/// The refinement prompt for one source record. In gradient mode the record
/// always travels with its own gradient.
fn refine_prompt(record: &PromptRecord, gen: &GenerationParams) -> Result<String, OptimizerError> {
    let gradient = match gen.mode {
        GenerationMode::Case2Gradient => record.gradient_text.as_deref().ok_or_else(|| {
            OptimizerError::History(format!(
                "record {} has no textual gradient",
                record.iteration
            ))
        })?,
        _ => "",
    };
    Ok(gen.refine_template.render(&[
        ("prompt", &record.prompt_text),
        ("gradient", gradient),
        ("examples", &render_triples(&record.batch_triples)),
    ])?)
}

/// Runs the block loop: `ceil(max_total_tokens / block_tokens)` requests at
/// most, each for up to `block_tokens` new tokens, stopping early when the
/// model ends the text. `conditioning` supplies the prompt for each block.
fn generate_blocks(
    gen: &GenerationParams,
    lm: &dyn Backend,
    seed_stream: &RandomStream,
    tag: &str,
    mut conditioning: impl FnMut() -> Result<String, OptimizerError>,
) -> Result<String, OptimizerError> {
    let mut text = String::new();
    let mut remaining = gen.max_total_tokens;
    for block in 0..gen.num_blocks() {
        let n = gen.block_tokens.min(remaining);
        let request = CompletionRequest::new(conditioning()?, n, gen.temperature)
            .with_prefix(text.clone())
            .with_seed(seed_stream.substream(&[block as u64]).key())
            .with_tag(format!("{tag}/block{block}"));
        let result = lm.complete(&request)?;
        text.push_str(&result.text);
        remaining -= n;
        if result.finish_reason.is_terminal() || remaining == 0 {
            break;
        }
    }
    Ok(text)
}

/// Generates one candidate, drawing a fresh source record from the momentum
/// mixture before every block.
pub fn momentum_generate(
    history: &OptimizerHistory,
    gen: &GenerationParams,
    rng: &mut RandomStream,
    lm: &dyn Backend,
    tag: &str,
) -> Result<String, OptimizerError> {
    if history.is_empty() {
        return Err(OptimizerError::EmptyHistory);
    }
    let weights = momentum_weights(gen.alpha, history.len() - 1)?;
    let mut rendered: Vec<Option<String>> = vec![None; history.len()];
    let seed_stream = rng.clone();
    generate_blocks(gen, lm, &seed_stream, tag, || {
        let source = sample_source(&weights, rng);
        if rendered[source].is_none() {
            rendered[source] = Some(refine_prompt(&history.records()[source], gen)?);
        }
        Ok(rendered[source].clone().expect("just rendered"))
    })
}

/// Generates one candidate conditioned only on `current`.
pub fn generate_vanilla(
    current: &PromptRecord,
    gen: &GenerationParams,
    rng: &RandomStream,
    lm: &dyn Backend,
    tag: &str,
) -> Result<String, OptimizerError> {
    let prompt = refine_prompt(current, gen)?;
    generate_blocks(gen, lm, rng, tag, || Ok(prompt.clone()))
}

/// Renders `template` with the last `window` prompts joined oldest-first,
/// plus the latest record's batch.
pub fn concat_momentum_prompt(
    history: &OptimizerHistory,
    window: usize,
    template: &TemplateText,
) -> Result<String, OptimizerError> {
    let latest = history.latest().ok_or(OptimizerError::EmptyHistory)?;
    let records = history.records();
    let start = records.len().saturating_sub(window.max(1));
    let past = records[start..]
        .iter()
        .map(|r| r.prompt_text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    Ok(template.render(&[
        ("past_prompts", &past),
        ("prompt", &latest.prompt_text),
        ("examples", &render_triples(&latest.batch_triples)),
    ])?)
}

/// Concatenation baseline: a vanilla block loop over the concatenated context.
pub(crate) fn generate_concat(
    history: &OptimizerHistory,
    gen: &GenerationParams,
    rng: &RandomStream,
    lm: &dyn Backend,
    tag: &str,
) -> Result<String, OptimizerError> {
    let window = gen.concat_window.unwrap_or(usize::MAX);
    let prompt = concat_momentum_prompt(history, window, &gen.concat_template)?;
    generate_blocks(gen, lm, rng, tag, || Ok(prompt.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Fallback, FinishReason, ScriptedBackend, ScriptedResponse};

    fn params(total: u32, block: u32) -> GenerationParams {
        GenerationParams {
            max_total_tokens: total,
            block_tokens: block,
            ..GenerationParams::default()
        }
    }

    fn step_backend() -> ScriptedBackend {
        ScriptedBackend::new(
            vec![],
            Fallback::Constant(ScriptedResponse::length("STEP ")),
        )
    }

    fn vocab_backend() -> ScriptedBackend {
        ScriptedBackend::new(
            vec![],
            Fallback::Vocabulary(["be", "clear", "label", "tone"].map(String::from).to_vec()),
        )
    }

    #[test]
    fn three_blocks_concatenate() {
        let h = OptimizerHistory::from_prompts(&["p0"]);
        let lm = step_backend();
        let mut rng = RandomStream::new(1);
        let out = momentum_generate(&h, &params(30, 10), &mut rng, &lm, "t").unwrap();
        assert_eq!(out, "STEP STEP STEP ");
        let log = lm.call_log();
        assert_eq!(log.len(), 3);
        assert_eq!(log[1].assistant_prefix, "STEP ");
        assert_eq!(log[2].assistant_prefix, "STEP STEP ");
        assert!(log.iter().all(|r| r.max_new_tokens == 10));
    }

    #[test]
    fn last_block_is_trimmed_to_budget() {
        let h = OptimizerHistory::from_prompts(&["p0"]);
        let lm = step_backend();
        momentum_generate(&h, &params(25, 10), &mut RandomStream::new(1), &lm, "t").unwrap();
        let budgets: Vec<u32> = lm.call_log().iter().map(|r| r.max_new_tokens).collect();
        assert_eq!(budgets, vec![10, 10, 5]);
    }

    #[test]
    fn early_stop_on_terminal_finish() {
        let lm = ScriptedBackend::constant("A");
        let out = generate_vanilla(
            &PromptRecord::new(0, "p"),
            &params(100, 10),
            &RandomStream::new(0),
            &lm,
            "t",
        )
        .unwrap();
        assert_eq!(out, "A");
        assert_eq!(lm.call_count(), 1);
        assert!(FinishReason::Eos.is_terminal());
    }

    #[test]
    fn full_block_is_one_call() {
        let lm = step_backend();
        let g = params(100, 100);
        generate_vanilla(
            &PromptRecord::new(0, "p"),
            &g,
            &RandomStream::new(0),
            &lm,
            "t",
        )
        .unwrap();
        let log = lm.call_log();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].max_new_tokens, 100);
    }

    #[test]
    fn vanilla_conditioning_contains_template_and_prompt() {
        let lm = step_backend();
        let g = params(10, 10);
        generate_vanilla(
            &PromptRecord::new(0, "Classify X"),
            &g,
            &RandomStream::new(0),
            &lm,
            "t",
        )
        .unwrap();
        let prompt = &lm.call_log()[0].prompt_text;
        assert!(prompt.contains("Classify X"));
        assert!(prompt.contains("Improved instruction:"));
    }

    #[test]
    fn single_record_history_always_used() {
        let h = OptimizerHistory::from_prompts(&["ONLY-SOURCE"]);
        let lm = step_backend();
        let g = GenerationParams {
            alpha: 1.0,
            ..params(50, 10)
        };
        momentum_generate(&h, &g, &mut RandomStream::new(5), &lm, "t").unwrap();
        assert!(lm
            .call_log()
            .iter()
            .all(|r| r.prompt_text.contains("ONLY-SOURCE")));
    }

    #[test]
    fn zero_alpha_matches_vanilla_on_latest() {
        let h = OptimizerHistory::from_prompts(&["p0", "p1", "p2"]);
        let g = GenerationParams {
            alpha: 0.0,
            ..params(100, 10)
        };
        let stream = RandomStream::new(77);
        let a = vocab_backend();
        let b = vocab_backend();
        let x = momentum_generate(&h, &g, &mut stream.clone(), &a, "t").unwrap();
        let y = generate_vanilla(h.latest().unwrap(), &g, &stream, &b, "t").unwrap();
        assert_eq!(x, y);
        assert_eq!(a.call_log(), b.call_log());
        assert!(a.call_log().iter().all(|r| r.prompt_text.contains("p2")));
    }

    #[test]
    fn momentum_mixes_sources() {
        let h = OptimizerHistory::from_prompts(&["SRC-A", "SRC-B"]);
        let g = GenerationParams {
            alpha: 1.0,
            ..params(400, 1)
        };
        let lm = step_backend();
        momentum_generate(&h, &g, &mut RandomStream::new(3), &lm, "t").unwrap();
        let log = lm.call_log();
        let a = log
            .iter()
            .filter(|r| r.prompt_text.contains("SRC-A"))
            .count();
        assert_eq!(log.len(), 400);
        // binomial(400, 0.5): mean 200, sd 10
        assert!((170..=230).contains(&a), "{a}");
    }

    #[test]
    fn empty_history_errors() {
        let lm = step_backend();
        let err = momentum_generate(
            &OptimizerHistory::new(),
            &params(10, 10),
            &mut RandomStream::new(0),
            &lm,
            "t",
        );
        assert!(matches!(err, Err(OptimizerError::EmptyHistory)));
        let t = TemplateText::new("{{ past_prompts }}");
        assert!(matches!(
            concat_momentum_prompt(&OptimizerHistory::new(), 2, &t),
            Err(OptimizerError::EmptyHistory)
        ));
    }

    #[test]
    fn gradient_mode_pairs_record_with_its_gradient() {
        let mut h = OptimizerHistory::new();
        for i in 0..2 {
            let mut r = PromptRecord::new(i, format!("prompt-{i}"));
            r.gradient_text = Some(format!("gradient-{i}"));
            h.push(r).unwrap();
        }
        let g = GenerationParams {
            alpha: 1.0,
            max_total_tokens: 200,
            block_tokens: 1,
            ..GenerationParams::case2()
        };
        let lm = step_backend();
        momentum_generate(&h, &g, &mut RandomStream::new(9), &lm, "t").unwrap();
        for r in lm.call_log() {
            let p0 = r.prompt_text.contains("prompt-0");
            assert_eq!(p0, r.prompt_text.contains("gradient-0"));
            assert_eq!(!p0, r.prompt_text.contains("gradient-1"));
        }
    }

    #[test]
    fn gradient_mode_requires_gradient() {
        let h = OptimizerHistory::from_prompts(&["p"]);
        let lm = step_backend();
        let err = momentum_generate(
            &h,
            &GenerationParams::case2(),
            &mut RandomStream::new(0),
            &lm,
            "t",
        );
        assert!(matches!(err, Err(OptimizerError::History(_))));
    }

    #[test]
    fn textual_gradient_passthrough_and_rendering() {
        let lm = ScriptedBackend::constant("Errors: the prompt ignores sarcasm");
        let mut rec = PromptRecord::new(0, "Classify X");
        rec.batch_triples.push(Triple::new("a", "pos", "neg"));
        let g = GenerationParams::case2();
        let analyze = g.analyze_template.clone().unwrap();
        let out = compute_textual_gradient(&rec, &analyze, &lm, &g).unwrap();
        assert_eq!(out, "Errors: the prompt ignores sarcasm");
        let sent = &lm.call_log()[0].prompt_text;
        for needle in ["Classify X", "a", "pos", "neg"] {
            assert!(sent.contains(needle));
        }

        rec.batch_triples.clear();
        assert!(matches!(
            compute_textual_gradient(&rec, &analyze, &lm, &g),
            Err(OptimizerError::EmptyBatch)
        ));
    }

    #[test]
    fn concat_window_slices_history() {
        let t = TemplateText::new(DEFAULT_CONCAT);
        let h = OptimizerHistory::from_prompts(&["alpha-p", "beta-p", "gamma-p"]);
        let two = concat_momentum_prompt(&h, 2, &t).unwrap();
        assert!(!two.contains("alpha-p"));
        let (b, c) = (two.find("beta-p").unwrap(), two.find("gamma-p").unwrap());
        assert!(b < c);
        let all = concat_momentum_prompt(&h, 10, &t).unwrap();
        let positions: Vec<usize> = ["alpha-p", "beta-p", "gamma-p"]
            .iter()
            .map(|p| all.find(p).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let one =
            concat_momentum_prompt(&OptimizerHistory::from_prompts(&["only"]), 3, &t).unwrap();
        assert_eq!(one.matches("only").count(), 1);
        assert!(one.contains("Here are the past iterations of this variable"));
    }

    const DEFAULT_CONCAT: &str = super::super::DEFAULT_CONCAT_TEMPLATE;
}
