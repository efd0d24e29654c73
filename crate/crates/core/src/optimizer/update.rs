use serde::{Deserialize, Serialize};

use super::generate::generate_concat;
use super::{
    generate_vanilla, momentum_generate, GenerationMode, GenerationParams, OptimizerError,
    OptimizerHistory, PromptRecord,
};
use crate::gateway::Backend;
use crate::rng::{domain, RandomStream};
use crate::task::Scorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub prompt: String,
    pub candidates: Vec<String>,
    /// Empty when a single candidate was generated, since nothing needs
    /// choosing.
    pub candidate_scores: Vec<f64>,
    pub selected: usize,
}

/// Index of the highest score; the lowest index wins ties.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

fn candidate_stream(rng: &RandomStream, iteration: usize, j: usize) -> RandomStream {
    rng.substream(&[domain::CANDIDATE, iteration as u64, j as u64])
}

fn candidate_tag(iteration: usize, j: usize) -> String {
    format!("gen/iter{iteration}/cand{j}")
}

fn finish(candidates: Vec<String>, scorer: &dyn Scorer) -> Result<UpdateOutcome, OptimizerError> {
    if candidates.len() == 1 {
        let prompt = candidates[0].clone();
        return Ok(UpdateOutcome {
            prompt,
            candidates,
            candidate_scores: Vec::new(),
            selected: 0,
        });
    }
    let scores = candidates
        .iter()
        .map(|c| scorer.score(c))
        .collect::<Result<Vec<_>, _>>()?;
    let selected = select_best(&scores).expect("at least two candidates");
    Ok(UpdateOutcome {
        prompt: candidates[selected].clone(),
        candidates,
        candidate_scores: scores,
        selected,
    })
}

/// Momentum update. Candidate `j` at iteration `t` draws from its own
/// substream of `rng`, so results do not depend on generation order.
/// In concat-baseline mode the candidates condition on the concatenated
/// history instead of sampling from it.
pub fn update_mom(
    history: &OptimizerHistory,
    gen: &GenerationParams,
    scorer: &dyn Scorer,
    rng: &RandomStream,
    lm: &dyn Backend,
) -> Result<UpdateOutcome, OptimizerError> {
    let t = history
        .latest()
        .ok_or(OptimizerError::EmptyHistory)?
        .iteration;
    let candidates = (0..gen.candidates)
        .map(|j| {
            let mut stream = candidate_stream(rng, t, j);
            let tag = candidate_tag(t, j);
            match gen.mode {
                GenerationMode::ConcatBaseline => generate_concat(history, gen, &stream, lm, &tag),
                _ => momentum_generate(history, gen, &mut stream, lm, &tag),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    finish(candidates, scorer)
}

/// Update without momentum: every candidate conditions on `current`.
pub fn update_vanilla(
    current: &PromptRecord,
    gen: &GenerationParams,
    scorer: &dyn Scorer,
    rng: &RandomStream,
    lm: &dyn Backend,
) -> Result<UpdateOutcome, OptimizerError> {
    let t = current.iteration;
    let candidates = (0..gen.candidates)
        .map(|j| {
            generate_vanilla(
                current,
                gen,
                &candidate_stream(rng, t, j),
                lm,
                &candidate_tag(t, j),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    finish(candidates, scorer)
}
