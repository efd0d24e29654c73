//! Fixtures shared by the benchmarks.

use tsgdm_core::optimizer::{OptimizerHistory, PromptRecord, Triple};

/// A history of `len` records, each with a small batch of triples.
pub fn history(len: usize) -> OptimizerHistory {
    let mut h = OptimizerHistory::new();
    for i in 0..len {
        let mut r = PromptRecord::new(
            i,
            format!("Instruction number {i}: classify the text as positive or negative."),
        );
        r.batch_triples = (0..4)
            .map(|j| {
                Triple::new(
                    format!("review #{j}: the film was great"),
                    "positive",
                    "negative",
                )
            })
            .collect();
        h.push(r).expect("sequential iterations");
    }
    h
}
