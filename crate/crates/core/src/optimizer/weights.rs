use serde::{Deserialize, Serialize};

use super::OptimizerError;
use crate::rng::RandomStream;

/// Mixture weights over the history, oldest record first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Normalizes arbitrary nonnegative weights to sum to one.
    pub fn from_weights(raw: Vec<f64>) -> Result<Self, OptimizerError> {
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(OptimizerError::Domain(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(OptimizerError::Domain(
                "weights must have a positive sum".into(),
            ));
        }
        Ok(Self(raw.into_iter().map(|w| w / total).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Exponential-moving-average weights for records `0..=t`.
///
/// Record `τ` gets `α^(t-τ)`, normalized to sum to one. With `α = 0` every
/// record but the newest gets zero (taking `0^0 = 1`); with `α = 1` the
/// weights are uniform.
pub fn momentum_weights(alpha: f64, t: usize) -> Result<WeightVector, OptimizerError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(OptimizerError::Domain(format!(
            "momentum alpha must lie in [0, 1], got {alpha}"
        )));
    }
    // built newest-first so the largest term is exactly 1
    let mut raw = Vec::with_capacity(t + 1);
    let mut w = 1.0f64;
    for _ in 0..=t {
        raw.push(w);
        w *= alpha;
    }
    raw.reverse();
    let total: f64 = raw.iter().sum();
    Ok(WeightVector(raw.into_iter().map(|w| w / total).collect()))
}

/// Draws an index with probability equal to its weight, by inverting the
/// cumulative distribution. Zero-weight entries are never returned.
pub fn sample_source(weights: &WeightVector, rng: &mut RandomStream) -> usize {
    let w = weights.as_slice();
    assert!(!w.is_empty(), "cannot sample from an empty weight vector");
    let u = rng.next_unit() * w.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &wi) in w.iter().enumerate() {
        if wi <= 0.0 {
            continue;
        }
        acc += wi;
        last_positive = i;
        if u < acc {
            return i;
        }
    }
    last_positive
}
