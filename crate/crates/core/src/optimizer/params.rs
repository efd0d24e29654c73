use serde::{Deserialize, Serialize};

use super::OptimizerError;
use crate::template::TemplateText;

pub const DEFAULT_CASE1_REFINE_TEMPLATE: &str = "\
A language model reads an instruction followed by an input and must produce the correct output.

Current instruction:
{{ prompt }}

Recent results with this instruction:
{{ examples }}

Write an improved instruction that fixes the mistakes above and keeps what already works. \
Reply with the instruction only.

Improved instruction:";

pub const DEFAULT_CASE2_REFINE_TEMPLATE: &str = "\
A language model reads an instruction followed by an input and must produce the correct output.

Current instruction:
{{ prompt }}

Feedback on the current instruction:
{{ gradient }}

Rewrite the instruction so that it addresses the feedback. Reply with the instruction only.

Improved instruction:";

pub const DEFAULT_ANALYZE_TEMPLATE: &str = "\
A language model was given the instruction below and then asked to answer each input.

Instruction:
{{ prompt }}

Results:
{{ examples }}

Describe the systematic errors this instruction leads to and what should change. Be concise.";

/// Baseline conditioning that concatenates past prompts into one context.
pub const DEFAULT_CONCAT_TEMPLATE: &str = "\
A language model reads an instruction followed by an input and must produce the correct output.

Here are the past iterations of this variable:
<PAST_ITERATIONS>{{ past_prompts }}</PAST_ITERATIONS>

Recent results with the latest instruction:
{{ examples }}

Write an improved instruction that fixes the mistakes above. Reply with nothing but the \
instruction.

Improved instruction:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Condition each block on a past prompt (and its batch).
    Case1MetaPrompt,
    /// Condition each block on a past prompt and its paired textual gradient.
    Case2Gradient,
    /// Condition on the concatenation of recent prompts; no sampling.
    ConcatBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub alpha: f64,
    pub max_total_tokens: u32,
    pub block_tokens: u32,
    pub temperature: f64,
    pub candidates: usize,
    pub mode: GenerationMode,
    pub refine_template: TemplateText,
    pub analyze_template: Option<TemplateText>,
    pub concat_template: TemplateText,
    /// Number of most recent prompts the concat baseline includes; `None`
    /// includes all of them.
    pub concat_window: Option<usize>,
    pub gradient_max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            max_total_tokens: 100,
            block_tokens: 10,
            temperature: 0.7,
            candidates: 20,
            mode: GenerationMode::Case1MetaPrompt,
            refine_template: TemplateText::new(DEFAULT_CASE1_REFINE_TEMPLATE),
            analyze_template: None,
            concat_template: TemplateText::new(DEFAULT_CONCAT_TEMPLATE),
            concat_window: None,
            gradient_max_tokens: 200,
        }
    }
}

impl GenerationParams {
    /// Defaults for the two-stage analyze-then-refine workflow.
    pub fn case2() -> Self {
        Self {
            mode: GenerationMode::Case2Gradient,
            refine_template: TemplateText::new(DEFAULT_CASE2_REFINE_TEMPLATE),
            analyze_template: Some(TemplateText::new(DEFAULT_ANALYZE_TEMPLATE)),
            ..Self::default()
        }
    }

    pub fn concat_baseline() -> Self {
        Self {
            mode: GenerationMode::ConcatBaseline,
            ..Self::default()
        }
    }

    pub fn num_blocks(&self) -> u32 {
        self.max_total_tokens.div_ceil(self.block_tokens.max(1))
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: String| Err(OptimizerError::InvalidParams(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.max_total_tokens == 0 {
            return bad("max_total_tokens must be positive".into());
        }
        if self.block_tokens == 0 || self.block_tokens > self.max_total_tokens {
            return bad(format!(
                "block_tokens must lie in 1..={}, got {}",
                self.max_total_tokens, self.block_tokens
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad(format!(
                "temperature must be nonnegative, got {}",
                self.temperature
            ));
        }
        if self.candidates == 0 {
            return bad("candidates must be at least 1".into());
        }
        if self.gradient_max_tokens == 0 {
            return bad("gradient_max_tokens must be positive".into());
        }
        if self.concat_window == Some(0) {
            return bad("concat_window must be positive".into());
        }
        match (self.mode, &self.analyze_template) {
            (GenerationMode::Case2Gradient, None) => {
                return bad("gradient mode requires an analyze template".into())
            }
            (GenerationMode::Case1MetaPrompt | GenerationMode::ConcatBaseline, Some(_)) => {
                return bad("analyze template is only used in gradient mode".into())
            }
            _ => {}
        }
        self.refine_template.variables()?;
        if self.mode == GenerationMode::ConcatBaseline
            && !self.concat_template.references("past_prompts")
        {
            return bad("concat template must reference {{ past_prompts }}".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HypothesisPreset {
    /// Temperature 0.7, patience 2.
    H0,
    /// Temperature 1.1, patience 5.
    H1,
    #[serde(rename = "custom")]
    Custom,
}

impl HypothesisPreset {
    /// `(temperature, patience)` forced by the preset.
    pub fn settings(self) -> Option<(f64, usize)> {
        match self {
            HypothesisPreset::H0 => Some((0.7, 2)),
            HypothesisPreset::H1 => Some((1.1, 5)),
            HypothesisPreset::Custom => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub total_iterations: usize,
    pub batch_size: usize,
    /// Use only the first `train_size` training examples; `None` uses all.
    pub train_size: Option<usize>,
    pub patience: usize,
    pub hypothesis_preset: HypothesisPreset,
    pub seed: u64,
    pub generation: GenerationParams,
    pub use_momentum: bool,
    pub with_replacement: bool,
    pub max_gateway_calls: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = Self {
            total_iterations: 20,
            batch_size: 20,
            train_size: None,
            patience: 2,
            hypothesis_preset: HypothesisPreset::H0,
            seed: 0,
            generation: GenerationParams::default(),
            use_momentum: true,
            with_replacement: false,
            max_gateway_calls: None,
        };
        c.apply_preset();
        c
    }
}

impl RunConfig {
    pub fn with_preset(mut self, preset: HypothesisPreset) -> Self {
        self.hypothesis_preset = preset;
        self.apply_preset();
        self
    }

    /// Overwrites temperature and patience with the preset's values.
    pub fn apply_preset(&mut self) {
        if let Some((temperature, patience)) = self.hypothesis_preset.settings() {
            self.generation.temperature = temperature;
            self.patience = patience;
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        self.generation.validate()?;
        if self.batch_size == 0 {
            return Err(OptimizerError::InvalidParams(
                "batch_size must be positive".into(),
            ));
        }
        if self.train_size == Some(0) {
            return Err(OptimizerError::InvalidParams(
                "train_size must be positive".into(),
            ));
        }
        if self.patience == 0 {
            return Err(OptimizerError::InvalidParams(
                "patience must be positive".into(),
            ));
        }
        if let Some((temperature, patience)) = self.hypothesis_preset.settings() {
            if self.generation.temperature != temperature || self.patience != patience {
                return Err(OptimizerError::InvalidParams(format!(
                    "preset {:?} requires temperature {temperature} and patience {patience}",
                    self.hypothesis_preset
                )));
            }
        }
        Ok(())
    }
}
