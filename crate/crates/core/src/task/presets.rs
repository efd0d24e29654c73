use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{load_dataset, TaskBinding, TaskError, FORWARD_TEMPLATE};
use crate::template::TemplateText;

/// Initial prompt, label set and reference split sizes for a named task.
/// Corpora are not shipped; point [`TaskPreset::bind`] at local files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPreset {
    pub name: String,
    pub initial_prompt: String,
    pub label_set: Vec<String>,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

static PRESETS: OnceLock<Vec<TaskPreset>> = OnceLock::new();

pub fn presets() -> &'static [TaskPreset] {
    PRESETS.get_or_init(|| {
        serde_json::from_str(include_str!("../../presets/tasks.json"))
            .expect("shipped task presets parse")
    })
}

pub fn preset(name: &str) -> Option<&'static TaskPreset> {
    let name = name.to_ascii_lowercase();
    presets().iter().find(|p| p.name == name)
}

impl TaskPreset {
    /// Loads the three split files and truncates each to the preset's
    /// reference size when the file is larger.
    pub fn bind(
        &self,
        train: &Path,
        holdout: &Path,
        test: &Path,
    ) -> Result<TaskBinding, TaskError> {
        let load = |p: &Path, n: usize| -> Result<_, TaskError> {
            let mut v = load_dataset(p, &self.label_set)?;
            v.truncate(n);
            Ok(v)
        };
        let binding = TaskBinding {
            name: self.name.clone(),
            label_set: self.label_set.clone(),
            train: load(train, self.train)?,
            holdout: load(holdout, self.valid)?,
            test: load(test, self.test)?,
            initial_prompt: self.initial_prompt.clone(),
            forward_template: TemplateText::new(FORWARD_TEMPLATE),
        };
        binding.validate()?;
        Ok(binding)
    }
}
