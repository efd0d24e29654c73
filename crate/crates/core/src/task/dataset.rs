use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::Deserialize;

use super::{LabeledExample, TaskError};
use crate::rng::RandomStream;

#[derive(Deserialize)]
struct Record {
    text: String,
    label: serde_json::Value,
}

/// Loads line-delimited JSON records with `text` and `label` fields, in file
/// order. Blank lines are skipped. An empty `label_set` accepts any label.
pub fn load_dataset(path: &Path, label_set: &[String]) -> Result<Vec<LabeledExample>, TaskError> {
    let content = fs::read_to_string(path)?;
    parse_dataset(&content, label_set)
}

pub(crate) fn parse_dataset(
    content: &str,
    label_set: &[String],
) -> Result<Vec<LabeledExample>, TaskError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| TaskError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let label = match record.label {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(TaskError::Parse {
                    line: line_no,
                    message: format!("label must be a string or number, got {other}"),
                })
            }
        };
        if record.text.is_empty() {
            return Err(TaskError::Parse {
                line: line_no,
                message: "empty text".into(),
            });
        }
        if !label_set.is_empty() && !label_set.contains(&label) {
            return Err(TaskError::Label {
                line: line_no,
                label,
                allowed: label_set.to_vec(),
            });
        }
        out.push(LabeledExample::new(record.text, label));
    }
    Ok(out)
}

/// Draws `m` examples from `pool`. Without replacement the draw is a uniformly
/// random ordered subset.
pub fn sample_batch(
    pool: &[LabeledExample],
    m: usize,
    rng: &mut RandomStream,
    with_replacement: bool,
) -> Result<Vec<LabeledExample>, TaskError> {
    if m == 0 || pool.is_empty() || (!with_replacement && m > pool.len()) {
        return Err(TaskError::Size {
            requested: m,
            available: pool.len(),
        });
    }
    if with_replacement {
        Ok((0..m)
            .map(|_| pool[rng.random_range(0..pool.len())].clone())
            .collect())
    } else {
        Ok(index::sample(rng, pool.len(), m)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect())
    }
}
