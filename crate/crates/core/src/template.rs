//! Minimal `{{ name }}` placeholder templates.
//!
//! Substituted values are inserted verbatim and never re-scanned, so a prompt
//! that happens to contain `{{` cannot inject placeholders.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template references unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateText(String);

impl TemplateText {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Variables referenced by this template, in order of first appearance.
    pub fn variables(&self) -> Result<Vec<String>, TemplateError> {
        let mut out: Vec<String> = Vec::new();
        for piece in self.pieces()? {
            if let Piece::Var(name) = piece {
                if !out.iter().any(|n| n == name) {
                    out.push(name.to_string());
                }
            }
        }
        Ok(out)
    }

    pub fn references(&self, name: &str) -> bool {
        self.variables()
            .map(|vs| vs.iter().any(|v| v == name))
            .unwrap_or(false)
    }

    /// Renders with the given bindings. Bindings the template does not use are
    /// ignored; placeholders without a binding are an error.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.0.len());
        for piece in self.pieces()? {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Var(name) => {
                    let value = vars
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TemplateError::UnknownVariable(name.to_string()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    fn pieces(&self) -> Result<Vec<Piece<'_>>, TemplateError> {
        let s = self.0.as_str();
        let mut pieces = Vec::new();
        let mut rest = 0;
        while let Some(open) = s[rest..].find("{{").map(|i| i + rest) {
            let close = s[open + 2..]
                .find("}}")
                .map(|i| i + open + 2)
                .ok_or(TemplateError::Unterminated(open))?;
            if open > rest {
                pieces.push(Piece::Text(&s[rest..open]));
            }
            pieces.push(Piece::Var(s[open + 2..close].trim()));
            rest = close + 2;
        }
        if rest < s.len() {
            pieces.push(Piece::Text(&s[rest..]));
        }
        Ok(pieces)
    }
}

impl From<&str> for TemplateText {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

enum Piece<'a> {
    Text(&'a str),
    Var(&'a str),
}
