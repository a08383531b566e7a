//! Prompt templates with `{placeholder}` syntax, loaded from files.
//!
//! Template bodies are configuration, never hard-coded: the shipped
//! defaults under `templates/` are editable paraphrases. Each required
//! placeholder must appear exactly once.

use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PAIRWISE_PLACEHOLDERS: [&str; 3] = ["attribute", "response_a", "response_b"];
pub const RELEVANCE_PLACEHOLDERS: [&str; 2] = ["query", "response"];
pub const GENERATION_PLACEHOLDERS: [&str; 2] = ["query", "degree_description"];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("template {path} must contain placeholder {{{name}}} exactly once, found {found}")]
    PlaceholderCount {
        path: PathBuf,
        name: String,
        found: usize,
    },
}

/// One template body plus a stable content id used in cache keys.
#[derive(Debug, Clone)]
pub struct Template {
    text: String,
    id: String,
}

impl Template {
    pub fn from_text(
        text: impl Into<String>,
        placeholders: &[&str],
        origin: &Path,
    ) -> Result<Self, TemplateError> {
        let text = text.into();
        for &name in placeholders {
            let token = format!("{{{name}}}");
            let found = text.matches(&token).count();
            if found != 1 {
                return Err(TemplateError::PlaceholderCount {
                    path: origin.to_path_buf(),
                    name: name.to_string(),
                    found,
                });
            }
        }
        let digest = Sha256::digest(text.as_bytes());
        let id = digest
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect();
        Ok(Self { text, id })
    }

    pub fn load(path: impl AsRef<Path>, placeholders: &[&str]) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(text, placeholders, path)
    }

    /// Content id (hash prefix of the body); changes whenever the body does.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn fill(&self, values: &[(&str, &str)]) -> String {
        let mut out = self.text.clone();
        for (name, value) in values {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// The three templates a remote judge/generator needs.
#[derive(Debug, Clone)]
pub struct PromptTemplateSet {
    pub pairwise: Template,
    pub relevance: Template,
    pub generation: Template,
}

impl PromptTemplateSet {
    pub fn load(
        pairwise_path: impl AsRef<Path>,
        relevance_path: impl AsRef<Path>,
        generation_path: impl AsRef<Path>,
    ) -> Result<Self, TemplateError> {
        Ok(Self {
            pairwise: Template::load(pairwise_path, &PAIRWISE_PLACEHOLDERS)?,
            relevance: Template::load(relevance_path, &RELEVANCE_PLACEHOLDERS)?,
            generation: Template::load(generation_path, &GENERATION_PLACEHOLDERS)?,
        })
    }
}
