//! Pluggable pairwise-preference judges, relevance judges, and controlled
//! generation clients.
//!
//! Four judge families share the same traits: seeded synthetic oracles
//! (probabilistic, deterministic, noisy), a replay judge primed by content
//! hash, and a remote chat-completion judge with an append-only verdict
//! cache. Synthetic judges are pure given their seed stream, so identical
//! seeds replay identical verdict sequences.

mod cache;
mod oracle;
mod remote;
mod template;

pub use cache::{CacheEntry, VerdictCache};
pub use oracle::{ConstantRelevanceJudge, OracleMode, SyntheticOracle, SyntheticOracleConfig};
pub use remote::{RemoteClient, RemoteEndpoint, RemoteGenerator, RemoteJudge, RemoteJudgeConfig};
pub use template::{PromptTemplateSet, Template, TemplateError};

use std::collections::HashMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rating::{Outcome, RatingError};

/// The two sides of a duel as presented to a judge: item id plus text.
/// Synthetic oracles only look at the id; remote judges only at the text.
#[derive(Debug, Clone, Copy)]
pub struct DuelSide<'a> {
    pub id: &'a str,
    pub text: &'a str,
}

impl<'a> DuelSide<'a> {
    pub fn new(id: &'a str, text: &'a str) -> Self {
        Self { id, text }
    }
}

/// Verdict of one pairwise duel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgeVerdict {
    pub outcome: Outcome,
    /// Raw judge reply; empty for synthetic judges.
    pub raw_reply: String,
    pub cached: bool,
}

/// Binary relevance verdict for a (query, response) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceVerdict {
    /// 0 or 1.
    pub score: u8,
    pub raw_reply: String,
    pub cached: bool,
}

pub trait PairwiseJudge {
    /// Decide which of two distinct items shows the greater intensity of
    /// `attribute`.
    fn judge_pair(
        &mut self,
        a: DuelSide<'_>,
        b: DuelSide<'_>,
        attribute: &str,
    ) -> Result<JudgeVerdict, JudgeError>;

    /// Identifier recorded in comparison logs.
    fn name(&self) -> &str;
}

pub trait RelevanceJudge {
    fn judge_relevance(
        &mut self,
        query: &str,
        response: &str,
    ) -> Result<RelevanceVerdict, JudgeError>;
}

pub trait Generator {
    fn generate(&mut self, query: &str, degree_description: &str) -> Result<String, JudgeError>;
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("cannot judge an item against itself: {0:?}")]
    SelfDuel(String),
    #[error("both duel texts must be non-empty for remote judging")]
    EmptyDuelText,
    #[error("query and response must be non-empty")]
    EmptyRelevanceInput,
    #[error("query must be non-empty")]
    EmptyQuery,
    #[error("generator returned empty text")]
    EmptyGeneration,
    #[error("no true rating configured for item {0:?}")]
    UnknownItem(String),
    #[error("flip probability must lie in [0, 0.5), got {0}")]
    InvalidFlipProbability(f64),
    #[error("judge reply not parseable after retry: {reply:?}")]
    UnparseableReply { reply: String },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("unexpected chat-completion response shape: {0}")]
    ResponseShape(String),
    #[error("degree description {0:?} is not in the configured candidate list")]
    DescriptorNotInCandidates(String),
    #[error("no scripted generation for query {query:?} with description {description:?}")]
    MissingScript { query: String, description: String },
    #[error("no replayed verdict for key {0}")]
    MissingReplay(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("cache i/o: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("cache entry malformed at line {line}: {source}")]
    CacheFormat {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Rating(#[from] RatingError),
}

fn sha_hex(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Content hash keying a pairwise verdict: (template id, attribute, texts in
/// caller order).
pub fn pair_key(template_id: &str, attribute: &str, text_a: &str, text_b: &str) -> String {
    sha_hex(&["pair", template_id, attribute, text_a, text_b])
}

/// Content hash keying a relevance verdict.
pub fn relevance_key(template_id: &str, query: &str, response: &str) -> String {
    sha_hex(&["relevance", template_id, query, response])
}

/// Content hash keying a cached generation.
pub fn generation_key(template_id: &str, query: &str, description: &str) -> String {
    sha_hex(&["gen", template_id, query, description])
}

/// Judge primed with fixed verdicts by content hash; never calls out.
#[derive(Debug, Default)]
pub struct ReplayJudge {
    template_id: String,
    pairs: HashMap<String, Outcome>,
    relevance: HashMap<String, u8>,
}

impl ReplayJudge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_template_id(template_id: impl Into<String>) -> Self {
        Self {
            template_id: template_id.into(),
            ..Self::default()
        }
    }

    pub fn prime_pair(&mut self, key: impl Into<String>, outcome: Outcome) {
        self.pairs.insert(key.into(), outcome);
    }

    pub fn prime_relevance(&mut self, key: impl Into<String>, score: u8) {
        self.relevance.insert(key.into(), score);
    }

    pub fn template_id(&self) -> &str {
        &self.template_id
    }
}

impl PairwiseJudge for ReplayJudge {
    fn judge_pair(
        &mut self,
        a: DuelSide<'_>,
        b: DuelSide<'_>,
        attribute: &str,
    ) -> Result<JudgeVerdict, JudgeError> {
        if a.id == b.id {
            return Err(JudgeError::SelfDuel(a.id.to_string()));
        }
        let key = pair_key(&self.template_id, attribute, a.text, b.text);
        let outcome = self
            .pairs
            .get(&key)
            .copied()
            .ok_or(JudgeError::MissingReplay(key))?;
        Ok(JudgeVerdict {
            outcome,
            raw_reply: String::new(),
            cached: true,
        })
    }

    fn name(&self) -> &str {
        "replay"
    }
}

impl RelevanceJudge for ReplayJudge {
    fn judge_relevance(
        &mut self,
        query: &str,
        response: &str,
    ) -> Result<RelevanceVerdict, JudgeError> {
        let key = relevance_key(&self.template_id, query, response);
        let score = self
            .relevance
            .get(&key)
            .copied()
            .ok_or(JudgeError::MissingReplay(key))?;
        Ok(RelevanceVerdict {
            score,
            raw_reply: String::new(),
            cached: true,
        })
    }
}

/// Offline generator backed by a (query, description) -> text table, so
/// pipelines are testable without a model endpoint.
#[derive(Debug, Default)]
pub struct ScriptedGenerator {
    table: HashMap<(String, String), String>,
    candidates: Option<Vec<String>>,
}

impl ScriptedGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Restrict degree descriptions to a candidate list.
    pub fn with_candidates(mut self, candidates: Vec<String>) -> Self {
        self.candidates = Some(candidates);
        self
    }

    pub fn script(
        &mut self,
        query: impl Into<String>,
        description: impl Into<String>,
        text: impl Into<String>,
    ) {
        self.table
            .insert((query.into(), description.into()), text.into());
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&mut self, query: &str, degree_description: &str) -> Result<String, JudgeError> {
        if query.is_empty() {
            return Err(JudgeError::EmptyQuery);
        }
        if let Some(candidates) = &self.candidates {
            if !candidates.iter().any(|c| c == degree_description) {
                return Err(JudgeError::DescriptorNotInCandidates(
                    degree_description.to_string(),
                ));
            }
        }
        let text = self
            .table
            .get(&(query.to_string(), degree_description.to_string()))
            .cloned()
            .ok_or_else(|| JudgeError::MissingScript {
                query: query.to_string(),
                description: degree_description.to_string(),
            })?;
        if text.is_empty() {
            return Err(JudgeError::EmptyGeneration);
        }
        Ok(text)
    }
}
