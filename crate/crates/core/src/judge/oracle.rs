//! Synthetic judges driven by known true ratings.
//!
//! The probabilistic oracle realizes duels consistent with the Elo model:
//! A beats B with probability `expected_score(true_a, true_b)`. The noisy
//! variant flips the probabilistic outcome with a fixed probability,
//! emulating a weaker annotator. All draws come from a seeded stream.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rating::{expected_score, ItemId, Outcome, Rating};

use super::{DuelSide, JudgeError, JudgeVerdict, PairwiseJudge, RelevanceJudge, RelevanceVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// A wins with probability `expected_score(true_a, true_b)`.
    Probabilistic,
    /// Higher true rating wins; exact tie yields TIE.
    Deterministic,
    /// Probabilistic outcome flipped with the given probability in [0, 0.5).
    Noisy(f64),
}

#[derive(Debug, Clone)]
pub struct SyntheticOracleConfig {
    pub true_ratings: HashMap<ItemId, Rating>,
    pub mode: OracleMode,
    pub rng_seed: u64,
}

/// Pairwise judge whose verdicts are consistent with a hidden true-rating
/// table.
#[derive(Debug)]
pub struct SyntheticOracle {
    true_ratings: HashMap<ItemId, Rating>,
    mode: OracleMode,
    rng: ChaCha8Rng,
    name: String,
}

impl SyntheticOracle {
    pub fn new(config: SyntheticOracleConfig) -> Result<Self, JudgeError> {
        if let OracleMode::Noisy(flip) = config.mode {
            if !(0.0..0.5).contains(&flip) {
                return Err(JudgeError::InvalidFlipProbability(flip));
            }
        }
        let name = match config.mode {
            OracleMode::Probabilistic => "oracle:probabilistic",
            OracleMode::Deterministic => "oracle:deterministic",
            OracleMode::Noisy(_) => "oracle:noisy",
        };
        Ok(Self {
            true_ratings: config.true_ratings,
            mode: config.mode,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            name: name.to_string(),
        })
    }

    pub fn true_rating(&self, id: &str) -> Option<Rating> {
        self.true_ratings.get(id).copied()
    }

    fn lookup(&self, id: &str) -> Result<Rating, JudgeError> {
        self.true_ratings
            .get(id)
            .copied()
            .ok_or_else(|| JudgeError::UnknownItem(id.to_string()))
    }
}

impl PairwiseJudge for SyntheticOracle {
    fn judge_pair(
        &mut self,
        a: DuelSide<'_>,
        b: DuelSide<'_>,
        _attribute: &str,
    ) -> Result<JudgeVerdict, JudgeError> {
        if a.id == b.id {
            return Err(JudgeError::SelfDuel(a.id.to_string()));
        }
        let true_a = self.lookup(a.id)?;
        let true_b = self.lookup(b.id)?;
        let outcome = match self.mode {
            OracleMode::Deterministic => {
                if true_a.0 > true_b.0 {
                    Outcome::AWins
                } else if true_b.0 > true_a.0 {
                    Outcome::BWins
                } else {
                    Outcome::Tie
                }
            }
            OracleMode::Probabilistic => {
                let p = expected_score(true_a, true_b)?;
                if self.rng.random::<f64>() < p {
                    Outcome::AWins
                } else {
                    Outcome::BWins
                }
            }
            OracleMode::Noisy(flip) => {
                let p = expected_score(true_a, true_b)?;
                let base = if self.rng.random::<f64>() < p {
                    Outcome::AWins
                } else {
                    Outcome::BWins
                };
                if self.rng.random::<f64>() < flip {
                    base.flipped()
                } else {
                    base
                }
            }
        };
        Ok(JudgeVerdict {
            outcome,
            raw_reply: String::new(),
            cached: false,
        })
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Relevance judge that always answers with a fixed score; the "always
/// relevant" oracle is `ConstantRelevanceJudge::new(1)`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantRelevanceJudge {
    score: u8,
}

impl ConstantRelevanceJudge {
    pub fn new(score: u8) -> Self {
        Self {
            score: score.min(1),
        }
    }
}

impl RelevanceJudge for ConstantRelevanceJudge {
    fn judge_relevance(
        &mut self,
        query: &str,
        response: &str,
    ) -> Result<RelevanceVerdict, JudgeError> {
        if query.is_empty() || response.is_empty() {
            return Err(JudgeError::EmptyRelevanceInput);
        }
        Ok(RelevanceVerdict {
            score: self.score,
            raw_reply: String::new(),
            cached: false,
        })
    }
}
