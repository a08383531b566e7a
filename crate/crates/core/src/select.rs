//! Calibration of intensity descriptors: evaluate candidate degree
//! parameters on held-out generations and brute-force the length-n
//! subsequence minimizing the overall metric.
//!
//! Candidates are assumed pre-sorted by nominal intensity, so the default
//! search is over strictly increasing index subsequences (C(m, n) of them;
//! 184,756 for the 20-choose-10 case). An ablation mode instead permutes
//! each chosen subset; because Mean-STD and relevance are order-invariant
//! and the targets are increasing, the optimal permutation of a fixed
//! subset sorts its candidates by mean rating, so that mode stays
//! polynomial per subset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    self, AttributeRange, ControlLevelStats, MetricsError, MetricsReport, DEFAULT_LEVEL_COUNT,
};
use crate::rating::Rating;

/// The fixed universal semantic shifters, in intensity order.
pub const UNIVERSAL_SHIFTERS: [&str; 10] = [
    "extremely not",
    "very not",
    "moderately not",
    "somewhat not",
    "a little bit not",
    "a little bit",
    "somewhat",
    "moderately",
    "very",
    "extremely",
];

/// One candidate degree parameter with its held-out evaluation data.
/// Serializes to the JSONL candidate-file format
/// `{"label": str, "index": int, "ratings": [..], "relevance": [0/1, ..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateParameter {
    pub label: String,
    pub index: usize,
    pub ratings: Vec<Rating>,
    pub relevance: Vec<u8>,
}

impl CandidateParameter {
    pub fn new(
        label: impl Into<String>,
        index: usize,
        ratings: Vec<Rating>,
        relevance: Vec<u8>,
    ) -> Self {
        Self {
            label: label.into(),
            index,
            ratings,
            relevance,
        }
    }
}

/// Per-candidate summary used by sequence scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateStats {
    pub mean: Rating,
    pub std: f64,
    pub relevance: f64,
}

/// A selected descriptor sequence and its score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterSequence {
    /// Candidate indices in evaluation order (strictly increasing in the
    /// default monotone mode).
    pub chosen: Vec<usize>,
    pub metric: f64,
    pub report: MetricsReport,
    /// Number of sequences enumerated during selection.
    pub enumerated: u64,
}

/// Search space for [`select_best_sequence_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SequenceConstraint {
    /// Strictly increasing index subsequences of the candidate list.
    #[default]
    Monotone,
    /// Any permutation of a chosen subset; evaluated at the optimal
    /// (sorted-by-mean) assignment to the increasing targets.
    PermutedSubset,
}

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("need at least {need} candidates, got {have}")]
    TooFewCandidates { have: usize, need: usize },
    #[error("candidate {label:?} has no ratings")]
    EmptyCandidate { label: String },
    #[error("candidate {label:?} has {ratings} ratings but {verdicts} relevance verdicts")]
    Misaligned {
        label: String,
        ratings: usize,
        verdicts: usize,
    },
    #[error("selection must have length {expected}, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("selection indices must be strictly increasing")]
    NonMonotone,
    #[error("selection index {index} out of bounds for {count} candidates")]
    IndexOutOfBounds { index: usize, count: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Mean rating, population std, and relevance fraction of one candidate's
/// held-out generations.
pub fn evaluate_candidate(candidate: &CandidateParameter) -> Result<CandidateStats, SelectError> {
    if candidate.ratings.is_empty() {
        return Err(SelectError::EmptyCandidate {
            label: candidate.label.clone(),
        });
    }
    if candidate.ratings.len() != candidate.relevance.len() {
        return Err(SelectError::Misaligned {
            label: candidate.label.clone(),
            ratings: candidate.ratings.len(),
            verdicts: candidate.relevance.len(),
        });
    }
    let level = ControlLevelStats::new(0, candidate.ratings.clone())?;
    let relevance = metrics::relevance_score(candidate.relevance.iter().copied())?;
    Ok(CandidateStats {
        mean: level.mean(),
        std: level.std(),
        relevance,
    })
}

/// Score a selection of `n` candidates, treating the i-th chosen candidate
/// as control value i.
///
/// Sequence-level relevance is the mean of the chosen candidates' relevance
/// fractions (not pooled over verdicts).
pub fn score_sequence(
    candidates: &[CandidateParameter],
    chosen: &[usize],
    n: usize,
    range: &AttributeRange,
    alpha: f64,
) -> Result<MetricsReport, SelectError> {
    validate_selection(chosen, n, candidates.len(), true)?;
    let stats: Vec<CandidateStats> = chosen
        .iter()
        .map(|&i| evaluate_candidate(&candidates[i]))
        .collect::<Result<_, _>>()?;
    score_stats(&stats, range, alpha).map_err(Into::into)
}

fn validate_selection(
    chosen: &[usize],
    n: usize,
    count: usize,
    require_monotone: bool,
) -> Result<(), SelectError> {
    if chosen.len() != n {
        return Err(SelectError::WrongLength {
            expected: n,
            got: chosen.len(),
        });
    }
    for (pos, &index) in chosen.iter().enumerate() {
        if index >= count {
            return Err(SelectError::IndexOutOfBounds { index, count });
        }
        if require_monotone && pos > 0 && chosen[pos - 1] >= index {
            return Err(SelectError::NonMonotone);
        }
    }
    Ok(())
}

fn score_stats(
    stats: &[CandidateStats],
    range: &AttributeRange,
    alpha: f64,
) -> Result<MetricsReport, MetricsError> {
    let n = stats.len();
    let mut mae = 0.0;
    for (c, s) in stats.iter().enumerate() {
        let target = metrics::target_rating(c, n, range)?;
        mae += (s.mean.0 - target.0).abs();
    }
    let mean_std = stats.iter().map(|s| s.std).sum::<f64>() / n as f64;
    let relevance = stats.iter().map(|s| s.relevance).sum::<f64>() / n as f64;
    let overall = metrics::overall_metric(mae, mean_std, range, relevance, alpha)?;
    Ok(MetricsReport {
        mean_mae: mae,
        mean_std,
        relevance,
        overall: overall.value,
        alpha,
        relevance_zero: overall.relevance_zero,
    })
}

/// Brute-force the best length-`n` monotone subsequence of the candidates.
///
/// Enumerates all C(m, n) strictly increasing index sequences and returns
/// the one minimizing the overall metric; ties break to the
/// lexicographically smallest index sequence. Relevance-zero sequences carry
/// the `f64::MAX` sentinel, so they never beat a finite-metric sequence.
pub fn select_best_sequence(
    candidates: &[CandidateParameter],
    n: usize,
    range: &AttributeRange,
    alpha: f64,
) -> Result<ParameterSequence, SelectError> {
    select_best_sequence_with(candidates, n, range, alpha, SequenceConstraint::Monotone)
}

/// [`select_best_sequence`] with an explicit search-space constraint.
pub fn select_best_sequence_with(
    candidates: &[CandidateParameter],
    n: usize,
    range: &AttributeRange,
    alpha: f64,
    constraint: SequenceConstraint,
) -> Result<ParameterSequence, SelectError> {
    let m = candidates.len();
    if m < n {
        return Err(SelectError::TooFewCandidates { have: m, need: n });
    }
    if n < 2 {
        return Err(SelectError::Metrics(MetricsError::InvalidLevelCount(n)));
    }
    range.validate()?;

    let stats: Vec<CandidateStats> = candidates
        .iter()
        .map(evaluate_candidate)
        .collect::<Result<_, _>>()?;
    let targets: Vec<f64> = (0..n)
        .map(|c| metrics::target_rating(c, n, range).map(|r| r.0))
        .collect::<Result<_, MetricsError>>()?;

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut enumerated = 0u64;
    let mut order = vec![0usize; n];
    for_each_combination(m, n, |combo| {
        enumerated += 1;
        order.copy_from_slice(combo);
        if constraint == SequenceConstraint::PermutedSubset {
            // Optimal assignment of a fixed subset to increasing targets
            // sorts by mean; std and relevance are order-invariant.
            order.sort_by(|&a, &b| stats[a].mean.0.total_cmp(&stats[b].mean.0));
        }
        let mut mae = 0.0;
        let mut std_sum = 0.0;
        let mut rel_sum = 0.0;
        for (c, &i) in order.iter().enumerate() {
            mae += (stats[i].mean.0 - targets[c]).abs();
            std_sum += stats[i].std;
            rel_sum += stats[i].relevance;
        }
        let relevance = rel_sum / n as f64;
        let value = if relevance == 0.0 {
            f64::MAX
        } else {
            2.0 * (alpha * mae + (1.0 - alpha) * (std_sum / n as f64)) / (range.span() * relevance)
        };
        let better = match &best {
            None => true,
            Some((best_value, _)) => value < *best_value,
        };
        if better {
            best = Some((value, order.clone()));
        }
    });

    let (_, chosen) = best.expect("at least one combination when m >= n");
    let report = {
        let chosen_stats: Vec<CandidateStats> = chosen.iter().map(|&i| stats[i]).collect();
        score_stats(&chosen_stats, range, alpha)?
    };
    Ok(ParameterSequence {
        metric: report.overall,
        chosen,
        report,
        enumerated,
    })
}

/// Visit every n-element combination of `0..m` in lexicographic order.
fn for_each_combination(m: usize, n: usize, mut visit: impl FnMut(&[usize])) {
    if n == 0 || n > m {
        return;
    }
    let mut combo: Vec<usize> = (0..n).collect();
    loop {
        visit(&combo);
        // Advance to the next combination.
        let mut i = n - 1;
        while combo[i] == i + m - n {
            if i == 0 {
                return;
            }
            i -= 1;
        }
        combo[i] += 1;
        for j in i + 1..n {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

/// Binomial coefficient C(m, n); the size of the monotone search space.
pub fn sequence_count(m: usize, n: usize) -> u64 {
    if n > m {
        return 0;
    }
    let n = n.min(m - n);
    let mut result = 1u64;
    for k in 0..n {
        result = result * (m - k) as u64 / (k + 1) as u64;
    }
    result
}

/// The default selection shape: n levels chosen from the candidate pool.
pub fn default_level_count() -> usize {
    DEFAULT_LEVEL_COUNT
}
