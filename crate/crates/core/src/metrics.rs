//! Smooth-control metrics: Mean-MAE against linear rating targets, Mean-STD,
//! relevance, and the relevance-penalized overall metric.
//!
//! Mean-MAE is the *sum* over control values of the absolute deviation of the
//! per-value mean rating from the linear interpolation between the range
//! endpoints. A normalized per-level variant is exposed separately and never
//! silently substituted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rating::Rating;

/// Default number of discrete control values (degrees 0..=9).
pub const DEFAULT_LEVEL_COUNT: usize = 10;

/// Default weighting between Mean-MAE and Mean-STD in the overall metric.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Per-attribute target rating interval `[r_min, r_max]` defining ideal
/// control. Pre-defined configuration, never derived from the data under
/// evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRange {
    pub attribute: String,
    pub r_min: Rating,
    pub r_max: Rating,
}

impl AttributeRange {
    pub fn new(
        attribute: impl Into<String>,
        r_min: Rating,
        r_max: Rating,
    ) -> Result<Self, MetricsError> {
        let range = Self {
            attribute: attribute.into(),
            r_min,
            r_max,
        };
        range.validate()?;
        Ok(range)
    }

    /// Deserialized ranges must be validated before use.
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !self.r_min.is_finite() || !self.r_max.is_finite() || self.r_max.0 <= self.r_min.0 {
            return Err(MetricsError::InvalidRange {
                r_min: self.r_min.0,
                r_max: self.r_max.0,
            });
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.r_max.0 - self.r_min.0
    }
}

/// Ratings observed at one control value, with their mean and population
/// standard deviation. Mean and std are always recomputed from the ratings.
#[derive(Debug, Clone)]
pub struct ControlLevelStats {
    control_value: usize,
    ratings: Vec<Rating>,
    mean: Rating,
    std: f64,
}

impl ControlLevelStats {
    pub fn new(control_value: usize, ratings: Vec<Rating>) -> Result<Self, MetricsError> {
        if ratings.is_empty() {
            return Err(MetricsError::EmptyLevel { control_value });
        }
        if ratings.iter().any(|r| !r.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        let n = ratings.len() as f64;
        let mean = ratings.iter().map(|r| r.0).sum::<f64>() / n;
        let var = ratings.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            control_value,
            ratings,
            mean: Rating(mean),
            std: var.sqrt(),
        })
    }

    pub fn control_value(&self) -> usize {
        self.control_value
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn mean(&self) -> Rating {
        self.mean
    }

    /// Population (divide-by-N) standard deviation, so single-sample levels
    /// are well-defined as 0.
    pub fn std(&self) -> f64 {
        self.std
    }
}

/// The metric bundle for one (model, method, attribute) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_mae: f64,
    pub mean_std: f64,
    pub relevance: f64,
    pub overall: f64,
    pub alpha: f64,
    pub relevance_zero: bool,
}

impl MetricsReport {
    /// Compute the full report from per-level stats, the attribute range, and
    /// binary relevance scores.
    pub fn compute(
        stats: &[ControlLevelStats],
        range: &AttributeRange,
        relevance_scores: impl IntoIterator<Item = u8>,
        alpha: f64,
    ) -> Result<Self, MetricsError> {
        let mae = mean_mae(stats, range)?;
        let std = mean_std(stats)?;
        let relevance = relevance_score(relevance_scores)?;
        let overall = overall_metric(mae, std, range, relevance, alpha)?;
        Ok(Self {
            mean_mae: mae,
            mean_std: std,
            relevance,
            overall: overall.value,
            alpha,
            relevance_zero: overall.relevance_zero,
        })
    }
}

/// Overall metric value plus the flag marking the zero-relevance sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overall {
    pub value: f64,
    pub relevance_zero: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("attribute range must satisfy r_max > r_min, got [{r_min}, {r_max}]")]
    InvalidRange { r_min: f64, r_max: f64 },
    #[error("control value {control_value} has no ratings")]
    EmptyLevel { control_value: usize },
    #[error("no control-level stats supplied")]
    EmptyStats,
    #[error("level count must be at least 2, got {0}")]
    InvalidLevelCount(usize),
    #[error("control value {c} out of range for {n} levels")]
    ControlValueOutOfRange { c: usize, n: usize },
    #[error("stats must cover each control value 0..{n} exactly once; value {c} seen {seen} times")]
    LevelCoverage { n: usize, c: usize, seen: usize },
    #[error("relevance must lie in [0, 1], got {0}")]
    InvalidRelevance(f64),
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("relevance scores must be 0 or 1, got {0}")]
    InvalidScore(u8),
    #[error("no relevance scores supplied")]
    EmptyRelevance,
    #[error("ratings must be finite")]
    NonFinite,
}

/// Linear interpolation target for control value `c` of `n` levels:
/// `r*_c = r_min + c/(n-1) * (r_max - r_min)`.
pub fn target_rating(c: usize, n: usize, range: &AttributeRange) -> Result<Rating, MetricsError> {
    range.validate()?;
    if n < 2 {
        return Err(MetricsError::InvalidLevelCount(n));
    }
    if c > n - 1 {
        return Err(MetricsError::ControlValueOutOfRange { c, n });
    }
    let fraction = c as f64 / (n - 1) as f64;
    Ok(Rating(range.r_min.0 + fraction * range.span()))
}

/// Summed absolute deviation of per-level mean ratings from the linear
/// targets. `stats` must cover control values `0..n-1` exactly once.
pub fn mean_mae(stats: &[ControlLevelStats], range: &AttributeRange) -> Result<f64, MetricsError> {
    range.validate()?;
    let n = stats.len();
    if n < 2 {
        return Err(MetricsError::InvalidLevelCount(n));
    }
    let mut seen = vec![0usize; n];
    for s in stats {
        if s.control_value >= n {
            return Err(MetricsError::ControlValueOutOfRange {
                c: s.control_value,
                n,
            });
        }
        seen[s.control_value] += 1;
    }
    if let Some(c) = seen.iter().position(|&count| count != 1) {
        return Err(MetricsError::LevelCoverage {
            n,
            c,
            seen: seen[c],
        });
    }
    let mut total = 0.0;
    for s in stats {
        let target = target_rating(s.control_value, n, range)?;
        total += (s.mean().0 - target.0).abs();
    }
    Ok(total)
}

/// Per-level normalized variant of [`mean_mae`] (divided by the level
/// count); exposed for analysis only.
pub fn mean_mae_normalized(
    stats: &[ControlLevelStats],
    range: &AttributeRange,
) -> Result<f64, MetricsError> {
    Ok(mean_mae(stats, range)? / stats.len() as f64)
}

/// Average across control values of the per-value population standard
/// deviation.
pub fn mean_std(stats: &[ControlLevelStats]) -> Result<f64, MetricsError> {
    if stats.is_empty() {
        return Err(MetricsError::EmptyStats);
    }
    Ok(stats.iter().map(|s| s.std()).sum::<f64>() / stats.len() as f64)
}

/// Fraction of responses judged relevant: the arithmetic mean of binary
/// scores.
pub fn relevance_score(scores: impl IntoIterator<Item = u8>) -> Result<f64, MetricsError> {
    let mut total = 0u64;
    let mut count = 0u64;
    for score in scores {
        if score > 1 {
            return Err(MetricsError::InvalidScore(score));
        }
        total += u64::from(score);
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::EmptyRelevance);
    }
    Ok(total as f64 / count as f64)
}

/// Relevance-penalized overall metric (lower is better):
/// `2*(alpha*Mean-MAE + (1-alpha)*Mean-STD) / ((r_max - r_min) * relevance)`.
///
/// At `alpha = 0.5` this reduces to
/// `(Mean-MAE + Mean-STD) / ((r_max - r_min) * relevance)`.
/// Zero relevance yields a flagged `f64::MAX` sentinel so candidates remain
/// rankable.
pub fn overall_metric(
    mean_mae: f64,
    mean_std: f64,
    range: &AttributeRange,
    relevance: f64,
    alpha: f64,
) -> Result<Overall, MetricsError> {
    range.validate()?;
    if !mean_mae.is_finite() || !mean_std.is_finite() {
        return Err(MetricsError::NonFinite);
    }
    if !(0.0..=1.0).contains(&relevance) || relevance.is_nan() {
        return Err(MetricsError::InvalidRelevance(relevance));
    }
    if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
        return Err(MetricsError::InvalidAlpha(alpha));
    }
    if relevance == 0.0 {
        return Ok(Overall {
            value: f64::MAX,
            relevance_zero: true,
        });
    }
    let numerator = 2.0 * (alpha * mean_mae + (1.0 - alpha) * mean_std);
    Ok(Overall {
        value: numerator / (range.span() * relevance),
        relevance_zero: false,
    })
}
