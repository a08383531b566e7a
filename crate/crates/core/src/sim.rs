//! Desk-scale synthetic experiments: the four-strategy convergence study and
//! the judge-calibration curve study.
//!
//! Both are driven by seeded synthetic oracles and are fully deterministic
//! under a master seed. Replicates and strategies run in parallel; every
//! (strategy, replicate, budget) job derives its own random stream from the
//! master seed, so parallel and serial execution agree exactly.
//!
//! Fairness rule: the library member ids drawn for a replicate are excluded
//! from error statistics under *every* strategy, including the no-library
//! ones, so the four curves are computed over the same item set.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::{
    DuelSide, JudgeError, OracleMode, PairwiseJudge, SyntheticOracle, SyntheticOracleConfig,
};
use crate::rating::{elo_update, expected_score, ItemId, Outcome, Rating, RatingError};
use crate::schedule::{
    build_library, derive_seed, rate_item, NoTexts, Pairing, Pool, ScheduleConfig, ScheduleError,
    Strategy, DEFAULT_LIBRARY_SIZE,
};

/// Configuration of the strategy-convergence experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceExperimentConfig {
    pub n_items: usize,
    /// True ratings are drawn uniformly from [rating_lo, rating_hi].
    pub rating_lo: f64,
    pub rating_hi: f64,
    pub library_size: usize,
    /// Comparisons-per-item grid; strictly increasing.
    pub budgets: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub replicates: usize,
    pub rng_seed: u64,
    /// K schedule shared by all strategies.
    #[serde(default = "convergence_k_schedule")]
    pub k_schedule: Vec<f64>,
    /// Duels spent per library member during the library build; the build
    /// is deliberately generous since it amortizes over all new items.
    #[serde(default = "default_library_duels_per_member")]
    pub library_duels_per_member: usize,
    #[serde(default = "default_oracle_mode")]
    pub oracle_mode: OracleMode,
}

fn default_library_duels_per_member() -> usize {
    100
}

fn default_oracle_mode() -> OracleMode {
    OracleMode::Probabilistic
}

/// Robbins-Monro step sizes for the synthetic re-rating study: K_i = 1100/i,
/// scaled so the first steps cover the prior rating span and the tail decays
/// at the stochastic-approximation rate. Shared by all strategies in a run.
pub fn convergence_k_schedule() -> Vec<f64> {
    (1..=60).map(|i| 1100.0 / i as f64).collect()
}

impl Default for ConvergenceExperimentConfig {
    fn default() -> Self {
        Self {
            n_items: 1000,
            rating_lo: 800.0,
            rating_hi: 2200.0,
            library_size: DEFAULT_LIBRARY_SIZE,
            budgets: (1..=10).map(|i| i * 3).collect(),
            strategies: Strategy::ALL.to_vec(),
            replicates: 10,
            rng_seed: 0,
            k_schedule: convergence_k_schedule(),
            library_duels_per_member: default_library_duels_per_member(),
            oracle_mode: OracleMode::Probabilistic,
        }
    }
}

impl ConvergenceExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_items < 2 {
            return Err(SimError::TooFewItems(self.n_items));
        }
        if self.rating_lo >= self.rating_hi
            || !self.rating_lo.is_finite()
            || !self.rating_hi.is_finite()
        {
            return Err(SimError::BadRatingRange {
                lo: self.rating_lo,
                hi: self.rating_hi,
            });
        }
        if self.budgets.is_empty() {
            return Err(SimError::EmptyBudgets);
        }
        if self.budgets.contains(&0) {
            return Err(SimError::ZeroBudget);
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::BudgetsNotIncreasing);
        }
        if self.strategies.is_empty() {
            return Err(SimError::EmptyStrategies);
        }
        if self.replicates == 0 {
            return Err(SimError::ZeroReplicates);
        }
        let needs_library = self.strategies.iter().any(|s| s.uses_library());
        if needs_library && self.library_size >= self.n_items {
            return Err(SimError::LibraryTooLarge {
                library_size: self.library_size,
                n_items: self.n_items,
            });
        }
        if needs_library && self.library_size < 2 {
            return Err(SimError::LibraryTooSmall(self.library_size));
        }
        Ok(())
    }
}

/// One (budget, error) point; both error kinds are reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: usize,
    /// Mean |estimate - truth| in rating points, averaged over replicates.
    pub mae: f64,
    /// Fraction of misordered item pairs, averaged over replicates.
    pub inversion: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub strategy: Strategy,
    pub points: Vec<CurvePoint>,
    pub replicates: usize,
    /// Items contributing to the error statistics (library ids excluded).
    pub eligible_items: usize,
}

/// One rating-difference bucket of the calibration study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub bucket: usize,
    pub empirical_win_fraction: f64,
    pub theoretical_probability: f64,
    pub sample_count: usize,
    /// Set when fewer pairs than requested could be sampled.
    pub sparse: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("rating range [{lo}, {hi}] is invalid")]
    BadRatingRange { lo: f64, hi: f64 },
    #[error("budget grid must be non-empty")]
    EmptyBudgets,
    #[error("budgets must be at least 1")]
    ZeroBudget,
    #[error("budgets must be strictly increasing")]
    BudgetsNotIncreasing,
    #[error("strategy list must be non-empty")]
    EmptyStrategies,
    #[error("replicates must be at least 1")]
    ZeroReplicates,
    #[error("library size {library_size} must be smaller than n_items {n_items}")]
    LibraryTooLarge {
        library_size: usize,
        n_items: usize,
    },
    #[error("library needs at least 2 members, got {0}")]
    LibraryTooSmall(usize),
    #[error("pool must span at least 3 rating-difference buckets, got {0}")]
    PoolTooNarrow(usize),
    #[error("granularity must be positive and finite, got {0}")]
    BadGranularity(f64),
    #[error("pairs_per_bucket must be at least 1")]
    ZeroPairs,
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Rating(#[from] RatingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Run the convergence experiment: every strategy re-rates the items at
/// every budget, and errors are averaged over replicates.
pub fn run_convergence(
    config: &ConvergenceExperimentConfig,
) -> Result<Vec<ConvergenceCurve>, SimError> {
    config.validate()?;

    let jobs: Vec<(usize, usize)> = (0..config.strategies.len())
        .flat_map(|s| (0..config.replicates).map(move |r| (s, r)))
        .collect();

    type ReplicateErrors = Vec<(f64, f64)>;
    let results: Vec<Result<(usize, ReplicateErrors), SimError>> = jobs
        .par_iter()
        .map(|&(strategy_index, replicate)| {
            let strategy = config.strategies[strategy_index];
            run_one_replicate(config, strategy, replicate)
                .map(|errors| (strategy_index, errors))
        })
        .collect();

    let mut sums: Vec<Vec<(f64, f64)>> =
        vec![vec![(0.0, 0.0); config.budgets.len()]; config.strategies.len()];
    for result in results {
        let (strategy_index, errors) = result?;
        for (i, (mae, inversion)) in errors.into_iter().enumerate() {
            sums[strategy_index][i].0 += mae;
            sums[strategy_index][i].1 += inversion;
        }
    }

    let eligible = if config.strategies.iter().any(|s| s.uses_library()) {
        config.n_items - config.library_size
    } else {
        config.n_items - config.library_size.min(config.n_items)
    };
    Ok(config
        .strategies
        .iter()
        .zip(sums)
        .map(|(&strategy, budget_sums)| ConvergenceCurve {
            strategy,
            points: config
                .budgets
                .iter()
                .zip(budget_sums)
                .map(|(&budget, (mae_sum, inv_sum))| CurvePoint {
                    budget,
                    mae: mae_sum / config.replicates as f64,
                    inversion: inv_sum / config.replicates as f64,
                })
                .collect(),
            replicates: config.replicates,
            eligible_items: eligible,
        })
        .collect())
}

/// Errors (mae, inversion) per budget for one (strategy, replicate) job.
fn run_one_replicate(
    config: &ConvergenceExperimentConfig,
    strategy: Strategy,
    replicate: usize,
) -> Result<Vec<(f64, f64)>, SimError> {
    let n = config.n_items;
    let ids: Vec<ItemId> = (0..n).map(|i| format!("item{i:05}")).collect();

    // Environment stream: shared across strategies within a replicate so
    // every curve sees the same truths and the same library sample.
    let mut env_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.rng_seed,
        &format!("env:{replicate}"),
    ));
    let truths: Vec<f64> = (0..n)
        .map(|_| env_rng.random_range(config.rating_lo..=config.rating_hi))
        .collect();
    let mut sample: Vec<usize> = (0..n).collect();
    sample.shuffle(&mut env_rng);
    let library_members: Vec<usize> = sample[..config.library_size.min(n)].to_vec();
    let mut is_library = vec![false; n];
    for &i in &library_members {
        is_library[i] = true;
    }

    let true_ratings: HashMap<ItemId, Rating> = ids
        .iter()
        .zip(&truths)
        .map(|(id, &t)| (id.clone(), Rating(t)))
        .collect();
    let oracle_config = |seed_tag: &str| SyntheticOracleConfig {
        true_ratings: true_ratings.clone(),
        mode: config.oracle_mode,
        rng_seed: derive_seed(config.rng_seed, seed_tag),
    };

    let anchor = crate::rating::DEFAULT_ANCHOR_MEAN;
    let library = if strategy.uses_library() {
        let member_ids: Vec<ItemId> = library_members.iter().map(|&i| ids[i].clone()).collect();
        let mut judge = SyntheticOracle::new(oracle_config(&format!("library-judge:{replicate}")))?;
        let mut log = Vec::new();
        Some(build_library(
            &member_ids,
            &mut judge,
            config.library_size * config.library_duels_per_member,
            anchor,
            derive_seed(config.rng_seed, &format!("library-build:{replicate}")),
            "",
            &NoTexts,
            &mut log,
        )?)
    } else {
        None
    };

    let mut errors = Vec::with_capacity(config.budgets.len());
    for &budget in &config.budgets {
        let tag = format!("{}:{replicate}:{budget}", strategy.label());
        let mut judge = SyntheticOracle::new(oracle_config(&format!("judge:{tag}")))?;
        let schedule_seed = derive_seed(config.rng_seed, &format!("schedule:{tag}"));

        let estimates: Vec<f64> = if let Some(library) = &library {
            let mut cfg = ScheduleConfig::new(strategy, budget, schedule_seed);
            cfg.k_schedule = config.k_schedule.clone();
            let mut estimates = truths.iter().map(|_| anchor.0).collect::<Vec<_>>();
            let mut log = Vec::new();
            for i in 0..n {
                if is_library[i] {
                    continue;
                }
                let estimate = rate_item(
                    &ids[i],
                    Pool::Library(library),
                    &mut judge,
                    &cfg,
                    anchor,
                    &NoTexts,
                    &mut log,
                )?;
                estimates[i] = estimate.current.0;
            }
            estimates
        } else {
            run_no_library_rounds(
                &ids,
                strategy.pairing(),
                budget,
                &config.k_schedule,
                anchor.0,
                schedule_seed,
                &mut judge,
            )?
        };

        let eligible: Vec<usize> = (0..n).filter(|&i| !is_library[i]).collect();
        let mae = eligible
            .iter()
            .map(|&i| (estimates[i] - truths[i]).abs())
            .sum::<f64>()
            / eligible.len() as f64;
        let inversion = inversion_fraction(
            &eligible.iter().map(|&i| truths[i]).collect::<Vec<_>>(),
            &eligible.iter().map(|&i| estimates[i]).collect::<Vec<_>>(),
        );
        errors.push((mae, inversion));
    }
    Ok(errors)
}

/// No-library rating: `budget` rounds in which every item schedules one
/// duel against the live pool; both sides update after each duel.
fn run_no_library_rounds(
    ids: &[ItemId],
    pairing: Pairing,
    budget: usize,
    k_schedule: &[f64],
    initial: f64,
    seed: u64,
    judge: &mut SyntheticOracle,
) -> Result<Vec<f64>, SimError> {
    let n = ids.len();
    let mut estimates = vec![initial; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();

    for round in 0..budget {
        let k = k_schedule[round.min(k_schedule.len() - 1)];
        order.shuffle(&mut rng);
        for &i in &order {
            let j = match pairing {
                Pairing::Closest => {
                    let mut best = usize::MAX;
                    let mut best_delta = f64::INFINITY;
                    for (candidate, &estimate) in estimates.iter().enumerate() {
                        if candidate == i {
                            continue;
                        }
                        let delta = (estimate - estimates[i]).abs();
                        // Tie-break to lowest index == lowest id (ids are
                        // zero-padded and index-ordered).
                        if delta < best_delta {
                            best_delta = delta;
                            best = candidate;
                        }
                    }
                    best
                }
                Pairing::Random => {
                    let mut j = rng.random_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    j
                }
            };
            let verdict = judge.judge_pair(
                DuelSide::new(&ids[i], ""),
                DuelSide::new(&ids[j], ""),
                "",
            )?;
            let (new_i, new_j) = elo_update(
                Rating(estimates[i]),
                Rating(estimates[j]),
                verdict.outcome,
                k,
            )?;
            estimates[i] = new_i.0;
            estimates[j] = new_j.0;
        }
    }
    Ok(estimates)
}

/// Fraction of item pairs whose estimated order contradicts the true order.
fn inversion_fraction(truths: &[f64], estimates: &[f64]) -> f64 {
    let m = truths.len();
    if m < 2 {
        return 0.0;
    }
    // Sort by truth, then count inversions in the estimate sequence.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| truths[a].total_cmp(&truths[b]));
    let sequence: Vec<f64> = order.iter().map(|&i| estimates[i]).collect();
    let inversions = count_inversions(&sequence);
    let total_pairs = m * (m - 1) / 2;
    inversions as f64 / total_pairs as f64
}

fn count_inversions(values: &[f64]) -> u64 {
    fn merge_count(values: &mut Vec<f64>) -> u64 {
        let len = values.len();
        if len <= 1 {
            return 0;
        }
        let mut right = values.split_off(len / 2);
        let mut count = merge_count(values) + merge_count(&mut right);
        let left = std::mem::take(values);
        let (mut i, mut j) = (0, 0);
        let mut merged = Vec::with_capacity(left.len() + right.len());
        while i < left.len() && j < right.len() {
            if left[i] <= right[j] {
                merged.push(left[i]);
                i += 1;
            } else {
                count += (left.len() - i) as u64;
                merged.push(right[j]);
                j += 1;
            }
        }
        merged.extend_from_slice(&left[i..]);
        merged.extend_from_slice(&right[j..]);
        *values = merged;
        count
    }
    let mut buffer = values.to_vec();
    merge_count(&mut buffer)
}

/// Sample pairs at each rating-difference bucket, query the judge, and
/// compare the higher-rated side's empirical win fraction with the
/// theoretical Elo curve at the bucket midpoint.
pub fn run_calibration(
    judge: &mut dyn PairwiseJudge,
    pool: &[(ItemId, Rating)],
    granularity: f64,
    pairs_per_bucket: usize,
    rng_seed: u64,
) -> Result<Vec<CalibrationCurve>, SimError> {
    if granularity <= 0.0 || !granularity.is_finite() {
        return Err(SimError::BadGranularity(granularity));
    }
    if pairs_per_bucket == 0 {
        return Err(SimError::ZeroPairs);
    }
    let mut sorted: Vec<(&ItemId, f64)> = pool.iter().map(|(id, r)| (id, r.0)).collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let span = match (sorted.first(), sorted.last()) {
        (Some(lo), Some(hi)) => hi.1 - lo.1,
        _ => 0.0,
    };
    let bucket_count = (span / granularity).floor() as usize + 1;
    if sorted.len() < 2 || bucket_count < 3 {
        return Err(SimError::PoolTooNarrow(bucket_count));
    }

    let ratings: Vec<f64> = sorted.iter().map(|(_, r)| *r).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut curves = Vec::with_capacity(bucket_count);
    for bucket in 0..bucket_count {
        let diff_lo = bucket as f64 * granularity;
        let diff_hi = diff_lo + granularity;
        let mut wins = 0.0f64;
        let mut samples = 0usize;
        let mut attempts = 0usize;
        let attempt_cap = pairs_per_bucket.saturating_mul(50);
        while samples < pairs_per_bucket && attempts < attempt_cap {
            attempts += 1;
            let low_index = rng.random_range(0..sorted.len());
            let low_rating = ratings[low_index];
            // Opponents whose rating sits in [low + diff_lo, low + diff_hi).
            let from = ratings.partition_point(|&r| r < low_rating + diff_lo);
            let to = ratings.partition_point(|&r| r < low_rating + diff_hi);
            if from >= to {
                continue;
            }
            let high_index = rng.random_range(from..to);
            if high_index == low_index {
                continue;
            }
            let (high_id, low_id) = (sorted[high_index].0, sorted[low_index].0);
            let verdict = judge.judge_pair(
                DuelSide::new(high_id, ""),
                DuelSide::new(low_id, ""),
                "",
            )?;
            wins += match verdict.outcome {
                Outcome::AWins => 1.0,
                Outcome::BWins => 0.0,
                Outcome::Tie => 0.5,
            };
            samples += 1;
        }
        let midpoint = diff_lo + granularity / 2.0;
        let theoretical = expected_score(Rating(midpoint), Rating(0.0))?;
        curves.push(CalibrationCurve {
            bucket,
            empirical_win_fraction: if samples > 0 {
                wins / samples as f64
            } else {
                f64::NAN
            },
            theoretical_probability: theoretical,
            sample_count: samples,
            sparse: samples < pairs_per_bucket,
        });
    }
    Ok(curves)
}

/// Write convergence curves as CSV: `strategy,budget,mae,inversion,replicates`.
pub fn write_convergence_csv(
    path: impl AsRef<Path>,
    curves: &[ConvergenceCurve],
) -> Result<(), SimError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "strategy,budget,mae,inversion,replicates")?;
    for curve in curves {
        for point in &curve.points {
            writeln!(
                out,
                "{},{},{},{},{}",
                curve.strategy, point.budget, point.mae, point.inversion, curve.replicates
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Write calibration curves as CSV: `bucket,empirical,theoretical,n`.
pub fn write_calibration_csv(
    path: impl AsRef<Path>,
    curves: &[CalibrationCurve],
) -> Result<(), SimError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "bucket,empirical,theoretical,n")?;
    for curve in curves {
        writeln!(
            out,
            "{},{},{},{}",
            curve.bucket,
            curve.empirical_win_fraction,
            curve.theoretical_probability,
            curve.sample_count
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Write a JSON provenance bundle holding the full config and the curves.
pub fn write_json_bundle<C: Serialize, D: Serialize>(
    path: impl AsRef<Path>,
    config: &C,
    curves: &D,
) -> Result<(), SimError> {
    let bundle = serde_json::json!({ "config": config, "curves": curves });
    let json = serde_json::to_string_pretty(&bundle).map_err(std::io::Error::other)?;
    std::fs::write(path, json)?;
    Ok(())
}
