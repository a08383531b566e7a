//! Rating and evaluation toolkit for smoothly controllable text generation.
//!
//! The crate turns pairwise preference judgments into Elo-scale intensity
//! ratings and scores how well a generation method tracks a requested
//! intensity level. The pieces:
//!
//! - [`rating`]: Elo math, batch Bradley-Terry fitting, rating bins.
//! - [`schedule`]: opponent selection and comparison budgets for the four
//!   rating strategies (library / no library, random / closest match).
//! - [`judge`]: pluggable pairwise and relevance judges — synthetic oracles,
//!   replay, and a remote chat-completion client with caching.
//! - [`metrics`]: Mean-MAE against linear targets, Mean-STD, relevance, and
//!   the relevance-penalized overall metric.
//! - [`select`]: brute-force selection of intensity-descriptor sequences.
//! - [`sim`]: seeded synthetic experiments (strategy convergence, judge
//!   calibration).
//! - [`bench`]: dataset schemas, ingestion, and run orchestration.

pub mod bench;
pub mod judge;
pub mod metrics;
pub mod rating;
pub mod schedule;
pub mod select;
pub mod sim;
