//! Elo mathematics, batch Bradley-Terry fitting, and rating-scale utilities.
//!
//! Ratings live on the conventional Elo scale: a base-10 logistic with
//! divisor 400, so a 100-point gap maps to a preference probability of
//! about 0.64. All operations here are pure and deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Identifies a rated item (a generated response, a library sentence, ...).
pub type ItemId = String;

/// Logistic divisor of the Elo scale. Together with base 10 this is the only
/// scale on which a 100-point gap yields a preference probability of 0.64.
pub const ELO_DIVISOR: f64 = 400.0;

/// Conventional center of the Elo scale; used as the default anchor mean.
pub const DEFAULT_ANCHOR_MEAN: Rating = Rating(1500.0);

/// Convergence threshold for the batch fit, in rating points.
const FIT_TOLERANCE_POINTS: f64 = 1e-6;
const FIT_MAX_SWEEPS: usize = 10_000;

/// An Elo-scale scalar attached to a rated item. No floor or ceiling is
/// imposed; only finiteness is required by the operations below.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Rating(pub f64);

impl Rating {
    pub fn points(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl From<f64> for Rating {
    fn from(points: f64) -> Self {
        Rating(points)
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

// Ratings serialize as plain JSON numbers at 6-decimal precision.
impl Serialize for Rating {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64((self.0 * 1e6).round() / 1e6)
    }
}

impl<'de> Deserialize<'de> for Rating {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        f64::deserialize(deserializer).map(Rating)
    }
}

/// Result of one judged duel, from item A's perspective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "A")]
    AWins,
    #[serde(rename = "B")]
    BWins,
    #[serde(rename = "TIE")]
    Tie,
}

impl Outcome {
    /// Score earned by side A under this outcome (1, 0, or 0.5).
    pub fn score_a(self) -> f64 {
        match self {
            Outcome::AWins => 1.0,
            Outcome::BWins => 0.0,
            Outcome::Tie => 0.5,
        }
    }

    /// The same outcome with sides A and B exchanged.
    pub fn flipped(self) -> Self {
        match self {
            Outcome::AWins => Outcome::BWins,
            Outcome::BWins => Outcome::AWins,
            Outcome::Tie => Outcome::Tie,
        }
    }
}

/// One judged duel. Serializes to the JSONL wire format
/// `{"a": id, "b": id, "outcome": "A"|"B"|"TIE", "judge": str, "seq": int}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    #[serde(rename = "a")]
    pub item_a: ItemId,
    #[serde(rename = "b")]
    pub item_b: ItemId,
    pub outcome: Outcome,
    #[serde(rename = "judge")]
    pub judge_id: String,
    #[serde(rename = "seq")]
    pub sequence_no: u64,
}

impl ComparisonRecord {
    pub fn new(
        item_a: impl Into<ItemId>,
        item_b: impl Into<ItemId>,
        outcome: Outcome,
        judge_id: impl Into<String>,
        sequence_no: u64,
    ) -> Result<Self, RatingError> {
        let item_a = item_a.into();
        let item_b = item_b.into();
        if item_a == item_b {
            return Err(RatingError::SelfComparison(item_a));
        }
        Ok(Self {
            item_a,
            item_b,
            outcome,
            judge_id: judge_id.into(),
            sequence_no,
        })
    }
}

/// A contiguous rating interval `[origin + index*width, origin + (index+1)*width)`
/// and the items whose ratings fall inside it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingBin {
    pub bin_index: usize,
    pub width: f64,
    pub members: Vec<ItemId>,
    pub mean_rating: Rating,
}

#[derive(Debug, Error)]
pub enum RatingError {
    #[error("rating arguments must be finite")]
    NonFinite,
    #[error("update constant k must be positive and finite, got {0}")]
    InvalidK(f64),
    #[error("no comparison records supplied")]
    NoRecords,
    #[error("item compared against itself: {0:?}")]
    SelfComparison(ItemId),
    #[error("comparison graph is disconnected; components: {components:?}")]
    DisconnectedGraph { components: Vec<Vec<ItemId>> },
    #[error("bin width must be positive and finite, got {0}")]
    InvalidWidth(f64),
    #[error("no items to bin")]
    NoItems,
    #[error("rating {rating} lies below the bin origin {origin}")]
    BelowOrigin { rating: f64, origin: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed comparison record at line {line}: {source}")]
    MalformedRecord {
        line: usize,
        source: serde_json::Error,
    },
}

/// Probability that A is preferred over B: `1 / (1 + 10^((r_b - r_a)/400))`.
///
/// Satisfies `expected_score(a, b) + expected_score(b, a) = 1` and maps a
/// 100-point gap to ~0.64.
pub fn expected_score(r_a: Rating, r_b: Rating) -> Result<f64, RatingError> {
    if !r_a.is_finite() || !r_b.is_finite() {
        return Err(RatingError::NonFinite);
    }
    Ok(1.0 / (1.0 + 10f64.powf((r_b.0 - r_a.0) / ELO_DIVISOR)))
}

/// Sequential Elo update `r' = r + K(S - E)` applied to both sides.
///
/// The update is zero-sum by construction: a single delta is added to A and
/// subtracted from B.
pub fn elo_update(
    r_a: Rating,
    r_b: Rating,
    outcome: Outcome,
    k: f64,
) -> Result<(Rating, Rating), RatingError> {
    if k <= 0.0 || !k.is_finite() {
        return Err(RatingError::InvalidK(k));
    }
    let expected_a = expected_score(r_a, r_b)?;
    let delta = k * (outcome.score_a() - expected_a);
    Ok((Rating(r_a.0 + delta), Rating(r_b.0 - delta)))
}

/// Batch maximum-likelihood Bradley-Terry fit over a comparison log,
/// expressed on the Elo scale.
///
/// Uses minorization-maximization iterations; ties count as half a win for
/// each side. If any item has all wins or all losses, a half pseudo-win in
/// each direction is added to every observed pair so the likelihood has a
/// finite maximizer. The returned ratings are re-centered so their mean
/// equals `anchor_mean`.
///
/// The comparison graph must be connected; otherwise the error names the
/// disconnected components.
pub fn fit_bradley_terry(
    records: &[ComparisonRecord],
    anchor_mean: Rating,
) -> Result<HashMap<ItemId, Rating>, RatingError> {
    if records.is_empty() {
        return Err(RatingError::NoRecords);
    }
    if !anchor_mean.is_finite() {
        return Err(RatingError::NonFinite);
    }

    // Deterministic item indexing.
    let ids: BTreeSet<&ItemId> = records
        .iter()
        .flat_map(|r| [&r.item_a, &r.item_b])
        .collect();
    let ids: Vec<&ItemId> = ids.into_iter().collect();
    let index: HashMap<&ItemId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let n = ids.len();

    // Win weights: wins[i][j] = (possibly fractional) wins of i over j.
    let mut wins: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    let mut uf = UnionFind::new(n);
    for rec in records {
        if rec.item_a == rec.item_b {
            return Err(RatingError::SelfComparison(rec.item_a.clone()));
        }
        let a = index[&rec.item_a];
        let b = index[&rec.item_b];
        uf.union(a, b);
        match rec.outcome {
            Outcome::AWins => *wins[a].entry(b).or_insert(0.0) += 1.0,
            Outcome::BWins => *wins[b].entry(a).or_insert(0.0) += 1.0,
            Outcome::Tie => {
                *wins[a].entry(b).or_insert(0.0) += 0.5;
                *wins[b].entry(a).or_insert(0.0) += 0.5;
            }
        }
    }

    let components = uf.components();
    if components.len() > 1 {
        let components = components
            .into_iter()
            .map(|c| c.into_iter().map(|i| ids[i].clone()).collect())
            .collect();
        return Err(RatingError::DisconnectedGraph { components });
    }

    // Observed unordered pairs, and per-item win/loss mass.
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut win_mass = vec![0.0; n];
    let mut loss_mass = vec![0.0; n];
    for (i, row) in wins.iter().enumerate() {
        for (&j, &w) in row {
            pairs.insert((i.min(j), i.max(j)));
            win_mass[i] += w;
            loss_mass[j] += w;
        }
    }

    // Regularize only when a degenerate (all-win or all-loss) item exists, so
    // non-degenerate instances keep their exact maximum-likelihood gaps.
    let degenerate = (0..n).any(|i| win_mass[i] == 0.0 || loss_mass[i] == 0.0);
    if degenerate {
        for &(i, j) in &pairs {
            *wins[i].entry(j).or_insert(0.0) += 0.5;
            *wins[j].entry(i).or_insert(0.0) += 0.5;
        }
    }

    // Duel counts n_ij and total wins W_i for the MM update.
    let mut duels: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    let mut total_wins = vec![0.0; n];
    for (i, row) in wins.iter().enumerate() {
        for (&j, &w) in row {
            *duels[i].entry(j).or_insert(0.0) += w;
            *duels[j].entry(i).or_insert(0.0) += w;
            total_wins[i] += w;
        }
    }

    // MM iterations (Jacobi sweeps): pi_i <- W_i / sum_j n_ij/(pi_i + pi_j),
    // normalized to geometric mean 1 each sweep. Convergence is measured in
    // rating points.
    let mut strengths = vec![1.0f64; n];
    let mut prev_points: Vec<f64> = to_points(&strengths, anchor_mean.0);
    for _ in 0..FIT_MAX_SWEEPS {
        let mut next = vec![0.0f64; n];
        for i in 0..n {
            let denom: f64 = duels[i]
                .iter()
                .map(|(&j, &n_ij)| n_ij / (strengths[i] + strengths[j]))
                .sum();
            next[i] = total_wins[i] / denom;
        }
        let log_mean = next.iter().map(|s| s.ln()).sum::<f64>() / n as f64;
        let geo = log_mean.exp();
        for s in &mut next {
            *s /= geo;
        }
        strengths = next;

        let points = to_points(&strengths, anchor_mean.0);
        let max_change = points
            .iter()
            .zip(&prev_points)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        prev_points = points;
        if max_change < FIT_TOLERANCE_POINTS {
            break;
        }
    }

    Ok(ids
        .into_iter()
        .zip(prev_points)
        .map(|(id, pts)| (id.clone(), Rating(pts)))
        .collect())
}

/// Elo points for Bradley-Terry strengths with geometric mean 1: the mean of
/// the returned points equals `anchor`.
fn to_points(strengths: &[f64], anchor: f64) -> Vec<f64> {
    strengths
        .iter()
        .map(|s| ELO_DIVISOR * s.log10() + anchor)
        .collect()
}

/// Partition rated items into consecutive bins of the given width.
///
/// `origin` defaults to the minimum observed rating. Empty bins are omitted
/// and bins are returned in index order; each bin's mean is the arithmetic
/// mean of its members' ratings.
pub fn bin_by_rating(
    items: &[(ItemId, Rating)],
    width: f64,
    origin: Option<Rating>,
) -> Result<Vec<RatingBin>, RatingError> {
    if width <= 0.0 || !width.is_finite() {
        return Err(RatingError::InvalidWidth(width));
    }
    if items.is_empty() {
        return Err(RatingError::NoItems);
    }
    if items.iter().any(|(_, r)| !r.is_finite()) {
        return Err(RatingError::NonFinite);
    }

    let origin = match origin {
        Some(o) if !o.is_finite() => return Err(RatingError::NonFinite),
        Some(o) => o.0,
        None => items
            .iter()
            .map(|(_, r)| r.0)
            .fold(f64::INFINITY, f64::min),
    };

    let mut buckets: BTreeMap<usize, (Vec<ItemId>, f64)> = BTreeMap::new();
    for (id, rating) in items {
        if rating.0 < origin {
            return Err(RatingError::BelowOrigin {
                rating: rating.0,
                origin,
            });
        }
        let index = ((rating.0 - origin) / width).floor() as usize;
        let bucket = buckets.entry(index).or_default();
        bucket.0.push(id.clone());
        bucket.1 += rating.0;
    }

    Ok(buckets
        .into_iter()
        .map(|(bin_index, (members, sum))| {
            let mean_rating = Rating(sum / members.len() as f64);
            RatingBin {
                bin_index,
                width,
                members,
                mean_rating,
            }
        })
        .collect())
}

/// Append comparison records to a JSONL log, one record per line.
pub fn write_comparison_log<P: AsRef<Path>>(
    path: P,
    records: &[ComparisonRecord],
) -> Result<(), RatingError> {
    let mut out = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut out, rec).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a JSONL comparison log written by [`write_comparison_log`].
pub fn read_comparison_log<P: AsRef<Path>>(path: P) -> Result<Vec<ComparisonRecord>, RatingError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|source| RatingError::MalformedRecord { line: i + 1, source })?;
        records.push(rec);
    }
    Ok(records)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }

    fn components(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let root = self.find(i);
            by_root.entry(root).or_default().push(i);
        }
        by_root.into_values().collect()
    }
}
