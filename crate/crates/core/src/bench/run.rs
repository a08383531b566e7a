//! Run manifests and the evaluation pipeline:
//! generation (optional) -> intensity rating -> relevance judging -> metrics.
//!
//! Every random choice derives from the manifest's master seed, and all
//! remote verdicts ride the append-only cache, so an interrupted run
//! re-executed with the same manifest replays cached verdicts and converges
//! to the identical report. Conciseness runs measure word counts directly
//! and issue zero pairwise judge calls.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::judge::{
    ConstantRelevanceJudge, DuelSide, Generator, OracleMode, PairwiseJudge, PromptTemplateSet,
    RelevanceJudge, RemoteClient, RemoteEndpoint, RemoteGenerator, RemoteJudge, RemoteJudgeConfig,
    ScriptedGenerator, SyntheticOracle, SyntheticOracleConfig, VerdictCache,
};
use crate::metrics::{AttributeRange, ControlLevelStats, MetricsReport, DEFAULT_ALPHA};
use crate::rating::{
    elo_update, write_comparison_log, ComparisonRecord, ItemId, Rating, DEFAULT_ANCHOR_MEAN,
};
use crate::schedule::{
    build_library, derive_seed, rate_item, Library, Pairing, Pool, ScheduleConfig, Strategy,
    TextProvider, DEFAULT_LIBRARY_SIZE,
};

use super::{
    conciseness_intensity, ingest_queries, ingest_responses, read_pool, resolve_queries,
    write_jsonl, Attribute, BenchError, Method, QueryRecord, RangeBounds, RatedResponse,
    ResponseRecord,
};

fn default_true() -> bool {
    true
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_level_count() -> usize {
    crate::metrics::DEFAULT_LEVEL_COUNT
}

fn default_library_size() -> usize {
    DEFAULT_LIBRARY_SIZE
}

fn default_library_duels() -> usize {
    60
}

fn default_strategy() -> Strategy {
    Strategy::ClosestLib
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> u64 {
    250
}

fn default_in_flight() -> usize {
    8
}

fn default_gen_temperature() -> f64 {
    0.7
}

/// Pairwise judge selection for a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JudgeSpec {
    /// Synthetic oracle that always prefers the higher true rating.
    Deterministic { truth: PathBuf },
    /// Synthetic oracle consistent with the Elo probability of the truths.
    Probabilistic { truth: PathBuf },
    /// Probabilistic oracle with outcomes flipped at probability `flip`.
    Noisy { truth: PathBuf, flip: f64 },
    /// Remote chat-completion judge.
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key: Option<String>,
        #[serde(default)]
        temperature: f64,
        #[serde(default)]
        allow_tie: bool,
        #[serde(default = "default_true")]
        randomize_order: bool,
        #[serde(default = "default_retries")]
        transport_retries: u32,
        #[serde(default = "default_backoff")]
        backoff_base_ms: u64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

/// Relevance judge selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RelevanceSpec {
    /// Fixed score for every pair; `score: 1` is the always-relevant oracle.
    Constant { score: u8 },
    /// Reuse the remote judge endpoint.
    Remote,
}

impl Default for RelevanceSpec {
    fn default() -> Self {
        RelevanceSpec::Constant { score: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchedulerSpec {
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Comparisons per rated item.
    pub budget: usize,
    #[serde(default = "default_library_size")]
    pub library_size: usize,
    #[serde(default = "default_library_duels")]
    pub library_duels_per_member: usize,
    /// Empty means the default staged schedule.
    #[serde(default)]
    pub k_schedule: Vec<f64>,
    /// Load a frozen library instead of building one.
    #[serde(default)]
    pub library: Option<PathBuf>,
}

/// Response generation, when the manifest does not point at a response file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GenerationSpec {
    /// Offline generator backed by a JSONL script of
    /// `{"query", "description", "text"}` rows.
    Scripted {
        script: PathBuf,
        /// One degree description per control value, in intensity order.
        descriptors: Vec<String>,
    },
    Remote {
        descriptors: Vec<String>,
        #[serde(default = "default_gen_temperature")]
        temperature: f64,
    },
}

impl GenerationSpec {
    fn descriptors(&self) -> &[String] {
        match self {
            GenerationSpec::Scripted { descriptors, .. }
            | GenerationSpec::Remote { descriptors, .. } => descriptors,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplatePaths {
    pub pairwise: PathBuf,
    pub relevance: PathBuf,
    pub generation: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPaths {
    pub queries: PathBuf,
    #[serde(default)]
    pub responses: Option<PathBuf>,
    #[serde(default)]
    pub templates: Option<TemplatePaths>,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// Everything one evaluation run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub attribute: Attribute,
    pub model: String,
    pub method: Method,
    pub range: RangeBounds,
    pub judge: JudgeSpec,
    #[serde(default)]
    pub relevance: RelevanceSpec,
    pub scheduler: SchedulerSpec,
    #[serde(default)]
    pub generation: Option<GenerationSpec>,
    pub paths: ManifestPaths,
    pub master_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_level_count")]
    pub level_count: usize,
    /// Map higher control values to fewer words for Conciseness.
    #[serde(default = "default_true")]
    pub invert_conciseness: bool,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&raw).map_err(|e| BenchError::ManifestInvalid(e.to_string()))
        } else {
            serde_json::from_str(&raw).map_err(|e| BenchError::ManifestInvalid(e.to_string()))
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(BenchError::ManifestInvalid(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.level_count < 2 || self.level_count > 10 {
            return Err(BenchError::ManifestInvalid(format!(
                "level_count must lie in 2..=10, got {}",
                self.level_count
            )));
        }
        if self.paths.responses.is_none() && self.generation.is_none() {
            return Err(BenchError::ManifestInvalid(
                "either paths.responses or a generation section is required".into(),
            ));
        }
        if let Some(generation) = &self.generation {
            if generation.descriptors().len() != self.level_count {
                return Err(BenchError::ManifestInvalid(format!(
                    "generation needs exactly {} descriptors, got {}",
                    self.level_count,
                    generation.descriptors().len()
                )));
            }
        }
        let mut required: Vec<&Path> = vec![&self.paths.queries];
        if let Some(responses) = &self.paths.responses {
            required.push(responses);
        }
        if let Some(templates) = &self.paths.templates {
            required.extend([
                templates.pairwise.as_path(),
                templates.relevance.as_path(),
                templates.generation.as_path(),
            ]);
        }
        if let Some(GenerationSpec::Scripted { script, .. }) = &self.generation {
            required.push(script);
        }
        match &self.judge {
            JudgeSpec::Deterministic { truth }
            | JudgeSpec::Probabilistic { truth }
            | JudgeSpec::Noisy { truth, .. } => required.push(truth),
            JudgeSpec::Remote { .. } => {}
        }
        if let Some(library) = &self.scheduler.library {
            required.push(library);
        }
        for path in required {
            if !path.exists() {
                return Err(BenchError::ManifestInvalid(format!(
                    "referenced path does not exist: {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Builds judges and generators out of a [`JudgeSpec`], sharing one remote
/// client, template set, and verdict cache.
pub struct JudgeFactory {
    spec: JudgeSpec,
    templates: Option<Arc<PromptTemplateSet>>,
    cache: Arc<VerdictCache>,
    client: Option<Arc<RemoteClient>>,
}

impl JudgeFactory {
    pub fn new(
        spec: JudgeSpec,
        templates: Option<Arc<PromptTemplateSet>>,
        cache: Arc<VerdictCache>,
    ) -> Self {
        let client = match &spec {
            JudgeSpec::Remote {
                endpoint,
                model,
                api_key,
                transport_retries,
                backoff_base_ms,
                max_in_flight,
                ..
            } => {
                let mut remote = RemoteEndpoint::new(endpoint, model);
                remote.api_key = api_key.clone();
                remote.transport_retries = *transport_retries;
                remote.backoff_base_ms = *backoff_base_ms;
                remote.max_in_flight = *max_in_flight;
                Some(Arc::new(RemoteClient::new(remote)))
            }
            _ => None,
        };
        Self {
            spec,
            templates,
            cache,
            client,
        }
    }

    pub fn cache(&self) -> &Arc<VerdictCache> {
        &self.cache
    }

    pub fn pairwise(&self, seed: u64) -> Result<Box<dyn PairwiseJudge>, BenchError> {
        let oracle = |truth: &PathBuf, mode| -> Result<Box<dyn PairwiseJudge>, BenchError> {
            let pool = read_pool(truth)?;
            let oracle = SyntheticOracle::new(SyntheticOracleConfig {
                true_ratings: pool.into_iter().map(|p| (p.id, p.rating)).collect(),
                mode,
                rng_seed: seed,
            })?;
            Ok(Box::new(oracle))
        };
        match &self.spec {
            JudgeSpec::Deterministic { truth } => oracle(truth, OracleMode::Deterministic),
            JudgeSpec::Probabilistic { truth } => oracle(truth, OracleMode::Probabilistic),
            JudgeSpec::Noisy { truth, flip } => oracle(truth, OracleMode::Noisy(*flip)),
            JudgeSpec::Remote {
                temperature,
                allow_tie,
                randomize_order,
                ..
            } => {
                let client = self.client.clone().expect("client built for remote judge");
                let templates = self.templates.clone().ok_or_else(|| {
                    BenchError::ManifestInvalid("remote judging requires template paths".into())
                })?;
                Ok(Box::new(RemoteJudge::new(
                    client,
                    templates,
                    Arc::clone(&self.cache),
                    RemoteJudgeConfig {
                        temperature: *temperature,
                        randomize_order: *randomize_order,
                        allow_tie: *allow_tie,
                        rng_seed: seed,
                    },
                )))
            }
        }
    }

    pub fn relevance(
        &self,
        spec: &RelevanceSpec,
        seed: u64,
    ) -> Result<Box<dyn RelevanceJudge>, BenchError> {
        match spec {
            RelevanceSpec::Constant { score } => Ok(Box::new(ConstantRelevanceJudge::new(*score))),
            RelevanceSpec::Remote => {
                let client = self.client.clone().ok_or_else(|| {
                    BenchError::ManifestInvalid(
                        "remote relevance judging requires a remote judge endpoint".into(),
                    )
                })?;
                let templates = self.templates.clone().ok_or_else(|| {
                    BenchError::ManifestInvalid(
                        "remote relevance judging requires templates".into(),
                    )
                })?;
                Ok(Box::new(RemoteJudge::new(
                    client,
                    templates,
                    Arc::clone(&self.cache),
                    RemoteJudgeConfig {
                        temperature: 0.0,
                        randomize_order: false,
                        allow_tie: false,
                        rng_seed: seed,
                    },
                )))
            }
        }
    }

    pub fn generator(
        &self,
        spec: &GenerationSpec,
    ) -> Result<Box<dyn Generator>, BenchError> {
        match spec {
            GenerationSpec::Scripted {
                script,
                descriptors,
            } => {
                let mut scripted = ScriptedGenerator::new().with_candidates(descriptors.clone());
                let (entries, _) = super::read_jsonl::<ScriptEntry>(script, |_, _| Ok(()))?;
                for entry in entries {
                    scripted.script(entry.query, entry.description, entry.text);
                }
                Ok(Box::new(scripted))
            }
            GenerationSpec::Remote {
                descriptors,
                temperature,
            } => {
                let client = self.client.clone().ok_or_else(|| {
                    BenchError::ManifestInvalid(
                        "remote generation requires a remote judge endpoint".into(),
                    )
                })?;
                let templates = self.templates.clone().ok_or_else(|| {
                    BenchError::ManifestInvalid("remote generation requires template paths".into())
                })?;
                Ok(Box::new(
                    RemoteGenerator::new(client, templates, Arc::clone(&self.cache), *temperature)
                        .with_candidates(descriptors.clone()),
                ))
            }
        }
    }
}

/// Judge-call accounting for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    /// Pairwise verdicts answered by a judge (cache misses).
    pub pairwise_judged: usize,
    pub pairwise_cached: usize,
    pub relevance_judged: usize,
    pub relevance_cached: usize,
    pub generated: usize,
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub rated: Vec<RatedResponse>,
    pub counters: RunCounters,
    pub report_path: PathBuf,
    pub ratings_path: PathBuf,
    pub log_path: PathBuf,
}

/// Wrapper serialized to `report.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub attribute: Attribute,
    pub model: String,
    pub method: Method,
    pub report: MetricsReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScriptEntry {
    query: String,
    description: String,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelevanceRecord {
    id: String,
    score: u8,
}

// A judge wrapper that counts cached vs fresh verdicts.
struct CountingPairwise {
    inner: Box<dyn PairwiseJudge>,
    judged: usize,
    cached: usize,
}

impl PairwiseJudge for CountingPairwise {
    fn judge_pair(
        &mut self,
        a: DuelSide<'_>,
        b: DuelSide<'_>,
        attribute: &str,
    ) -> Result<crate::judge::JudgeVerdict, crate::judge::JudgeError> {
        let verdict = self.inner.judge_pair(a, b, attribute)?;
        if verdict.cached {
            self.cached += 1;
        } else {
            self.judged += 1;
        }
        Ok(verdict)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

struct ResponseTexts<'a>(HashMap<&'a str, &'a str>);

impl TextProvider for ResponseTexts<'_> {
    fn text_of(&self, id: &str) -> &str {
        self.0.get(id).copied().unwrap_or("")
    }
}

/// Execute a full evaluation run and persist its artifacts.
pub fn run_evaluation(manifest: &RunManifest) -> Result<RunOutput, BenchError> {
    manifest.validate()?;
    let range = AttributeRange::new(
        manifest.attribute.name(),
        Rating(manifest.range.r_min),
        Rating(manifest.range.r_max),
    )?;

    let queries_report = ingest_queries(&manifest.paths.queries)?;
    let queries: Vec<QueryRecord> = queries_report
        .records
        .into_iter()
        .filter(|q| q.attribute == manifest.attribute)
        .collect();

    let cache = Arc::new(match &manifest.paths.cache {
        Some(path) => VerdictCache::open(path)?,
        None => VerdictCache::in_memory(),
    });
    let templates: Option<Arc<PromptTemplateSet>> = match &manifest.paths.templates {
        Some(paths) => Some(Arc::new(PromptTemplateSet::load(
            &paths.pairwise,
            &paths.relevance,
            &paths.generation,
        )?)),
        None => None,
    };
    let factory = JudgeFactory::new(manifest.judge.clone(), templates, cache);

    let mut counters = RunCounters::default();

    // Stage 1: obtain responses (ingest or generate).
    let responses: Vec<ResponseRecord> = match &manifest.paths.responses {
        Some(path) => {
            let report = ingest_responses(path)?;
            let responses: Vec<ResponseRecord> = report
                .records
                .into_iter()
                .filter(|r| r.attribute == manifest.attribute)
                .collect();
            resolve_queries(&responses, &queries)?;
            responses
        }
        None => {
            let spec = manifest.generation.as_ref().expect("validated above");
            let descriptors = spec.descriptors().to_vec();
            let mut generator = factory.generator(spec)?;
            let mut generated = Vec::new();
            for query in &queries {
                for (level, descriptor) in descriptors.iter().enumerate() {
                    let text = generator.generate(&query.text, descriptor)?;
                    counters.generated += 1;
                    generated.push(ResponseRecord {
                        id: format!("{}-cv{}", query.id, level),
                        query_id: query.id.clone(),
                        attribute: manifest.attribute,
                        control_value: level as u8,
                        method: manifest.method,
                        parameter_label: descriptor.clone(),
                        text,
                        model: manifest.model.clone(),
                    });
                }
            }
            generated
        }
    };
    if responses.is_empty() {
        return Err(BenchError::ManifestInvalid(format!(
            "no responses for attribute {}",
            manifest.attribute
        )));
    }

    // Stage 2: intensity ratings.
    let mut log: Vec<ComparisonRecord> = Vec::new();
    let ratings: HashMap<String, f64> = if manifest.attribute.uses_direct_measure() {
        responses
            .iter()
            .map(|r| {
                let count = conciseness_intensity(&r.text) as f64;
                let intensity = if manifest.invert_conciseness {
                    -count
                } else {
                    count
                };
                (r.id.clone(), intensity)
            })
            .collect()
    } else {
        let mut judge = CountingPairwise {
            inner: factory.pairwise(derive_seed(manifest.master_seed, "pairwise-judge"))?,
            judged: 0,
            cached: 0,
        };
        let rated = rate_response_set(
            &responses,
            &mut judge,
            &manifest.scheduler,
            manifest.attribute,
            manifest.master_seed,
            &mut log,
        )?;
        counters.pairwise_judged = judge.judged;
        counters.pairwise_cached = judge.cached;
        rated
    };

    // Stage 3: relevance judging.
    let query_texts: HashMap<&str, &str> = queries
        .iter()
        .map(|q| (q.id.as_str(), q.text.as_str()))
        .collect();
    let mut relevance_judge = factory.relevance(
        &manifest.relevance,
        derive_seed(manifest.master_seed, "relevance-judge"),
    )?;
    let mut relevance_scores: Vec<u8> = Vec::with_capacity(responses.len());
    let mut relevance_records: Vec<RelevanceRecord> = Vec::with_capacity(responses.len());
    for response in &responses {
        let query_text = query_texts
            .get(response.query_id.as_str())
            .copied()
            .unwrap_or(response.query_id.as_str());
        let verdict = relevance_judge.judge_relevance(query_text, &response.text)?;
        if verdict.cached {
            counters.relevance_cached += 1;
        } else {
            counters.relevance_judged += 1;
        }
        relevance_scores.push(verdict.score);
        relevance_records.push(RelevanceRecord {
            id: response.id.clone(),
            score: verdict.score,
        });
    }

    // Stage 4: metrics.
    let mut stats = Vec::with_capacity(manifest.level_count);
    for level in 0..manifest.level_count {
        let level_ratings: Vec<Rating> = responses
            .iter()
            .filter(|r| usize::from(r.control_value) == level)
            .map(|r| Rating(ratings[&r.id]))
            .collect();
        if level_ratings.is_empty() {
            return Err(BenchError::MissingLevel(level));
        }
        stats.push(ControlLevelStats::new(level, level_ratings)?);
    }
    let report = MetricsReport::compute(
        &stats,
        &range,
        relevance_scores.iter().copied(),
        manifest.alpha,
    )?;

    // Stage 5: artifacts.
    std::fs::create_dir_all(&manifest.paths.out_dir)?;
    let rated: Vec<RatedResponse> = responses
        .iter()
        .map(|r| RatedResponse {
            id: r.id.clone(),
            query_id: r.query_id.clone(),
            attribute: r.attribute,
            control_value: r.control_value,
            rating: Rating(ratings[&r.id]),
        })
        .collect();
    let report_path = manifest.paths.out_dir.join("report.json");
    let ratings_path = manifest.paths.out_dir.join("ratings.jsonl");
    let log_path = manifest.paths.out_dir.join("comparisons.jsonl");
    let relevance_path = manifest.paths.out_dir.join("relevance.jsonl");

    let run_report = RunReport {
        attribute: manifest.attribute,
        model: manifest.model.clone(),
        method: manifest.method,
        report: report.clone(),
    };
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&run_report).map_err(std::io::Error::other)? + "\n",
    )?;
    write_jsonl(&ratings_path, &rated)?;
    write_comparison_log(&log_path, &log)?;
    write_jsonl(&relevance_path, &relevance_records)?;

    Ok(RunOutput {
        report,
        rated,
        counters,
        report_path,
        ratings_path,
        log_path,
    })
}

/// Rate a response set under a scheduler spec: library strategies build (or
/// load) a frozen library and rate the rest against it; no-library
/// strategies run budgeted rounds of live duels where both sides update.
pub fn rate_response_set(
    responses: &[ResponseRecord],
    judge: &mut dyn PairwiseJudge,
    scheduler: &SchedulerSpec,
    attribute: Attribute,
    master_seed: u64,
    log: &mut Vec<ComparisonRecord>,
) -> Result<HashMap<String, f64>, BenchError> {
    let mut schedule_config = ScheduleConfig::new(
        scheduler.strategy,
        scheduler.budget,
        derive_seed(master_seed, "rate"),
    );
    if !scheduler.k_schedule.is_empty() {
        schedule_config.k_schedule = scheduler.k_schedule.clone();
    }
    schedule_config.attribute = attribute.name().to_string();

    let texts = ResponseTexts(
        responses
            .iter()
            .map(|r| (r.id.as_str(), r.text.as_str()))
            .collect(),
    );
    let anchor = DEFAULT_ANCHOR_MEAN;
    let mut ratings: HashMap<String, f64> = HashMap::with_capacity(responses.len());

    if scheduler.strategy.uses_library() {
        let library = match &scheduler.library {
            Some(path) => Library::load(path).map_err(BenchError::PlainIo)?,
            None => {
                if responses.len() < 3 {
                    return Err(BenchError::ManifestInvalid(
                        "library strategies need at least 3 responses".into(),
                    ));
                }
                let mut ids: Vec<ItemId> = responses.iter().map(|r| r.id.clone()).collect();
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, "library-sample"));
                ids.shuffle(&mut rng);
                let member_count = scheduler.library_size.min(responses.len() - 1).max(2);
                let members: Vec<ItemId> = ids[..member_count].to_vec();
                build_library(
                    &members,
                    judge,
                    member_count * scheduler.library_duels_per_member,
                    anchor,
                    derive_seed(master_seed, "library-build"),
                    attribute.name(),
                    &texts,
                    log,
                )?
            }
        };
        for (id, rating) in library.members() {
            ratings.insert(id.clone(), rating.0);
        }
        for response in responses {
            if ratings.contains_key(&response.id) {
                continue;
            }
            let estimate = rate_item(
                &response.id,
                Pool::Library(&library),
                judge,
                &schedule_config,
                anchor,
                &texts,
                log,
            )?;
            ratings.insert(response.id.clone(), estimate.current.0);
        }
    } else {
        // Budgeted rounds over live estimates.
        let ids: Vec<&str> = responses.iter().map(|r| r.id.as_str()).collect();
        let mut estimates: Vec<f64> = vec![anchor.0; ids.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(schedule_config.rng_seed);
        let mut order: Vec<usize> = (0..ids.len()).collect();
        for round in 0..scheduler.budget {
            let k = schedule_config.k_for(round);
            order.shuffle(&mut rng);
            for &i in &order {
                let j = match scheduler.strategy.pairing() {
                    Pairing::Closest => {
                        let mut best = usize::MAX;
                        let mut best_delta = f64::INFINITY;
                        for (candidate, &estimate) in estimates.iter().enumerate() {
                            if candidate == i {
                                continue;
                            }
                            let delta = (estimate - estimates[i]).abs();
                            if delta < best_delta
                                || (delta == best_delta
                                    && best != usize::MAX
                                    && ids[candidate] < ids[best])
                            {
                                best_delta = delta;
                                best = candidate;
                            }
                        }
                        best
                    }
                    Pairing::Random => {
                        let mut j = rng.random_range(0..ids.len() - 1);
                        if j >= i {
                            j += 1;
                        }
                        j
                    }
                };
                let verdict = judge.judge_pair(
                    DuelSide::new(ids[i], texts.text_of(ids[i])),
                    DuelSide::new(ids[j], texts.text_of(ids[j])),
                    &schedule_config.attribute,
                )?;
                let (new_i, new_j) = elo_update(
                    Rating(estimates[i]),
                    Rating(estimates[j]),
                    verdict.outcome,
                    k,
                )?;
                estimates[i] = new_i.0;
                estimates[j] = new_j.0;
                log.push(ComparisonRecord {
                    item_a: ids[i].to_string(),
                    item_b: ids[j].to_string(),
                    outcome: verdict.outcome,
                    judge_id: judge.name().to_string(),
                    sequence_no: log.len() as u64,
                });
            }
        }
        for (i, id) in ids.iter().enumerate() {
            ratings.insert((*id).to_string(), estimates[i]);
        }
    }
    if ids_missing(&ratings, responses) {
        return Err(BenchError::ManifestInvalid(
            "rating stage left responses unrated".into(),
        ));
    }
    Ok(ratings)
}

fn ids_missing(ratings: &HashMap<String, f64>, responses: &[ResponseRecord]) -> bool {
    let rated: HashSet<&str> = ratings.keys().map(String::as_str).collect();
    responses.iter().any(|r| !rated.contains(r.id.as_str()))
}
