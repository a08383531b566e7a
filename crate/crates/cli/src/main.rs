//! smoothctl: build rating libraries, rate responses, compute smooth-control
//! metrics, select descriptor sequences, and run synthetic studies.
//!
//! Exit code 0 on success; failures print one machine-readable JSON error
//! record to stderr and exit nonzero.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use smoothctl_core::bench::{
    self, ingest_queries, ingest_responses, load_range_config, range_for, read_pool,
    read_rated_responses, resolve_queries, write_jsonl, Attribute, BenchError, JudgeFactory,
    JudgeSpec, RunManifest, SchedulerSpec, TemplatePaths,
};
use smoothctl_core::judge::{
    OracleMode, PromptTemplateSet, SyntheticOracle, SyntheticOracleConfig, VerdictCache,
};
use smoothctl_core::metrics::{ControlLevelStats, MetricsReport};
use smoothctl_core::rating::{bin_by_rating, write_comparison_log, Rating, DEFAULT_ANCHOR_MEAN};
use smoothctl_core::schedule::{build_library, derive_seed, Strategy};
use smoothctl_core::select::{select_best_sequence, CandidateParameter};
use smoothctl_core::sim::{
    run_calibration, run_convergence, write_calibration_csv, write_convergence_csv,
    write_json_bundle, ConvergenceExperimentConfig,
};

#[derive(Parser)]
#[command(name = "smoothctl", version, about = "Smooth-control rating and evaluation toolkit")]
struct Cli {
    /// Config file (JSON or TOML) providing judge, template, and cache
    /// settings for commands that talk to a judge.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a frozen rating library from a response sample.
    BuildLibrary {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        attribute: Attribute,
        /// Total pairwise duels to spend on the build.
        #[arg(long)]
        duels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rate responses against a frozen library or by live duels.
    Rate {
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, default_value = "closest-lib")]
        strategy: String,
        /// Comparisons per rated item.
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute Mean-MAE, Mean-STD, relevance, and the overall metric from a
    /// ratings file.
    Metrics {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        range_config: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Optional JSONL of {"id", "score"} relevance verdicts; defaults to
        /// all-relevant.
        #[arg(long)]
        relevance: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Brute-force the best descriptor subsequence from a candidate file.
    SelectParams {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long)]
        range_config: PathBuf,
        #[arg(long)]
        attribute: Attribute,
        #[arg(long, default_value = "")]
        model: String,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the four-strategy convergence experiment from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Sample rating-difference buckets and compare a judge against the
    /// theoretical Elo curve.
    CalibrateJudge {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        granularity: f64,
        #[arg(long)]
        pairs_per_bucket: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Partition rated items into fixed-width rating bins.
    Bin {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        width: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive a per-attribute range config entry from a library's rating
    /// percentiles (merging into an existing config file).
    DeriveRanges {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        attribute: Attribute,
        #[arg(long, default_value_t = 5.0)]
        lo_percentile: f64,
        #[arg(long, default_value_t = 95.0)]
        hi_percentile: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a full evaluation run from a manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Judge/template/cache settings shared by judge-driven subcommands.
#[derive(Debug, Default, Deserialize)]
struct CliConfig {
    judge: Option<JudgeSpec>,
    templates: Option<TemplatePaths>,
    cache: Option<PathBuf>,
}

impl CliConfig {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let raw = std::fs::read_to_string(path).map_err(|e| CliError {
            kind: "config",
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        let config = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&raw).map_err(|e| CliError {
                kind: "config",
                message: e.to_string(),
            })?
        } else {
            serde_json::from_str(&raw).map_err(|e| CliError {
                kind: "config",
                message: e.to_string(),
            })?
        };
        Ok(config)
    }

    fn factory(&self) -> Result<JudgeFactory, CliError> {
        let spec = self.judge.clone().ok_or(CliError {
            kind: "config",
            message: "this command needs a judge; provide one in --config".into(),
        })?;
        let templates = match &self.templates {
            Some(paths) => Some(Arc::new(
                PromptTemplateSet::load(&paths.pairwise, &paths.relevance, &paths.generation)
                    .map_err(|e| CliError {
                        kind: "template",
                        message: e.to_string(),
                    })?,
            )),
            None => None,
        };
        let cache = Arc::new(match &self.cache {
            Some(path) => VerdictCache::open(path).map_err(|e| CliError {
                kind: "cache",
                message: e.to_string(),
            })?,
            None => VerdictCache::in_memory(),
        });
        Ok(JudgeFactory::new(spec, templates, cache))
    }
}

struct CliError {
    kind: &'static str,
    message: String,
}

macro_rules! from_error {
    ($type:ty, $kind:literal) => {
        impl From<$type> for CliError {
            fn from(err: $type) -> Self {
                CliError {
                    kind: $kind,
                    message: err.to_string(),
                }
            }
        }
    };
}

from_error!(BenchError, "bench");
from_error!(smoothctl_core::rating::RatingError, "rating");
from_error!(smoothctl_core::schedule::ScheduleError, "schedule");
from_error!(smoothctl_core::metrics::MetricsError, "metrics");
from_error!(smoothctl_core::select::SelectError, "select");
from_error!(smoothctl_core::sim::SimError, "sim");
from_error!(smoothctl_core::judge::JudgeError, "judge");
from_error!(std::io::Error, "io");

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = serde_json::json!({
                "error": err.kind,
                "message": err.message,
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let config = CliConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::BuildLibrary {
            queries,
            responses,
            attribute,
            duels,
            seed,
            out,
        } => build_library_cmd(&config, &queries, &responses, attribute, duels, seed, &out),
        Command::Rate {
            library,
            responses,
            strategy,
            budget,
            seed,
            out,
        } => rate_cmd(&config, library.as_deref(), &responses, &strategy, budget, seed, &out),
        Command::Metrics {
            ratings,
            range_config,
            alpha,
            relevance,
            out,
        } => metrics_cmd(&ratings, &range_config, alpha, relevance.as_deref(), &out),
        Command::SelectParams {
            candidates,
            n,
            range_config,
            attribute,
            model,
            alpha,
            out,
        } => select_params_cmd(&candidates, n, &range_config, attribute, &model, alpha, &out),
        Command::Simulate { config, out_csv } => simulate_cmd(&config, &out_csv),
        Command::CalibrateJudge {
            pool,
            granularity,
            pairs_per_bucket,
            seed,
            out_csv,
        } => calibrate_cmd(&config, &pool, granularity, pairs_per_bucket, seed, &out_csv),
        Command::Bin { ratings, width, out } => bin_cmd(&ratings, width, &out),
        Command::DeriveRanges {
            library,
            attribute,
            lo_percentile,
            hi_percentile,
            out,
        } => derive_ranges_cmd(&library, attribute, lo_percentile, hi_percentile, &out),
        Command::Run { manifest } => run_cmd(&manifest),
    }
}

#[allow(clippy::too_many_arguments)]
fn build_library_cmd(
    config: &CliConfig,
    queries: &Path,
    responses: &Path,
    attribute: Attribute,
    duels: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let queries = ingest_queries(queries)?;
    let responses_report = ingest_responses(responses)?;
    let members: Vec<_> = responses_report
        .records
        .into_iter()
        .filter(|r| r.attribute == attribute)
        .collect();
    resolve_queries(&members, &queries.records)?;

    let factory = config.factory()?;
    let mut judge = factory.pairwise(derive_seed(seed, "pairwise-judge"))?;
    let texts: HashMap<String, String> = members
        .iter()
        .map(|r| (r.id.clone(), r.text.clone()))
        .collect();
    let ids: Vec<String> = members.iter().map(|r| r.id.clone()).collect();
    let mut log = Vec::new();
    let library = build_library(
        &ids,
        judge.as_mut(),
        duels,
        DEFAULT_ANCHOR_MEAN,
        seed,
        attribute.name(),
        &texts,
        &mut log,
    )?;
    library.save(out)?;
    write_comparison_log(log_path_for(out), &log)?;
    println!(
        "{}",
        serde_json::json!({
            "library_size": library.size(),
            "duels": log.len(),
            "out": out,
        })
    );
    Ok(())
}

fn log_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".log.jsonl");
    out.with_file_name(name)
}

fn rate_cmd(
    config: &CliConfig,
    library: Option<&Path>,
    responses: &Path,
    strategy: &str,
    budget: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let strategy: Strategy = strategy.parse()?;
    let report = ingest_responses(responses)?;
    let responses = report.records;
    if responses.is_empty() {
        return Err(CliError {
            kind: "cli",
            message: "no responses to rate".into(),
        });
    }
    let attribute = responses[0].attribute;
    if responses.iter().any(|r| r.attribute != attribute) {
        return Err(CliError {
            kind: "cli",
            message: "responses must share a single attribute".into(),
        });
    }
    if strategy.uses_library() && library.is_none() {
        return Err(CliError {
            kind: "cli",
            message: format!("strategy {strategy} needs --library"),
        });
    }

    let factory = config.factory()?;
    let mut judge = factory.pairwise(derive_seed(seed, "pairwise-judge"))?;
    let scheduler = SchedulerSpec {
        strategy,
        budget,
        library_size: 0,
        library_duels_per_member: 0,
        k_schedule: vec![],
        library: library.map(Path::to_path_buf),
    };
    let mut log = Vec::new();
    let ratings = bench::rate_response_set(
        &responses,
        judge.as_mut(),
        &scheduler,
        attribute,
        seed,
        &mut log,
    )?;

    let rated: Vec<bench::RatedResponse> = responses
        .iter()
        .map(|r| bench::RatedResponse {
            id: r.id.clone(),
            query_id: r.query_id.clone(),
            attribute: r.attribute,
            control_value: r.control_value,
            rating: Rating(ratings[&r.id]),
        })
        .collect();
    write_jsonl(out, &rated)?;
    write_comparison_log(log_path_for(out), &log)?;
    println!(
        "{}",
        serde_json::json!({
            "rated": rated.len(),
            "duels": log.len(),
            "out": out,
        })
    );
    Ok(())
}

fn metrics_cmd(
    ratings: &Path,
    range_config: &Path,
    alpha: f64,
    relevance: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let rated = read_rated_responses(ratings)?;
    if rated.is_empty() {
        return Err(CliError {
            kind: "cli",
            message: "ratings file is empty".into(),
        });
    }
    let attribute = rated[0].attribute;
    if rated.iter().any(|r| r.attribute != attribute) {
        return Err(CliError {
            kind: "cli",
            message: "ratings must share a single attribute".into(),
        });
    }
    let ranges = load_range_config(range_config)?;
    let range = range_for(&ranges, attribute)?;

    let level_count = rated
        .iter()
        .map(|r| usize::from(r.control_value))
        .max()
        .unwrap()
        + 1;
    let mut stats = Vec::with_capacity(level_count);
    for level in 0..level_count {
        let level_ratings: Vec<Rating> = rated
            .iter()
            .filter(|r| usize::from(r.control_value) == level)
            .map(|r| r.rating)
            .collect();
        if level_ratings.is_empty() {
            return Err(CliError {
                kind: "cli",
                message: format!("control value {level} has no ratings"),
            });
        }
        stats.push(ControlLevelStats::new(level, level_ratings)?);
    }

    #[derive(Deserialize)]
    struct RelevanceLine {
        id: String,
        score: u8,
    }
    let scores: Vec<u8> = match relevance {
        Some(path) => {
            let raw = std::fs::read_to_string(path)?;
            let by_id: HashMap<String, u8> = raw
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    serde_json::from_str::<RelevanceLine>(l)
                        .map(|r| (r.id, r.score))
                        .map_err(|e| CliError {
                            kind: "cli",
                            message: format!("bad relevance line: {e}"),
                        })
                })
                .collect::<Result<_, _>>()?;
            rated
                .iter()
                .map(|r| by_id.get(&r.id).copied().unwrap_or(1))
                .collect()
        }
        None => vec![1; rated.len()],
    };

    let report = MetricsReport::compute(&stats, &range, scores, alpha)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError {
        kind: "io",
        message: e.to_string(),
    })?;
    std::fs::write(out, json.clone() + "\n")?;
    println!("{json}");
    Ok(())
}

fn select_params_cmd(
    candidates: &Path,
    n: usize,
    range_config: &Path,
    attribute: Attribute,
    model: &str,
    alpha: f64,
    out: &Path,
) -> Result<(), CliError> {
    let raw = std::fs::read_to_string(candidates)?;
    let mut parsed: Vec<CandidateParameter> = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        parsed.push(serde_json::from_str(line).map_err(|e| CliError {
            kind: "cli",
            message: format!("{}:{}: {e}", candidates.display(), i + 1),
        })?);
    }
    let ranges = load_range_config(range_config)?;
    let range = range_for(&ranges, attribute)?;
    let best = select_best_sequence(&parsed, n, &range, alpha)?;

    let chosen_labels: Vec<&str> = best
        .chosen
        .iter()
        .map(|&i| parsed[i].label.as_str())
        .collect();
    let output = serde_json::json!({
        "attribute": attribute.name(),
        "model": model,
        "chosen_labels": chosen_labels,
        "overall": best.metric,
    });
    std::fs::write(out, output.to_string() + "\n")?;
    println!("{output}");
    Ok(())
}

fn simulate_cmd(config_path: &Path, out_csv: &Path) -> Result<(), CliError> {
    let raw = std::fs::read_to_string(config_path)?;
    let config: ConvergenceExperimentConfig =
        if config_path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&raw).map_err(|e| CliError {
                kind: "config",
                message: e.to_string(),
            })?
        } else {
            serde_json::from_str(&raw).map_err(|e| CliError {
                kind: "config",
                message: e.to_string(),
            })?
        };
    let curves = run_convergence(&config)?;
    write_convergence_csv(out_csv, &curves)?;
    write_json_bundle(out_csv.with_extension("json"), &config, &curves)?;
    println!(
        "{}",
        serde_json::json!({
            "strategies": curves.len(),
            "budgets": config.budgets.len(),
            "replicates": config.replicates,
            "out_csv": out_csv,
        })
    );
    Ok(())
}

fn calibrate_cmd(
    config: &CliConfig,
    pool_path: &Path,
    granularity: f64,
    pairs_per_bucket: usize,
    seed: u64,
    out_csv: &Path,
) -> Result<(), CliError> {
    let pool_entries = read_pool(pool_path)?;
    let pool: Vec<(String, Rating)> = pool_entries
        .into_iter()
        .map(|p| (p.id, p.rating))
        .collect();

    // Default judge: the probabilistic oracle over the pool's own ratings.
    let mut judge: Box<dyn smoothctl_core::judge::PairwiseJudge> = if config.judge.is_some() {
        config.factory()?.pairwise(derive_seed(seed, "calibration-judge"))?
    } else {
        Box::new(SyntheticOracle::new(SyntheticOracleConfig {
            true_ratings: pool.iter().cloned().collect(),
            mode: OracleMode::Probabilistic,
            rng_seed: derive_seed(seed, "calibration-judge"),
        })?)
    };

    let curves = run_calibration(judge.as_mut(), &pool, granularity, pairs_per_bucket, seed)?;
    write_calibration_csv(out_csv, &curves)?;
    write_json_bundle(
        out_csv.with_extension("json"),
        &serde_json::json!({
            "pool": pool_path,
            "granularity": granularity,
            "pairs_per_bucket": pairs_per_bucket,
            "seed": seed,
        }),
        &curves,
    )?;
    println!(
        "{}",
        serde_json::json!({ "buckets": curves.len(), "out_csv": out_csv })
    );
    Ok(())
}

fn bin_cmd(ratings: &Path, width: f64, out: &Path) -> Result<(), CliError> {
    let entries = read_pool(ratings)?;
    let items: Vec<(String, Rating)> = entries.into_iter().map(|p| (p.id, p.rating)).collect();
    let bins = bin_by_rating(&items, width, None)?;
    let json = serde_json::to_string_pretty(&bins).map_err(|e| CliError {
        kind: "io",
        message: e.to_string(),
    })?;
    std::fs::write(out, json + "\n")?;
    println!(
        "{}",
        serde_json::json!({ "bins": bins.len(), "items": items.len(), "out": out })
    );
    Ok(())
}

fn derive_ranges_cmd(
    library: &Path,
    attribute: Attribute,
    lo_percentile: f64,
    hi_percentile: f64,
    out: &Path,
) -> Result<(), CliError> {
    let library = smoothctl_core::schedule::Library::load(library)?;
    let range =
        bench::range_from_library(&library, attribute, lo_percentile, hi_percentile)?;
    let mut config = if out.exists() {
        load_range_config(out)?
    } else {
        bench::RangeConfig::new()
    };
    config.insert(
        attribute.name().to_string(),
        bench::RangeBounds {
            r_min: range.r_min.0,
            r_max: range.r_max.0,
        },
    );
    let json = serde_json::to_string_pretty(&config).map_err(|e| CliError {
        kind: "io",
        message: e.to_string(),
    })?;
    std::fs::write(out, json + "\n")?;
    println!(
        "{}",
        serde_json::json!({
            "attribute": attribute.name(),
            "r_min": range.r_min.0,
            "r_max": range.r_max.0,
            "out": out,
        })
    );
    Ok(())
}

fn run_cmd(manifest_path: &Path) -> Result<(), CliError> {
    let manifest = RunManifest::load(manifest_path)?;
    let output = bench::run_evaluation(&manifest)?;
    println!(
        "{}",
        serde_json::json!({
            "report": output.report,
            "counters": output.counters,
            "out_dir": manifest.paths.out_dir,
        })
    );
    Ok(())
}
