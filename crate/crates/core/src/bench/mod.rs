//! Dataset schemas and ingestion for the five-attribute benchmark, the
//! conciseness direct-measure intensity, and run orchestration.

mod run;

pub use run::{
    rate_response_set, run_evaluation, GenerationSpec, JudgeFactory, JudgeSpec, ManifestPaths,
    RelevanceSpec, RunCounters, RunManifest, RunOutput, RunReport, SchedulerSpec, TemplatePaths,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::JudgeError;
use crate::metrics::{AttributeRange, MetricsError};
use crate::rating::{ItemId, Rating, RatingError};
use crate::schedule::ScheduleError;
use crate::sim::SimError;

/// The five benchmark attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Anger,
    Happiness,
    Formality,
    Understandability,
    Conciseness,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Anger,
        Attribute::Happiness,
        Attribute::Formality,
        Attribute::Understandability,
        Attribute::Conciseness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Anger => "anger",
            Attribute::Happiness => "happiness",
            Attribute::Formality => "formality",
            Attribute::Understandability => "understandability",
            Attribute::Conciseness => "conciseness",
        }
    }

    /// Conciseness is measured by counting words, not by pairwise judging.
    pub fn uses_direct_measure(self) -> bool {
        matches!(self, Attribute::Conciseness)
    }
}

impl std::str::FromStr for Attribute {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "anger" => Ok(Attribute::Anger),
            "happiness" => Ok(Attribute::Happiness),
            "formality" => Ok(Attribute::Formality),
            "understandability" => Ok(Attribute::Understandability),
            "conciseness" => Ok(Attribute::Conciseness),
            other => Err(BenchError::UnknownAttribute(other.to_string())),
        }
    }
}

impl std::fmt::Display for Attribute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How the responses under evaluation were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Prompting with a degree description.
    Prompting,
    /// Ingested from an external generator (opaque parameter label).
    External,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Prompting => "prompting",
            Method::External => "external",
        })
    }
}

/// One benchmark query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub attribute: Attribute,
    pub text: String,
}

/// One generated response at a requested control value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub query_id: String,
    pub attribute: Attribute,
    pub control_value: u8,
    pub method: Method,
    /// Degree description, or an opaque label such as an external strength
    /// tag.
    pub parameter_label: String,
    pub text: String,
    pub model: String,
}

/// A response id with its estimated rating; the unit of ratings files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedResponse {
    pub id: String,
    pub query_id: String,
    pub attribute: Attribute,
    pub control_value: u8,
    pub rating: Rating,
}

/// Minimal (id, rating) pool entry for calibration and binning inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: ItemId,
    pub rating: Rating,
}

/// Ingestion result: validated records plus per-attribute counts.
#[derive(Debug, Clone)]
pub struct IngestReport<T> {
    pub records: Vec<T>,
    pub per_attribute: BTreeMap<Attribute, usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {source}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: record {id:?} has empty text")]
    EmptyText {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: response {id:?} has control value {control_value}, expected 0..=9")]
    ControlValueOutOfRange {
        path: PathBuf,
        line: usize,
        id: String,
        control_value: u8,
    },
    #[error("response {response_id:?} references unknown query {query_id:?}")]
    UnresolvedQuery {
        response_id: String,
        query_id: String,
    },
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("no range configured for attribute {0}")]
    MissingRange(String),
    #[error("manifest invalid: {0}")]
    ManifestInvalid(String),
    #[error("control value {0} has no responses")]
    MissingLevel(usize),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Template(#[from] crate::judge::TemplateError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Rating(#[from] RatingError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o: {0}")]
    PlainIo(#[from] std::io::Error),
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(
    path: &Path,
    mut validate: impl FnMut(&T, usize) -> Result<(), BenchError>,
) -> Result<(Vec<T>, Vec<String>), BenchError> {
    let file = File::open(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|source| BenchError::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        validate(&record, i + 1)?;
        records.push(record);
    }
    if records.is_empty() {
        warnings.push(format!("{}: no records", path.display()));
    }
    Ok((records, warnings))
}

/// Ingest a JSONL query file. Duplicate ids are rejected; per-attribute
/// counts are reported, and an empty file is a warning rather than an error.
pub fn ingest_queries(path: impl AsRef<Path>) -> Result<IngestReport<QueryRecord>, BenchError> {
    let path = path.as_ref();
    let mut seen: HashSet<String> = HashSet::new();
    let (records, warnings) = read_jsonl::<QueryRecord>(path, |record, line| {
        if !seen.insert(record.id.clone()) {
            return Err(BenchError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: record.id.clone(),
            });
        }
        if record.text.trim().is_empty() {
            return Err(BenchError::EmptyText {
                path: path.to_path_buf(),
                line,
                id: record.id.clone(),
            });
        }
        Ok(())
    })?;
    let mut per_attribute = BTreeMap::new();
    for record in &records {
        *per_attribute.entry(record.attribute).or_insert(0) += 1;
    }
    Ok(IngestReport {
        records,
        per_attribute,
        warnings,
    })
}

/// Ingest a JSONL response file; validates ids, control values, and text.
pub fn ingest_responses(
    path: impl AsRef<Path>,
) -> Result<IngestReport<ResponseRecord>, BenchError> {
    let path = path.as_ref();
    let mut seen: HashSet<String> = HashSet::new();
    let (records, warnings) = read_jsonl::<ResponseRecord>(path, |record, line| {
        if !seen.insert(record.id.clone()) {
            return Err(BenchError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: record.id.clone(),
            });
        }
        if record.control_value > 9 {
            return Err(BenchError::ControlValueOutOfRange {
                path: path.to_path_buf(),
                line,
                id: record.id.clone(),
                control_value: record.control_value,
            });
        }
        if record.text.trim().is_empty() {
            return Err(BenchError::EmptyText {
                path: path.to_path_buf(),
                line,
                id: record.id.clone(),
            });
        }
        Ok(())
    })?;
    let mut per_attribute = BTreeMap::new();
    for record in &records {
        *per_attribute.entry(record.attribute).or_insert(0) += 1;
    }
    Ok(IngestReport {
        records,
        per_attribute,
        warnings,
    })
}

/// Check that every response's query id resolves against the query set.
pub fn resolve_queries<'q>(
    responses: &[ResponseRecord],
    queries: &'q [QueryRecord],
) -> Result<HashMap<&'q str, &'q QueryRecord>, BenchError> {
    let by_id: HashMap<&str, &QueryRecord> =
        queries.iter().map(|q| (q.id.as_str(), q)).collect();
    for response in responses {
        if !by_id.contains_key(response.query_id.as_str()) {
            return Err(BenchError::UnresolvedQuery {
                response_id: response.id.clone(),
                query_id: response.query_id.clone(),
            });
        }
    }
    Ok(by_id)
}

/// Word count of a response: maximal runs of non-whitespace characters.
/// This is the direct intensity measure for the Conciseness attribute.
pub fn conciseness_intensity(response_text: &str) -> usize {
    response_text.split_whitespace().count()
}

/// Write records as JSONL, one per line.
pub fn write_jsonl<T: Serialize>(
    path: impl AsRef<Path>,
    records: &[T],
) -> Result<(), BenchError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a ratings file (JSONL of [`RatedResponse`]).
pub fn read_rated_responses(path: impl AsRef<Path>) -> Result<Vec<RatedResponse>, BenchError> {
    let path = path.as_ref();
    let (records, _) = read_jsonl::<RatedResponse>(path, |_, _| Ok(()))?;
    Ok(records)
}

/// Read an (id, rating) pool file; extra fields are tolerated, so both
/// [`RatedResponse`] files and bare pools parse.
pub fn read_pool(path: impl AsRef<Path>) -> Result<Vec<PoolEntry>, BenchError> {
    let path = path.as_ref();
    let (records, _) = read_jsonl::<PoolEntry>(path, |_, _| Ok(()))?;
    Ok(records)
}

/// Per-attribute range bounds, loaded from a JSON or TOML config file of
/// the form `{ "anger": {"r_min": 1000, "r_max": 2000}, ... }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeBounds {
    pub r_min: f64,
    pub r_max: f64,
}

pub type RangeConfig = BTreeMap<String, RangeBounds>;

pub fn load_range_config(path: impl AsRef<Path>) -> Result<RangeConfig, BenchError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config: RangeConfig = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&raw).map_err(|e| BenchError::ManifestInvalid(e.to_string()))?
    } else {
        serde_json::from_str(&raw).map_err(|source| BenchError::MalformedLine {
            path: path.to_path_buf(),
            line: 1,
            source,
        })?
    };
    Ok(config)
}

pub fn range_for(config: &RangeConfig, attribute: Attribute) -> Result<AttributeRange, BenchError> {
    let bounds = config
        .get(attribute.name())
        .ok_or_else(|| BenchError::MissingRange(attribute.name().to_string()))?;
    Ok(AttributeRange::new(
        attribute.name(),
        Rating(bounds.r_min),
        Rating(bounds.r_max),
    )?)
}

/// Derive an attribute range from a library's rating distribution at the
/// given percentiles (nearest-rank). Range values are always computed from
/// data at run time, never shipped as fixed numbers.
pub fn range_from_library(
    library: &crate::schedule::Library,
    attribute: Attribute,
    lo_percentile: f64,
    hi_percentile: f64,
) -> Result<AttributeRange, BenchError> {
    if library.size() < 2 {
        return Err(BenchError::ManifestInvalid(
            "library must have at least 2 members to derive a range".into(),
        ));
    }
    if !(0.0..=100.0).contains(&lo_percentile)
        || !(0.0..=100.0).contains(&hi_percentile)
        || lo_percentile >= hi_percentile
    {
        return Err(BenchError::ManifestInvalid(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got {lo_percentile} and {hi_percentile}"
        )));
    }
    let mut ratings: Vec<f64> = library.members().iter().map(|(_, r)| r.0).collect();
    ratings.sort_by(f64::total_cmp);
    let nearest_rank = |p: f64| -> f64 {
        let rank = (p / 100.0 * ratings.len() as f64).ceil().max(1.0) as usize;
        ratings[rank.min(ratings.len()) - 1]
    };
    Ok(AttributeRange::new(
        attribute.name(),
        Rating(nearest_rank(lo_percentile)),
        Rating(nearest_rank(hi_percentile)),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(dir: &tempfile::TempDir, name: &str, lines: &[&str]) -> PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn ingest_queries_counts_attributes() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "queries.jsonl",
            &[
                r#"{"id":"q1","attribute":"anger","text":"Why is the kitchen a mess?"}"#,
                r#"{"id":"q2","attribute":"anger","text":"Where is my refund?"}"#,
                r#"{"id":"q3","attribute":"conciseness","text":"Explain relativity."}"#,
            ],
        );
        let report = ingest_queries(&path).unwrap();
        assert_eq!(report.records.len(), 3);
        assert_eq!(report.per_attribute[&Attribute::Anger], 2);
        assert_eq!(report.per_attribute[&Attribute::Conciseness], 1);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn ingest_queries_rejects_duplicates_and_names_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "queries.jsonl",
            &[
                r#"{"id":"q1","attribute":"anger","text":"a"}"#,
                r#"{"id":"q1","attribute":"anger","text":"b"}"#,
            ],
        );
        match ingest_queries(&path) {
            Err(BenchError::DuplicateId { line, id, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(id, "q1");
            }
            other => panic!("expected duplicate-id error, got {other:?}"),
        }

        let path = write_lines(
            &dir,
            "bad.jsonl",
            &[
                r#"{"id":"q1","attribute":"anger","text":"a"}"#,
                "not json",
            ],
        );
        match ingest_queries(&path) {
            Err(BenchError::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_queries_rejects_unknown_attribute_as_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "queries.jsonl",
            &[r#"{"id":"q1","attribute":"sarcasm","text":"a"}"#],
        );
        assert!(matches!(
            ingest_queries(&path),
            Err(BenchError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn full_benchmark_scale_counts() {
        // 300 queries per attribute across the 5 attributes: 1,500 total.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queries.jsonl");
        let mut lines = Vec::new();
        for attribute in Attribute::ALL {
            for i in 0..300 {
                lines.push(format!(
                    r#"{{"id":"{attribute}-q{i}","attribute":"{attribute}","text":"query {i}"}}"#
                ));
            }
        }
        std::fs::write(&path, lines.join("\n")).unwrap();
        let report = ingest_queries(&path).unwrap();
        assert_eq!(report.records.len(), 1_500);
        for attribute in Attribute::ALL {
            assert_eq!(report.per_attribute[&attribute], 300);
        }
    }

    #[test]
    fn empty_file_warns_instead_of_failing() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(&dir, "queries.jsonl", &[]);
        let report = ingest_queries(&path).unwrap();
        assert!(report.records.is_empty());
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn ingest_responses_validates_control_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "responses.jsonl",
            &[
                r#"{"id":"r1","query_id":"q1","attribute":"anger","control_value":12,"method":"prompting","parameter_label":"very","text":"x","model":"m"}"#,
            ],
        );
        assert!(matches!(
            ingest_responses(&path),
            Err(BenchError::ControlValueOutOfRange {
                control_value: 12,
                ..
            })
        ));
    }

    #[test]
    fn resolve_queries_names_the_missing_one() {
        let queries = vec![QueryRecord {
            id: "q1".into(),
            attribute: Attribute::Anger,
            text: "a".into(),
        }];
        let responses = vec![ResponseRecord {
            id: "r1".into(),
            query_id: "q404".into(),
            attribute: Attribute::Anger,
            control_value: 0,
            method: Method::Prompting,
            parameter_label: "very".into(),
            text: "x".into(),
            model: "m".into(),
        }];
        assert!(matches!(
            resolve_queries(&responses, &queries),
            Err(BenchError::UnresolvedQuery { .. })
        ));
    }

    #[test]
    fn schema_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("responses.jsonl");
        let records = vec![
            ResponseRecord {
                id: "r1".into(),
                query_id: "q1".into(),
                attribute: Attribute::Formality,
                control_value: 3,
                method: Method::Prompting,
                parameter_label: "moderately".into(),
                text: "A formal reply.".into(),
                model: "test-model".into(),
            },
            ResponseRecord {
                id: "r2".into(),
                query_id: "q1".into(),
                attribute: Attribute::Formality,
                control_value: 9,
                method: Method::External,
                parameter_label: "strength=2.5".into(),
                text: "Most formal reply.".into(),
                model: "test-model".into(),
            },
        ];
        write_jsonl(&path, &records).unwrap();
        let report = ingest_responses(&path).unwrap();
        assert_eq!(report.records, records);
    }

    #[test]
    fn word_count_rule() {
        assert_eq!(conciseness_intensity(""), 0);
        assert_eq!(conciseness_intensity("one two  three"), 3);
        assert_eq!(conciseness_intensity("  padded   out \t tokens \n here "), 4);
        assert_eq!(conciseness_intensity("punctuation, attaches."), 2);
    }

    #[test]
    fn anger_table_fixture_word_count() {
        // Frozen after independent verification with `wc -w` and a Python
        // str.split() count (both 75).
        let bin0 = "I hold a deep belief in the natural flow of truth, as it always finds a way into the open, much like a gentle stream that carves its path through the landscape. In taking action, my intention was to nurture understanding without disruption, trusting that, with time, our paths would align in clarity and harmony. I welcome this moment for reflection and connection, serene in the knowledge that openness will guide us toward mutual tranquility.";
        assert_eq!(conciseness_intensity(bin0), 75);
    }

    #[test]
    fn range_derivation_uses_percentiles() {
        let library = crate::schedule::Library::from_ratings(
            (0..100)
                .map(|i| (format!("m{i:03}"), crate::rating::Rating(1000.0 + 10.0 * i as f64)))
                .collect(),
        );
        let range = range_from_library(&library, Attribute::Anger, 5.0, 95.0).unwrap();
        // Nearest-rank: 5th percentile of 100 sorted values is the 5th
        // (1040), the 95th is the 95th (1940).
        assert_eq!(range.r_min.0, 1040.0);
        assert_eq!(range.r_max.0, 1940.0);
        assert!(range_from_library(&library, Attribute::Anger, 95.0, 5.0).is_err());
    }

    #[test]
    fn range_config_round_trip_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ranges.json");
        std::fs::write(
            &path,
            r#"{"anger": {"r_min": 1000, "r_max": 2000}, "conciseness": {"r_min": -1000, "r_max": -100}}"#,
        )
        .unwrap();
        let config = load_range_config(&path).unwrap();
        let range = range_for(&config, Attribute::Anger).unwrap();
        assert_eq!(range.span(), 1000.0);
        assert!(matches!(
            range_for(&config, Attribute::Formality),
            Err(BenchError::MissingRange(_))
        ));

        let toml_path = dir.path().join("ranges.toml");
        std::fs::write(
            &toml_path,
            "[anger]\nr_min = 1000.0\nr_max = 2000.0\n",
        )
        .unwrap();
        let config = load_range_config(&toml_path).unwrap();
        assert!(range_for(&config, Attribute::Anger).is_ok());
    }
}
