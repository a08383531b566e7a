//! Append-only verdict cache keyed by content hash.
//!
//! Entries persist as JSONL lines of
//! `{"kind": "pair"|"relevance"|"gen", "hash": str, ...}`. The first entry
//! stored for a hash wins; later puts with the same hash are ignored, so a
//! replayed verdict is byte-identical to the original. Reads take a shared
//! lock; writes are serialized.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, LineWriter, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::rating::Outcome;

use super::JudgeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CacheEntry {
    #[serde(rename = "pair")]
    Pair {
        hash: String,
        verdict: Outcome,
        raw_reply: String,
    },
    #[serde(rename = "relevance")]
    Relevance {
        hash: String,
        verdict: u8,
        raw_reply: String,
    },
    #[serde(rename = "gen")]
    Generation {
        hash: String,
        text: String,
        raw_reply: String,
    },
}

impl CacheEntry {
    fn hash(&self) -> &str {
        match self {
            CacheEntry::Pair { hash, .. }
            | CacheEntry::Relevance { hash, .. }
            | CacheEntry::Generation { hash, .. } => hash,
        }
    }
}

/// Shared verdict cache; optionally backed by an append-only JSONL file.
#[derive(Debug)]
pub struct VerdictCache {
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<LineWriter<File>>>,
}

impl VerdictCache {
    /// Purely in-memory cache (tests, synthetic runs).
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Open a file-backed cache, loading any existing entries first.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, JudgeError> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line)
                    .map_err(|source| JudgeError::CacheFormat { line: i + 1, source })?;
                entries.entry(entry.hash().to_string()).or_insert(entry);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(LineWriter::new(file))),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, hash: &str) -> Option<CacheEntry> {
        self.entries.read().unwrap().get(hash).cloned()
    }

    pub fn get_pair(&self, hash: &str) -> Option<(Outcome, String)> {
        match self.get(hash) {
            Some(CacheEntry::Pair {
                verdict, raw_reply, ..
            }) => Some((verdict, raw_reply)),
            _ => None,
        }
    }

    pub fn get_relevance(&self, hash: &str) -> Option<(u8, String)> {
        match self.get(hash) {
            Some(CacheEntry::Relevance {
                verdict, raw_reply, ..
            }) => Some((verdict, raw_reply)),
            _ => None,
        }
    }

    pub fn get_generation(&self, hash: &str) -> Option<(String, String)> {
        match self.get(hash) {
            Some(CacheEntry::Generation {
                text, raw_reply, ..
            }) => Some((text, raw_reply)),
            _ => None,
        }
    }

    pub fn put(&self, entry: CacheEntry) -> Result<(), JudgeError> {
        {
            let mut entries = self.entries.write().unwrap();
            if entries.contains_key(entry.hash()) {
                return Ok(());
            }
            entries.insert(entry.hash().to_string(), entry.clone());
        }
        let mut writer = self.writer.lock().unwrap();
        if let Some(writer) = writer.as_mut() {
            let line = serde_json::to_string(&entry).map_err(std::io::Error::other)?;
            writer.write_all(line.as_bytes())?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
        Ok(())
    }

    pub fn put_pair(
        &self,
        hash: impl Into<String>,
        verdict: Outcome,
        raw_reply: impl Into<String>,
    ) -> Result<(), JudgeError> {
        self.put(CacheEntry::Pair {
            hash: hash.into(),
            verdict,
            raw_reply: raw_reply.into(),
        })
    }

    pub fn put_relevance(
        &self,
        hash: impl Into<String>,
        verdict: u8,
        raw_reply: impl Into<String>,
    ) -> Result<(), JudgeError> {
        self.put(CacheEntry::Relevance {
            hash: hash.into(),
            verdict,
            raw_reply: raw_reply.into(),
        })
    }

    pub fn put_generation(
        &self,
        hash: impl Into<String>,
        text: impl Into<String>,
        raw_reply: impl Into<String>,
    ) -> Result<(), JudgeError> {
        self.put(CacheEntry::Generation {
            hash: hash.into(),
            text: text.into(),
            raw_reply: raw_reply.into(),
        })
    }
}
