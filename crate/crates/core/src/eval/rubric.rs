//! Human scores for exchanges on accuracy, relevance and comprehensiveness,
//! each an integer from 1 to 5. The store is an append-only JSON-lines file;
//! replaying it keeps the last line per (exchange, rater).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::Mode;

pub const RUBRIC_FILE: &str = "rubric.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricScore {
    pub exchange_id: String,
    pub rater: String,
    pub accuracy: u8,
    pub relevance: u8,
    pub comprehensiveness: u8,
    #[serde(default)]
    pub notes: String,
}

impl RubricScore {
    pub fn validate(&self) -> Result<(), RubricError> {
        if self.exchange_id.trim().is_empty() {
            return Err(RubricError::Validation("exchange_id is empty".into()));
        }
        if self.rater.trim().is_empty() {
            return Err(RubricError::Validation("rater is empty".into()));
        }
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("relevance", self.relevance),
            ("comprehensiveness", self.comprehensiveness),
        ] {
            if !(1..=5).contains(&v) {
                return Err(RubricError::Validation(format!("{name} must be 1-5, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRubric {
    pub id: String,
    #[serde(flatten)]
    pub score: RubricScore,
    pub mode: Mode,
    pub revision: u32,
    pub recorded_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum RubricError {
    #[error("invalid rubric score: {0}")]
    Validation(String),
    #[error("no exchange with id {0}")]
    UnknownExchange(String),
    #[error("rubric store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("rubric store {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Resolves an exchange id to the mode it ran in.
pub trait ExchangeLookup {
    fn exchange_mode(&self, exchange_id: &str) -> Option<Mode>;
}

impl ExchangeLookup for HashMap<String, Mode> {
    fn exchange_mode(&self, exchange_id: &str) -> Option<Mode> {
        self.get(exchange_id).copied()
    }
}

#[derive(Debug, Default)]
struct Entries {
    order: Vec<(String, String)>,
    latest: HashMap<(String, String), StoredRubric>,
}

impl Entries {
    fn put(&mut self, stored: StoredRubric) {
        let key = (stored.score.exchange_id.clone(), stored.score.rater.clone());
        if !self.latest.contains_key(&key) {
            self.order.push(key.clone());
        }
        self.latest.insert(key, stored);
    }
}

#[derive(Debug)]
pub struct RubricStore {
    path: Option<PathBuf>,
    entries: Mutex<Entries>,
}

impl RubricStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(Entries::default()),
        }
    }

    /// Opens (or starts) the store at `path`, replaying existing lines.
    pub fn open(path: &Path) -> Result<Self, RubricError> {
        let mut entries = Entries::default();
        match File::open(path) {
            Ok(file) => {
                for (i, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|source| RubricError::Io {
                        path: path.to_path_buf(),
                        source,
                    })?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let stored: StoredRubric =
                        serde_json::from_str(&line).map_err(|e| RubricError::Corrupt {
                            path: path.to_path_buf(),
                            line: i + 1,
                            message: e.to_string(),
                        })?;
                    entries.put(stored);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => {
                return Err(RubricError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
        })
    }

    /// Validates and stores a score. A repeat by the same rater for the same
    /// exchange replaces the earlier one and bumps its revision.
    pub fn record(
        &self,
        score: RubricScore,
        exchanges: &dyn ExchangeLookup,
    ) -> Result<StoredRubric, RubricError> {
        score.validate()?;
        let mode = exchanges
            .exchange_mode(&score.exchange_id)
            .ok_or_else(|| RubricError::UnknownExchange(score.exchange_id.clone()))?;

        let mut entries = self.entries.lock().expect("rubric store lock poisoned");
        let key = (score.exchange_id.clone(), score.rater.clone());
        let (id, revision) = match entries.latest.get(&key) {
            Some(prev) => (prev.id.clone(), prev.revision + 1),
            None => (ulid::Ulid::new().to_string(), 1),
        };
        let stored = StoredRubric {
            id,
            score,
            mode,
            revision,
            recorded_at: Utc::now(),
        };
        if let Some(path) = &self.path {
            let io = |source| RubricError::Io {
                path: path.clone(),
                source,
            };
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io)?;
            let mut line = serde_json::to_string(&stored).expect("rubric serializes");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(io)?;
        }
        entries.put(stored.clone());
        Ok(stored)
    }

    pub fn get(&self, id: &str) -> Option<StoredRubric> {
        let entries = self.entries.lock().expect("rubric store lock poisoned");
        entries.latest.values().find(|s| s.id == id).cloned()
    }

    /// Current scores in first-submission order.
    pub fn all(&self) -> Vec<StoredRubric> {
        let entries = self.entries.lock().expect("rubric store lock poisoned");
        entries
            .order
            .iter()
            .map(|k| entries.latest[k].clone())
            .collect()
    }

    pub fn summary(&self, mode: Option<Mode>) -> RubricSummary {
        rubric_summary(&self.all(), mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionMeans {
    pub accuracy: f64,
    pub relevance: f64,
    pub comprehensiveness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub count: usize,
    pub means: Option<DimensionMeans>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricSummary {
    pub modes: Vec<ModeSummary>,
}

/// Per-mode arithmetic means. `mode` restricts the summary to one mode.
pub fn rubric_summary(scores: &[StoredRubric], mode: Option<Mode>) -> RubricSummary {
    let modes = match mode {
        Some(m) => vec![m],
        None => vec![Mode::Rag, Mode::RagFusion],
    };
    RubricSummary {
        modes: modes
            .into_iter()
            .map(|m| {
                let picked: Vec<&RubricScore> = scores
                    .iter()
                    .filter(|s| s.mode == m)
                    .map(|s| &s.score)
                    .collect();
                let n = picked.len() as f64;
                let avg = |f: fn(&RubricScore) -> u8| picked.iter().map(|s| f64::from(f(s))).sum::<f64>() / n;
                ModeSummary {
                    mode: m,
                    count: picked.len(),
                    means: (!picked.is_empty()).then(|| DimensionMeans {
                        accuracy: avg(|s| s.accuracy),
                        relevance: avg(|s| s.relevance),
                        comprehensiveness: avg(|s| s.comprehensiveness),
                    }),
                }
            })
            .collect(),
    }
}
