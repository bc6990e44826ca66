//! Shared domain types: chunks, vectors, ranked retrievals, fusion results
//! and the full record of one chat exchange.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Tolerance used when checking that a stored rrf score matches its contributors.
pub const SCORE_TOLERANCE: f64 = 1e-12;

/// Tolerance on the L2 norm of a vector flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// A retrievable slice of a source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
    pub position: usize,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl DocumentChunk {
    pub fn chunk_id_for(doc_id: &str, position: usize) -> String {
        format!("{doc_id}#{position}")
    }
}

/// Checks the corpus-level chunk invariants: non-blank text, unique ids and
/// unique `(doc_id, position)` pairs.
pub fn validate_chunks(chunks: &[DocumentChunk]) -> Vec<String> {
    let mut violations = Vec::new();
    let mut ids = HashSet::new();
    let mut slots = HashSet::new();
    for chunk in chunks {
        if chunk.text.trim().is_empty() {
            violations.push(format!("chunk {} has blank text", chunk.chunk_id));
        }
        if !ids.insert(chunk.chunk_id.as_str()) {
            violations.push(format!("duplicate chunk_id {}", chunk.chunk_id));
        }
        if !slots.insert((chunk.doc_id.as_str(), chunk.position)) {
            violations.push(format!(
                "duplicate position {} in document {}",
                chunk.position, chunk.doc_id
            ));
        }
    }
    violations
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VectorError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector flagged as normalized has norm {0}")]
    NotUnitLength(f64),
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Fixed-dimension numeric representation of a text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw values without normalizing them.
    pub fn raw(values: Vec<f64>) -> Result<Self, VectorError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite);
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Scales `values` to unit L2 norm.
    pub fn normalized(values: Vec<f64>) -> Result<Self, VectorError> {
        Self::raw(values)?.into_normalized()
    }

    /// Restores a vector whose norm flag was recorded elsewhere, verifying the
    /// flag against the values.
    pub fn from_parts(values: Vec<f64>, normalized: bool) -> Result<Self, VectorError> {
        let v = Self { normalized, ..Self::raw(values)? };
        if normalized && (v.norm() - 1.0).abs() > NORM_TOLERANCE {
            return Err(VectorError::NotUnitLength(v.norm()));
        }
        Ok(v)
    }

    pub fn into_normalized(self) -> Result<Self, VectorError> {
        if self.normalized {
            return Ok(self);
        }
        let norm = l2_norm(&self.values);
        if norm == 0.0 {
            return Err(VectorError::ZeroVector);
        }
        let values = self.values.into_iter().map(|v| v / norm).collect();
        Ok(Self {
            values,
            normalized: true,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Deserialized vectors carry an untrusted norm flag; this re-checks it.
    pub fn check(&self, dimension: usize) -> Result<(), VectorError> {
        if self.values.len() != dimension {
            return Err(VectorError::DimensionMismatch {
                expected: dimension,
                actual: self.values.len(),
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite);
        }
        if self.normalized && (self.norm() - 1.0).abs() > NORM_TOLERANCE {
            return Err(VectorError::NotUnitLength(self.norm()));
        }
        Ok(())
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub chunk_id: String,
    pub distance: f64,
}

/// One query's retrieval, ascending by distance with ties ascending by chunk id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRetrieval {
    pub query_text: String,
    pub entries: Vec<RetrievedChunk>,
}

impl RankedRetrieval {
    pub fn chunk_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.chunk_id.as_str())
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for (i, entry) in self.entries.iter().enumerate() {
            if !(entry.distance.is_finite() && entry.distance >= 0.0) {
                out.push(format!(
                    "retrieval '{}' has invalid distance {} for {}",
                    self.query_text, entry.distance, entry.chunk_id
                ));
            }
            if !seen.insert(entry.chunk_id.as_str()) {
                out.push(format!(
                    "retrieval '{}' lists {} more than once",
                    self.query_text, entry.chunk_id
                ));
            }
            if i > 0 {
                let prev = &self.entries[i - 1];
                let ordered = prev.distance < entry.distance
                    || (prev.distance == entry.distance && prev.chunk_id < entry.chunk_id);
                if !ordered {
                    out.push(format!(
                        "retrieval '{}' is out of order at position {}",
                        self.query_text,
                        i + 1
                    ));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Contributor {
    pub rank: usize,
    pub query_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedChunk {
    pub chunk_id: String,
    pub rrf_score: f64,
    pub contributors: Vec<Contributor>,
}

/// Fused reranking of several retrievals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub entries: Vec<FusedChunk>,
    pub k_used: f64,
}

impl FusionResult {
    pub fn chunk_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.chunk_id.as_str())
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.k_used.is_finite() && self.k_used >= 0.0) {
            out.push(format!("fusion k_used {} is not a non-negative real", self.k_used));
        }
        let mut seen = HashSet::new();
        for (i, entry) in self.entries.iter().enumerate() {
            if !seen.insert(entry.chunk_id.as_str()) {
                out.push(format!("fusion lists {} more than once", entry.chunk_id));
            }
            if entry.contributors.is_empty() {
                out.push(format!("fusion entry {} has no contributors", entry.chunk_id));
            }
            if entry.contributors.iter().any(|c| c.rank < 1) {
                out.push(format!("fusion entry {} has a rank below 1", entry.chunk_id));
            }
            if !(entry.rrf_score > 0.0) {
                out.push(format!("fusion entry {} has non-positive score", entry.chunk_id));
            }
            let expected: f64 = entry
                .contributors
                .iter()
                .map(|c| 1.0 / (c.rank as f64 + self.k_used))
                .sum();
            if (expected - entry.rrf_score).abs() > SCORE_TOLERANCE {
                out.push(format!(
                    "fusion score mismatch for {}: stored {}, contributors sum to {}",
                    entry.chunk_id, entry.rrf_score, expected
                ));
            }
            if i > 0 {
                let prev = &self.entries[i - 1];
                let ordered = prev.rrf_score > entry.rrf_score
                    || (prev.rrf_score == entry.rrf_score && prev.chunk_id < entry.chunk_id);
                if !ordered {
                    out.push(format!("fusion is out of order at position {}", i + 1));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rag,
    RagFusion,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Rag => "rag",
            Mode::RagFusion => "rag_fusion",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown mode '{0}' (expected rag or rag_fusion)")]
pub struct UnknownMode(pub String);

impl FromStr for Mode {
    type Err = UnknownMode;

    /// Accepts `rag`, `rag_fusion` and the CLI spelling `rag-fusion`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rag" => Ok(Mode::Rag),
            "rag_fusion" | "rag-fusion" => Ok(Mode::RagFusion),
            other => Err(UnknownMode(other.to_string())),
        }
    }
}

/// Per-stage wall-clock timings in whole milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub query_generation_ms: u64,
    pub retrieval_ms: u64,
    pub fusion_ms: u64,
    pub synthesis_ms: u64,
    pub total_ms: u64,
}

impl StageTimings {
    pub fn max_stage(&self) -> u64 {
        self.query_generation_ms
            .max(self.retrieval_ms)
            .max(self.fusion_ms)
            .max(self.synthesis_ms)
    }
}

/// Everything that happened in one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub exchange_id: String,
    pub mode: Mode,
    pub original_query: String,
    pub generated_queries: Vec<String>,
    pub retrievals: Vec<RankedRetrieval>,
    pub fusion: Option<FusionResult>,
    pub answer: String,
    pub evidence: Vec<String>,
    pub timings: StageTimings,
    pub created_at: DateTime<Utc>,
    /// Non-fatal anomalies, e.g. the model returned more queries than requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn new_exchange_id() -> String {
    ulid::Ulid::new().to_string()
}

/// Lists every broken `ChatExchange` invariant; an empty list means valid.
pub fn validate_exchange(exchange: &ChatExchange) -> Vec<String> {
    let mut out = Vec::new();
    match exchange.mode {
        Mode::Rag => {
            if !exchange.generated_queries.is_empty() {
                out.push("rag mode must have no generated queries".to_string());
            }
            if exchange.fusion.is_some() {
                out.push("rag mode must have no fusion result".to_string());
            }
            if exchange.retrievals.len() != 1 {
                out.push(format!(
                    "rag mode must have exactly one retrieval, found {}",
                    exchange.retrievals.len()
                ));
            }
        }
        Mode::RagFusion => {
            if exchange.generated_queries.is_empty() {
                out.push("rag_fusion mode must have generated queries".to_string());
            }
            if exchange.fusion.is_none() {
                out.push("rag_fusion mode must have a fusion result".to_string());
            }
        }
    }

    for retrieval in &exchange.retrievals {
        out.extend(retrieval.violations());
    }
    if let Some(fusion) = &exchange.fusion {
        out.extend(fusion.violations());
    }

    let ranked: Vec<&str> = match (exchange.mode, &exchange.fusion) {
        (Mode::RagFusion, Some(fusion)) => fusion.chunk_ids().collect(),
        (Mode::Rag, _) => exchange
            .retrievals
            .first()
            .map(|r| r.chunk_ids().collect())
            .unwrap_or_default(),
        _ => Vec::new(),
    };
    let is_prefix = exchange.evidence.len() <= ranked.len()
        && exchange
            .evidence
            .iter()
            .zip(&ranked)
            .all(|(e, r)| e.as_str() == *r);
    if !is_prefix {
        out.push("evidence is not a prefix of the ranked chunk list".to_string());
    }

    let t = &exchange.timings;
    if t.total_ms < t.max_stage() {
        out.push(format!(
            "total_ms {} is below the slowest stage {}",
            t.total_ms,
            t.max_stage()
        ));
    }
    out
}
