//! Exact brute-force vector index over chunk embeddings.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbedError, Embedder, EmbedderConfig};
use crate::model::{DocumentChunk, EmbeddingVector, RankedRetrieval, RetrievedChunk, VectorError};

pub const INDEX_FILE: &str = "index.bin";
pub const INDEX_META_FILE: &str = "index.meta.json";

const MAGIC: &[u8; 4] = b"FRIX";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    CosineDistance,
    Euclidean,
}

impl DistanceMetric {
    fn tag(self) -> u8 {
        match self {
            DistanceMetric::CosineDistance => 0,
            DistanceMetric::Euclidean => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DistanceMetric::CosineDistance),
            1 => Some(DistanceMetric::Euclidean),
            _ => None,
        }
    }

    /// For cosine both inputs must already be unit length; the result is
    /// `1 - dot` clamped into `[0, 2]`.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::CosineDistance => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (1.0 - dot).clamp(0.0, 2.0)
            }
            DistanceMetric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot build an index from zero chunks")]
    NoChunks,
    #[error("duplicate chunk_id '{0}'")]
    DuplicateChunk(String),
    #[error("query vector has dimension {actual}, index expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("top_n must be positive")]
    ZeroTopN,
    #[error("failed to embed chunk '{chunk_id}': {source}")]
    Embed {
        chunk_id: String,
        #[source]
        source: EmbedError,
    },
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("index was built with embedder {found}, configured embedder is {expected}")]
    EmbedderMismatch { expected: String, found: String },
    #[error("index file is corrupt: {0}")]
    Corrupt(String),
    #[error("index io: {0}")]
    Io(#[from] io::Error),
    #[error("index metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub dimension: usize,
    pub metric: DistanceMetric,
    pub embedder_config_hash: String,
    pub entry_count: usize,
}

/// Immutable after construction; safe to search from many threads.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    metric: DistanceMetric,
    embedder_hash: String,
    entries: Vec<IndexEntry>,
}

impl VectorIndex {
    pub fn empty(embedder: &EmbedderConfig, metric: DistanceMetric) -> Self {
        Self {
            dimension: embedder.dimension(),
            metric,
            embedder_hash: embedder.fingerprint(),
            entries: Vec::new(),
        }
    }

    /// Builds from already computed vectors. Cosine entries are normalized on
    /// the way in.
    pub fn from_vectors(
        embedder: &EmbedderConfig,
        metric: DistanceMetric,
        vectors: Vec<(String, EmbeddingVector)>,
    ) -> Result<Self, IndexError> {
        let dimension = embedder.dimension();
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(vectors.len());
        for (chunk_id, vector) in vectors {
            if !seen.insert(chunk_id.clone()) {
                return Err(IndexError::DuplicateChunk(chunk_id));
            }
            vector.check(dimension)?;
            let vector = match metric {
                DistanceMetric::CosineDistance => vector.into_normalized()?,
                DistanceMetric::Euclidean => vector,
            };
            entries.push(IndexEntry { chunk_id, vector });
        }
        Ok(Self {
            dimension,
            metric,
            embedder_hash: embedder.fingerprint(),
            entries,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn embedder_hash(&self) -> &str {
        &self.embedder_hash
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn meta(&self) -> IndexMeta {
        IndexMeta {
            dimension: self.dimension,
            metric: self.metric,
            embedder_config_hash: self.embedder_hash.clone(),
            entry_count: self.entries.len(),
        }
    }

    /// Exact top-`top_n` by `(distance, chunk_id)`.
    pub fn search(
        &self,
        query_text: &str,
        query: &EmbeddingVector,
        top_n: usize,
    ) -> Result<RankedRetrieval, IndexError> {
        if top_n == 0 {
            return Err(IndexError::ZeroTopN);
        }
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                actual: query.dimension(),
            });
        }
        if self.entries.is_empty() {
            return Ok(RankedRetrieval {
                query_text: query_text.to_string(),
                entries: Vec::new(),
            });
        }
        let query = match self.metric {
            DistanceMetric::CosineDistance => query.clone().into_normalized()?,
            DistanceMetric::Euclidean => query.clone(),
        };

        let mut scored: Vec<(f64, &str)> = self
            .entries
            .iter()
            .map(|e| {
                (
                    self.metric.distance(query.values(), e.vector.values()),
                    e.chunk_id.as_str(),
                )
            })
            .collect();
        let order = |a: &(f64, &str), b: &(f64, &str)| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1));
        if top_n < scored.len() {
            scored.select_nth_unstable_by(top_n - 1, order);
            scored.truncate(top_n);
        }
        scored.sort_unstable_by(order);

        Ok(RankedRetrieval {
            query_text: query_text.to_string(),
            entries: scored
                .into_iter()
                .map(|(distance, id)| RetrievedChunk {
                    chunk_id: id.to_string(),
                    distance,
                })
                .collect(),
        })
    }

    /// Writes `index.bin` and `index.meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        buf.push(self.metric.tag());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for entry in &self.entries {
            let id = entry.chunk_id.as_bytes();
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id);
            buf.push(u8::from(entry.vector.is_normalized()));
            for v in entry.vector.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::File::create(dir.join(INDEX_FILE))?.write_all(&buf)?;
        fs::write(
            dir.join(INDEX_META_FILE),
            serde_json::to_string_pretty(&self.meta())?,
        )?;
        Ok(())
    }

    /// Loads an index saved by [`VectorIndex::save`], refusing it if it was
    /// built by a different embedder than `embedder`.
    pub fn load(dir: &Path, embedder: &EmbedderConfig) -> Result<Self, IndexError> {
        let meta: IndexMeta = serde_json::from_str(&fs::read_to_string(dir.join(INDEX_META_FILE))?)?;
        let expected = embedder.fingerprint();
        if meta.embedder_config_hash != expected {
            return Err(IndexError::EmbedderMismatch {
                expected,
                found: meta.embedder_config_hash,
            });
        }

        let mut bytes = Vec::new();
        fs::File::open(dir.join(INDEX_FILE))?.read_to_end(&mut bytes)?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::Corrupt(format!("unsupported version {version}")));
        }
        let dimension = r.u32()? as usize;
        let metric = DistanceMetric::from_tag(r.u8()?)
            .ok_or_else(|| IndexError::Corrupt("unknown metric".into()))?;
        let count = r.u64()? as usize;
        if dimension != meta.dimension || metric != meta.metric || count != meta.entry_count {
            return Err(IndexError::Corrupt("binary header disagrees with metadata".into()));
        }
        if dimension != embedder.dimension() {
            return Err(IndexError::DimensionMismatch {
                expected: embedder.dimension(),
                actual: dimension,
            });
        }

        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let chunk_id = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| IndexError::Corrupt("chunk id is not utf-8".into()))?;
            let normalized = r.u8()? == 1;
            let mut values = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                values.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            let vector = EmbeddingVector::from_parts(values, normalized)?;
            entries.push(IndexEntry { chunk_id, vector });
        }
        if r.pos != bytes.len() {
            return Err(IndexError::Corrupt("trailing bytes".into()));
        }
        Ok(Self {
            dimension,
            metric,
            embedder_hash: meta.embedder_config_hash,
            entries,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|end| *end <= self.bytes.len())
            .ok_or_else(|| IndexError::Corrupt("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, IndexError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Embeds every chunk and builds an index. Chunk ids must be unique.
pub async fn build_index(
    chunks: &[DocumentChunk],
    embedder: &dyn Embedder,
    metric: DistanceMetric,
) -> Result<VectorIndex, IndexError> {
    if chunks.is_empty() {
        return Err(IndexError::NoChunks);
    }
    let mut seen = HashSet::new();
    for chunk in chunks {
        if !seen.insert(chunk.chunk_id.as_str()) {
            return Err(IndexError::DuplicateChunk(chunk.chunk_id.clone()));
        }
    }
    let mut vectors = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let vector = embedder
            .embed(&chunk.text)
            .await
            .map_err(|source| IndexError::Embed {
                chunk_id: chunk.chunk_id.clone(),
                source,
            })?;
        vectors.push((chunk.chunk_id.clone(), vector));
    }
    VectorIndex::from_vectors(embedder.config(), metric, vectors)
}
