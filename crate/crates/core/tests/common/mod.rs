#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use fusionrag_core::embedding::{EmbedderConfig, HashedEmbedder};
use fusionrag_core::index::DistanceMetric;
use fusionrag_core::ingestion::{ingest_directory, ChunkingConfig};
use fusionrag_core::llm::{
    CallSite, Completion, LlmError, LlmGateway, LlmProvider, LlmRequest, MockConfig, MockProvider,
};
use fusionrag_core::model::{RankedRetrieval, RetrievedChunk};
use fusionrag_core::pipeline::{Corpus, Pipeline};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

pub async fn fixture_corpus() -> Arc<Corpus> {
    let ingested = ingest_directory(&fixture_dir(), &[], &ChunkingConfig::default()).unwrap();
    let corpus = Corpus::build(
        ingested.chunks,
        Box::new(HashedEmbedder::new(256)),
        DistanceMetric::CosineDistance,
    )
    .await
    .unwrap();
    Arc::new(corpus)
}

pub fn empty_corpus() -> Arc<Corpus> {
    Arc::new(Corpus::empty(&EmbedderConfig::default(), DistanceMetric::CosineDistance))
}

/// Mock provider that counts calls per call site.
#[derive(Default)]
pub struct CountingMock {
    inner: MockProvider,
    pub query_generation: AtomicU64,
    pub answer_synthesis: AtomicU64,
}

impl CountingMock {
    pub fn with_config(config: MockConfig) -> Self {
        Self {
            inner: MockProvider::new(config),
            ..Self::default()
        }
    }

    pub fn counts(&self) -> (u64, u64) {
        (
            self.query_generation.load(Ordering::SeqCst),
            self.answer_synthesis.load(Ordering::SeqCst),
        )
    }
}

#[async_trait]
impl LlmProvider for CountingMock {
    fn name(&self) -> &str {
        "counting-mock"
    }

    async fn complete(&self, request: &LlmRequest) -> Result<Completion, LlmError> {
        match request.call_site {
            CallSite::QueryGeneration => &self.query_generation,
            CallSite::AnswerSynthesis => &self.answer_synthesis,
        }
        .fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request).await
    }
}

pub fn mock_pipeline(corpus: Arc<Corpus>) -> Pipeline {
    Pipeline::new(
        corpus,
        LlmGateway::new(Arc::new(MockProvider::default()), 4),
    )
}

/// A retrieval over `ids` in the given order with increasing fake distances.
pub fn ranked(query: &str, ids: &[&str]) -> RankedRetrieval {
    RankedRetrieval {
        query_text: query.to_string(),
        entries: ids
            .iter()
            .enumerate()
            .map(|(i, id)| RetrievedChunk {
                chunk_id: id.to_string(),
                distance: i as f64 * 0.01,
            })
            .collect(),
    }
}
