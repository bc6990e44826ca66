//! Operations shared by the CLI verbs and the HTTP handlers.

use std::path::Path;

use fusionrag_core::embedding::EmbedderConfig;
use fusionrag_core::index::{DistanceMetric, IndexError, VectorIndex, INDEX_META_FILE};
use fusionrag_core::ingestion::{
    ingest_directory, read_chunks, read_manifest, write_corpus, ChunkingConfig, FileError,
    IngestError,
};
use fusionrag_core::pipeline::{Corpus, PipelineError};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Assemble(#[from] PipelineError),
}

impl CorpusError {
    /// Whether the caller supplied something unusable, as opposed to an
    /// environment or provider failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            CorpusError::Ingest(
                IngestError::MissingRoot(_)
                    | IngestError::BadGlob { .. }
                    | IngestError::EmptyCorpus { .. }
                    | IngestError::BadConfig(_)
            )
        )
    }

    pub fn file_errors(&self) -> &[FileError] {
        match self {
            CorpusError::Ingest(IngestError::EmptyCorpus { errors, .. }) => errors,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub corpus_id: String,
    pub document_count: usize,
    pub chunk_count: usize,
    pub errors: Vec<FileError>,
}

/// Ingests `root`, builds the index and saves both under `out_dir`.
pub async fn ingest_to(
    out_dir: &Path,
    root: &Path,
    include_globs: &[String],
    chunking: &ChunkingConfig,
    embedder: &EmbedderConfig,
    metric: DistanceMetric,
) -> Result<(Corpus, IngestSummary), CorpusError> {
    let (root_owned, globs, cfg) = (root.to_path_buf(), include_globs.to_vec(), chunking.clone());
    let ingested = tokio::task::spawn_blocking(move || ingest_directory(&root_owned, &globs, &cfg))
        .await
        .expect("ingest task panicked")?;
    let summary = IngestSummary {
        corpus_id: ingested.manifest.corpus_id.clone(),
        document_count: ingested.manifest.documents.len(),
        chunk_count: ingested.chunks.len(),
        errors: ingested.errors.clone(),
    };
    let corpus = Corpus::build(ingested.chunks.clone(), embedder.build(), metric).await?;
    write_corpus(out_dir, &ingested)?;
    corpus.index().save(out_dir)?;
    tracing::info!(corpus_id = %summary.corpus_id, chunks = summary.chunk_count, "corpus saved");
    Ok((corpus, summary))
}

pub async fn ingest_for(
    config: &ServiceConfig,
    root: &Path,
    include_globs: &[String],
    chunking: &ChunkingConfig,
) -> Result<(Corpus, IngestSummary), CorpusError> {
    ingest_to(
        &config.corpus_dir(),
        root,
        include_globs,
        chunking,
        &config.embedder,
        config.metric,
    )
    .await
}

/// Loads a saved corpus, if one exists.
pub fn load_saved(dir: &Path, embedder: &EmbedderConfig) -> Result<Option<(Corpus, String)>, CorpusError> {
    if !dir.join(INDEX_META_FILE).exists() {
        return Ok(None);
    }
    let manifest = read_manifest(dir)?;
    let index = VectorIndex::load(dir, embedder)?;
    let chunks = read_chunks(dir)?;
    Ok(Some((Corpus::new(index, chunks, embedder.build())?, manifest.corpus_id)))
}

/// The saved corpus, else a fresh ingest of `corpus_root`, else `None`.
pub async fn open_corpus(config: &ServiceConfig) -> Result<Option<(Corpus, String)>, CorpusError> {
    if let Some(found) = load_saved(&config.corpus_dir(), &config.embedder)? {
        return Ok(Some(found));
    }
    match &config.corpus_root {
        Some(root) => {
            let (corpus, summary) =
                ingest_for(config, root, &config.include_globs, &config.chunking).await?;
            Ok(Some((corpus, summary.corpus_id)))
        }
        None => Ok(None),
    }
}
