//! Retrieval-augmented answering with multi-query reciprocal rank fusion.
//!
//! The crate covers the whole offline path: loading and chunking documents,
//! hashed or remote embeddings, an exact vector index, the LLM gateway with a
//! deterministic mock, rank fusion, the two pipelines and the latency and
//! rubric instruments used to compare them.

use std::sync::atomic::{AtomicU64, Ordering};

pub mod embedding;
pub mod eval;
pub mod fusion;
pub mod index;
pub mod ingestion;
pub mod llm;
pub mod model;
pub mod pipeline;

static OUTBOUND_REQUESTS: AtomicU64 = AtomicU64::new(0);

pub(crate) fn note_outbound_request() {
    OUTBOUND_REQUESTS.fetch_add(1, Ordering::SeqCst);
}

/// Number of network requests issued by the HTTP embedder and LLM transport in
/// this process. Mock-only configurations keep this at zero.
pub fn outbound_requests() -> u64 {
    OUTBOUND_REQUESTS.load(Ordering::SeqCst)
}
