use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fusionrag_core::embedding::EmbedError;
use fusionrag_core::eval::{run_benchmark, BenchError, BenchSettings, RubricError, RubricScore, RubricStore, RunOrder};
use fusionrag_core::ingestion::{ChunkingConfig, FileError};
use fusionrag_core::llm::{CallSite, LlmGateway};
use fusionrag_core::model::{ChatExchange, Mode};
use fusionrag_core::pipeline::{Corpus, Pipeline, PipelineConfig, PipelineError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{Mutex, RwLock, Semaphore};
use tower_http::cors::CorsLayer;

use crate::config::ServiceConfig;
use crate::ops::{self, CorpusError};
use crate::store::ExchangeStore;

const DEFAULT_LIST_LIMIT: usize = 20;
const MAX_LIST_LIMIT: usize = 500;

#[derive(Debug, Clone)]
struct ActiveCorpus {
    corpus: Arc<Corpus>,
    corpus_id: String,
}

pub struct AppState {
    config: ServiceConfig,
    gateway: LlmGateway,
    active: RwLock<Option<ActiveCorpus>>,
    chat_slots: Semaphore,
    bench_running: Mutex<()>,
    ingest_running: Mutex<()>,
    exchanges: ExchangeStore,
    rubric: RubricStore,
}

impl AppState {
    pub fn new(config: ServiceConfig, gateway: LlmGateway) -> Result<Self, RubricError> {
        let rubric = RubricStore::open(&config.rubric_path())?;
        Ok(Self {
            chat_slots: Semaphore::new(config.max_concurrent_chats),
            exchanges: ExchangeStore::new(config.exchanges_dir()),
            gateway,
            rubric,
            active: RwLock::new(None),
            bench_running: Mutex::new(()),
            ingest_running: Mutex::new(()),
            config,
        })
    }

    pub async fn set_corpus(&self, corpus: Corpus, corpus_id: String) {
        *self.active.write().await = Some(ActiveCorpus {
            corpus: Arc::new(corpus),
            corpus_id,
        });
    }

    async fn pipeline(&self) -> Result<Pipeline, ApiError> {
        let active = self.active.read().await;
        let active = active.as_ref().ok_or_else(|| {
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "index not ready; ingest a corpus first")
        })?;
        Ok(Pipeline::new(active.corpus.clone(), self.gateway.clone()))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    call_site: Option<CallSite>,
    file_errors: Vec<FileError>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            call_site: None,
            file_errors: Vec::new(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(site) = self.call_site {
            body["call_site"] = json!(site);
        }
        if !self.file_errors.is_empty() {
            body["file_errors"] = json!(self.file_errors);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::EmptyQuery | PipelineError::InvalidConfig(_) => Self::bad_request(message),
            PipelineError::Embedding {
                source: EmbedError::EmptyText | EmbedError::NoTokens,
                ..
            } => Self::bad_request(message),
            PipelineError::Embedding { .. } => Self::new(StatusCode::BAD_GATEWAY, message),
            PipelineError::Gateway { call_site, .. } => Self {
                call_site: Some(call_site),
                ..Self::new(StatusCode::BAD_GATEWAY, message)
            },
            PipelineError::QueryParse(_) => Self {
                call_site: Some(CallSite::QueryGeneration),
                ..Self::new(StatusCode::BAD_GATEWAY, message)
            },
            PipelineError::Retrieval(_) | PipelineError::Fusion(_) | PipelineError::Corpus(_) => {
                Self::internal(message)
            }
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn parse_mode(raw: &str) -> Result<Mode, ApiError> {
    raw.parse().map_err(|e: fusionrag_core::model::UnknownMode| ApiError::bad_request(e.to_string()))
}

/// Per-request tweaks on top of the configured pipeline for the mode.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineOverrides {
    pub num_generated_queries: Option<usize>,
    pub per_query_top_n: Option<usize>,
    pub evidence_top_m: Option<usize>,
    pub include_original_query_retrieval: Option<bool>,
    pub k: Option<f64>,
    pub retrieval_parallelism: Option<usize>,
}

impl PipelineOverrides {
    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut c = base.clone();
        if let Some(v) = self.num_generated_queries {
            c.num_generated_queries = v;
        }
        if let Some(v) = self.per_query_top_n {
            c.per_query_top_n = v;
        }
        if let Some(v) = self.evidence_top_m {
            c.evidence_top_m = v;
        }
        if let Some(v) = self.include_original_query_retrieval {
            c.include_original_query_retrieval = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.retrieval_parallelism {
            c.retrieval_parallelism = v;
        }
        c
    }
}

#[derive(Debug, Deserialize)]
struct ChatRequest {
    query: String,
    #[serde(default = "default_mode")]
    mode: String,
    #[serde(default)]
    config: PipelineOverrides,
}

fn default_mode() -> String {
    Mode::RagFusion.as_str().into()
}

async fn chat(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ChatExchange>, ApiError> {
    let request: ChatRequest = parse_body(&body)?;
    let mode = parse_mode(&request.mode)?;
    if request.query.trim().is_empty() {
        return Err(ApiError::bad_request("query is empty"));
    }
    let config = request.config.apply(state.config.pipeline_config(mode));
    let pipeline = state.pipeline().await?;
    let _slot = state.chat_slots.acquire().await.expect("chat semaphore is never closed");
    let exchange = pipeline.run(&request.query, &config).await?;
    state.exchanges.save(&exchange).map_err(ApiError::internal)?;
    Ok(Json(exchange))
}

#[derive(Debug, Deserialize)]
struct IngestRequest {
    root_path: PathBuf,
    #[serde(default)]
    include_globs: Vec<String>,
    #[serde(default)]
    chunking: Option<ChunkingConfig>,
}

async fn ingest(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ops::IngestSummary>, ApiError> {
    let request: IngestRequest = parse_body(&body)?;
    let chunking = request.chunking.unwrap_or_else(|| state.config.chunking.clone());
    let _one_at_a_time = state.ingest_running.lock().await;
    let (corpus, summary) = ops::ingest_for(&state.config, &request.root_path, &request.include_globs, &chunking)
        .await
        .map_err(|e: CorpusError| {
            let status = if e.is_validation() {
                StatusCode::BAD_REQUEST
            } else {
                StatusCode::INTERNAL_SERVER_ERROR
            };
            ApiError {
                file_errors: e.file_errors().to_vec(),
                ..ApiError::new(status, e.to_string())
            }
        })?;
    state.set_corpus(corpus, summary.corpus_id.clone()).await;
    Ok(Json(summary))
}

#[derive(Debug, Deserialize)]
struct BenchRequest {
    query: String,
    runs_per_mode: usize,
    #[serde(default)]
    order: Option<RunOrder>,
}

async fn bench(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let request: BenchRequest = parse_body(&body)?;
    let Ok(_exclusive) = state.bench_running.try_lock() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "a benchmark is already running"));
    };
    let pipeline = state.pipeline().await?;
    let settings = BenchSettings {
        runs_per_mode: request.runs_per_mode,
        order: request.order.unwrap_or(state.config.bench.order),
        ..state.config.bench.clone()
    };
    let report = run_benchmark(&pipeline, &request.query, &settings, &state.config.rag, &state.config.rag_fusion)
        .await
        .map_err(|e| match e {
            BenchError::NoRuns | BenchError::EmptyQuery | BenchError::Config { .. } => {
                ApiError::bad_request(e.to_string())
            }
        })?;
    let path = state.config.bench_report_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(ApiError::internal)?;
    }
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(ApiError::internal)?;
    Ok(Json(report).into_response())
}

async fn rubric(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let score: RubricScore = parse_body(&body)?;
    let stored = state.rubric.record(score, &state.exchanges).map_err(|e| match e {
        RubricError::Validation(_) => ApiError::bad_request(e.to_string()),
        RubricError::UnknownExchange(_) => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
        RubricError::Io { .. } | RubricError::Corrupt { .. } => ApiError::internal(e),
    })?;
    Ok((StatusCode::CREATED, Json(stored)).into_response())
}

#[derive(Debug, Deserialize)]
struct SummaryQuery {
    mode: Option<String>,
}

async fn rubric_summary(
    State(state): State<Arc<AppState>>,
    Query(q): Query<SummaryQuery>,
) -> Result<Response, ApiError> {
    let mode = q.mode.as_deref().map(parse_mode).transpose()?;
    Ok(Json(state.rubric.summary(mode)).into_response())
}

async fn get_exchange(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<ChatExchange>, ApiError> {
    state
        .exchanges
        .get(&id)
        .map_err(ApiError::internal)?
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no exchange with id {id}")))
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    limit: Option<usize>,
}

async fn list_exchanges(
    State(state): State<Arc<AppState>>,
    Query(q): Query<ListQuery>,
) -> Result<Json<Vec<ChatExchange>>, ApiError> {
    let limit = q.limit.unwrap_or(DEFAULT_LIST_LIMIT).min(MAX_LIST_LIMIT);
    state.exchanges.list(limit).map(Json).map_err(ApiError::internal)
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    index_ready: bool,
    corpus_id: Option<String>,
    chunk_count: usize,
    provider: String,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let active = state.active.read().await;
    Json(Health {
        status: "ok",
        index_ready: active.is_some(),
        corpus_id: active.as_ref().map(|a| a.corpus_id.clone()),
        chunk_count: active.as_ref().map_or(0, |a| a.corpus.len()),
        provider: state.gateway.provider_name().to_string(),
    })
}

fn cors(origins: &[String]) -> CorsLayer {
    let origins: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE])
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = cors(&state.config.cors_origins);
    Router::new()
        .route("/api/chat", post(chat))
        .route("/api/ingest", post(ingest))
        .route("/api/bench", post(bench))
        .route("/api/rubric", post(rubric))
        .route("/api/rubric/summary", get(rubric_summary))
        .route("/api/exchanges", get(list_exchanges))
        .route("/api/exchanges/{id}", get(get_exchange))
        .route("/api/health", get(health))
        .layer(cors)
        .with_state(state)
}
