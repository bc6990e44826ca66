//! The two end-to-end flows.
//!
//! Classic RAG: retrieve for the original query, then one synthesis call.
//! RAG-Fusion: one call to generate queries, one retrieval per generated query
//! (optionally also the original), reciprocal rank fusion, then a synthesis
//! call that sees the original query, the generated queries and the top fused
//! chunks.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use chrono::Utc;
use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbedError, Embedder, EmbedderConfig};
use crate::fusion::{self, FusionError, DEFAULT_K};
use crate::index::{build_index, DistanceMetric, IndexError, VectorIndex};
use crate::llm::{CallSite, LlmError, LlmGateway, LlmRequest};
use crate::model::{
    new_exchange_id, validate_exchange, ChatExchange, DocumentChunk, FusionResult, Mode,
    RankedRetrieval, StageTimings,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    /// Placeholders: `{n}`, `{original_query}`.
    pub fn default_query_generation() -> Self {
        Self {
            system: "You generate search queries.".into(),
            user: "Generate {n} search queries, one per line, numbered, that explore different aspects of the following question: {original_query}".into(),
        }
    }

    /// Placeholders: `{original_query}`, `{generated_queries}`, `{documents}`.
    /// The last two expand to whole sections (possibly empty), see
    /// [`render_synthesis_prompt`].
    pub fn default_synthesis() -> Self {
        Self {
            system: "Answer using only the provided documents; if they do not contain the answer, say so explicitly.".into(),
            user: "Question: {original_query}\n\n{generated_queries}{documents}".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub num_generated_queries: usize,
    pub per_query_top_n: usize,
    pub evidence_top_m: usize,
    pub include_original_query_retrieval: bool,
    pub k: f64,
    pub query_generation_template: PromptTemplate,
    pub synthesis_template: PromptTemplate,
    pub retrieval_parallelism: usize,
    pub temperature: f64,
    pub query_generation_max_tokens: u32,
    pub synthesis_max_tokens: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::RagFusion,
            num_generated_queries: 4,
            per_query_top_n: 5,
            evidence_top_m: 8,
            include_original_query_retrieval: false,
            k: DEFAULT_K,
            query_generation_template: PromptTemplate::default_query_generation(),
            synthesis_template: PromptTemplate::default_synthesis(),
            retrieval_parallelism: 4,
            temperature: 0.0,
            query_generation_max_tokens: 256,
            synthesis_max_tokens: 1024,
        }
    }
}

impl PipelineConfig {
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.mode == Mode::RagFusion && self.num_generated_queries == 0 {
            return bad("num_generated_queries must be positive");
        }
        if self.per_query_top_n == 0 {
            return bad("per_query_top_n must be positive");
        }
        if self.evidence_top_m == 0 {
            return bad("evidence_top_m must be positive");
        }
        if !(self.k.is_finite() && self.k >= 0.0) {
            return bad("k must be a non-negative real");
        }
        if self.retrieval_parallelism == 0 {
            return bad("retrieval_parallelism must be positive");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        if self.query_generation_max_tokens == 0 || self.synthesis_max_tokens == 0 {
            return bad("token limits must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("{call_site} call failed: {source}")]
    Gateway {
        call_site: CallSite,
        #[source]
        source: LlmError,
        /// Everything recorded before the failure.
        partial: Box<ChatExchange>,
    },
    #[error(transparent)]
    QueryParse(#[from] QueryParseError),
    #[error("failed to embed query '{query}': {source}")]
    Embedding {
        query: String,
        #[source]
        source: EmbedError,
    },
    #[error(transparent)]
    Retrieval(#[from] IndexError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("corpus is inconsistent: {0}")]
    Corpus(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expected {expected} generated queries, parsed {found} from: {raw}")]
pub struct QueryParseError {
    pub expected: usize,
    pub found: usize,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQueries {
    pub queries: Vec<String>,
    /// Set when the model produced more queries than requested.
    pub warning: Option<String>,
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for q in ['\'', '"', '`', '\u{201c}', '\u{2018}'] {
        let close = match q {
            '\u{201c}' => '\u{201d}',
            '\u{2018}' => '\u{2019}',
            other => other,
        };
        if let Some(inner) = s.strip_prefix(q).and_then(|r| r.strip_suffix(close)) {
            return inner.trim();
        }
    }
    s
}

fn strip_enumeration(s: &str) -> &str {
    let s = s.trim_start();
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            // "3.3V" is content, "3. x" is a marker.
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    for bullet in ["-", "*", "\u{2022}"] {
        if let Some(rest) = s.strip_prefix(bullet) {
            if rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    s
}

/// Items of a one-line list literal such as `['1. a', "2. b's"]`.
fn list_literal_items(text: &str) -> Option<Vec<String>> {
    let inner = text.trim().strip_prefix('[')?.strip_suffix(']')?;
    let mut items = Vec::new();
    let mut chars = inner.chars();
    loop {
        let open = loop {
            match chars.next() {
                None => return Some(items),
                Some(c) if c == '\'' || c == '"' => break c,
                Some(c) if c == ',' || c.is_whitespace() => continue,
                Some(_) => return None,
            }
        };
        let mut item = String::new();
        loop {
            match chars.next() {
                None => return None,
                Some('\\') => item.extend(chars.next()),
                Some(c) if c == open => break,
                Some(c) => item.push(c),
            }
        }
        items.push(item);
    }
}

/// Extracts exactly `expected_n` queries from the query-generation output.
///
/// Accepts one query per line (with optional numbering, bullets, quotes and
/// trailing commas) or a single bracketed list of quoted strings.
pub fn parse_generated_queries(
    raw_llm_text: &str,
    expected_n: usize,
) -> Result<ParsedQueries, QueryParseError> {
    let candidates: Vec<String> = list_literal_items(raw_llm_text)
        .unwrap_or_else(|| raw_llm_text.lines().map(String::from).collect());
    let queries: Vec<String> = candidates
        .iter()
        .map(|line| {
            let line = line.trim().trim_end_matches(',');
            strip_quotes(strip_enumeration(strip_quotes(line))).to_string()
        })
        .filter(|q| !q.is_empty())
        .collect();

    if queries.len() < expected_n {
        return Err(QueryParseError {
            expected: expected_n,
            found: queries.len(),
            raw: raw_llm_text.to_string(),
        });
    }
    let warning = (queries.len() > expected_n).then(|| {
        format!(
            "model returned {} queries, kept the first {expected_n}",
            queries.len()
        )
    });
    Ok(ParsedQueries {
        queries: queries.into_iter().take(expected_n).collect(),
        warning,
    })
}

pub fn render_query_generation_prompt(
    template: &PromptTemplate,
    original_query: &str,
    n: usize,
) -> (String, String) {
    let fill = |s: &str| {
        s.replace("{n}", &n.to_string())
            .replace("{original_query}", original_query)
    };
    (fill(&template.system), fill(&template.user))
}

/// Fills the synthesis template. Evidence is numbered from 1 as
/// `Document {i} ({chunk_id}): {text}`; with no evidence the documents section
/// tells the model so.
pub fn render_synthesis_prompt(
    template: &PromptTemplate,
    original_query: &str,
    generated_queries: &[String],
    evidence: &[&DocumentChunk],
) -> (String, String) {
    let queries_section = if generated_queries.is_empty() {
        String::new()
    } else {
        let lines: Vec<String> = generated_queries
            .iter()
            .enumerate()
            .map(|(i, q)| format!("{}. {q}", i + 1))
            .collect();
        format!("Generated queries:\n{}\n\n", lines.join("\n"))
    };
    let documents_section = if evidence.is_empty() {
        "Documents: none were retrieved. State explicitly that the documents do not contain the answer.".to_string()
    } else {
        let blocks: Vec<String> = evidence
            .iter()
            .enumerate()
            .map(|(i, c)| format!("Document {} ({}): {}", i + 1, c.chunk_id, c.text))
            .collect();
        format!("Documents:\n{}", blocks.join("\n\n"))
    };
    let fill = |s: &str| {
        s.replace("{original_query}", original_query)
            .replace("{generated_queries}", &queries_section)
            .replace("{documents}", &documents_section)
    };
    (fill(&template.system), fill(&template.user))
}

/// An index together with the chunk texts it refers to and the embedder
/// that produced it.
pub struct Corpus {
    index: VectorIndex,
    chunks: HashMap<String, DocumentChunk>,
    embedder: Box<dyn Embedder>,
}

impl std::fmt::Debug for Corpus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Corpus")
            .field("entries", &self.index.len())
            .field("embedder", self.embedder.config())
            .finish()
    }
}

impl Corpus {
    pub fn new(
        index: VectorIndex,
        chunks: Vec<DocumentChunk>,
        embedder: Box<dyn Embedder>,
    ) -> Result<Self, PipelineError> {
        if index.embedder_hash() != embedder.config().fingerprint() {
            return Err(PipelineError::Corpus(
                "index was built with a different embedder".into(),
            ));
        }
        let chunks: HashMap<String, DocumentChunk> = chunks
            .into_iter()
            .map(|c| (c.chunk_id.clone(), c))
            .collect();
        if let Some(missing) = index
            .entries()
            .iter()
            .find(|e| !chunks.contains_key(&e.chunk_id))
        {
            return Err(PipelineError::Corpus(format!(
                "index entry {} has no chunk text",
                missing.chunk_id
            )));
        }
        Ok(Self {
            index,
            chunks,
            embedder,
        })
    }

    pub async fn build(
        chunks: Vec<DocumentChunk>,
        embedder: Box<dyn Embedder>,
        metric: DistanceMetric,
    ) -> Result<Self, PipelineError> {
        let index = build_index(&chunks, embedder.as_ref(), metric).await?;
        Self::new(index, chunks, embedder)
    }

    pub fn empty(embedder: &EmbedderConfig, metric: DistanceMetric) -> Self {
        Self {
            index: VectorIndex::empty(embedder, metric),
            chunks: HashMap::new(),
            embedder: embedder.build(),
        }
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&DocumentChunk> {
        self.chunks.get(chunk_id)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub async fn retrieve(&self, query: &str, top_n: usize) -> Result<RankedRetrieval, PipelineError> {
        let vector = self
            .embedder
            .embed(query)
            .await
            .map_err(|source| PipelineError::Embedding {
                query: query.to_string(),
                source,
            })?;
        Ok(self.index.search(query, &vector, top_n)?)
    }
}

fn elapsed_ms(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    corpus: Arc<Corpus>,
    gateway: LlmGateway,
}

impl Pipeline {
    pub fn new(corpus: Arc<Corpus>, gateway: LlmGateway) -> Self {
        Self { corpus, gateway }
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn gateway(&self) -> &LlmGateway {
        &self.gateway
    }

    pub async fn run(&self, query: &str, config: &PipelineConfig) -> Result<ChatExchange, PipelineError> {
        match config.mode {
            Mode::Rag => self.run_rag(query, config).await,
            Mode::RagFusion => self.run_rag_fusion(query, config).await,
        }
    }

    fn blank_exchange(&self, mode: Mode, query: &str) -> ChatExchange {
        ChatExchange {
            exchange_id: new_exchange_id(),
            mode,
            original_query: query.to_string(),
            generated_queries: Vec::new(),
            retrievals: Vec::new(),
            fusion: None,
            answer: String::new(),
            evidence: Vec::new(),
            timings: StageTimings::default(),
            created_at: Utc::now(),
            warnings: Vec::new(),
        }
    }

    async fn synthesize(
        &self,
        exchange: &mut ChatExchange,
        config: &PipelineConfig,
        received: Instant,
    ) -> Result<(), PipelineError> {
        let evidence: Vec<&DocumentChunk> = exchange
            .evidence
            .iter()
            .map(|id| {
                self.corpus
                    .chunk(id)
                    .ok_or_else(|| PipelineError::Corpus(format!("no chunk text for {id}")))
            })
            .collect::<Result<_, _>>()?;
        let (system_prompt, user_prompt) = render_synthesis_prompt(
            &config.synthesis_template,
            &exchange.original_query,
            &exchange.generated_queries,
            &evidence,
        );
        let request = LlmRequest {
            system_prompt,
            user_prompt,
            max_output_tokens: config.synthesis_max_tokens,
            temperature: config.temperature,
            call_site: CallSite::AnswerSynthesis,
        };
        let started = Instant::now();
        let result = self.gateway.complete(&request).await;
        exchange.timings.synthesis_ms = elapsed_ms(started);
        match result {
            Ok(response) => {
                exchange.answer = response.text;
                exchange.timings.total_ms = elapsed_ms(received);
                Ok(())
            }
            Err(source) => {
                exchange.timings.total_ms = elapsed_ms(received);
                Err(PipelineError::Gateway {
                    call_site: CallSite::AnswerSynthesis,
                    source,
                    partial: Box::new(exchange.clone()),
                })
            }
        }
    }

    /// Retrieve for the original query and answer from its top chunks.
    pub async fn run_rag(&self, query: &str, config: &PipelineConfig) -> Result<ChatExchange, PipelineError> {
        let received = Instant::now();
        if query.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        config.validate()?;
        let mut exchange = self.blank_exchange(Mode::Rag, query);

        let started = Instant::now();
        let retrieval = self.corpus.retrieve(query, config.per_query_top_n).await?;
        exchange.timings.retrieval_ms = elapsed_ms(started);
        exchange.evidence = retrieval
            .chunk_ids()
            .take(config.evidence_top_m)
            .map(String::from)
            .collect();
        exchange.retrievals.push(retrieval);

        self.synthesize(&mut exchange, config, received).await?;
        debug_assert!(validate_exchange(&exchange).is_empty());
        Ok(exchange)
    }

    /// Generate queries, retrieve for each, fuse, and answer from the fused top.
    pub async fn run_rag_fusion(
        &self,
        query: &str,
        config: &PipelineConfig,
    ) -> Result<ChatExchange, PipelineError> {
        let received = Instant::now();
        if query.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        config.validate()?;
        let mut exchange = self.blank_exchange(Mode::RagFusion, query);

        let (system_prompt, user_prompt) = render_query_generation_prompt(
            &config.query_generation_template,
            query,
            config.num_generated_queries,
        );
        let request = LlmRequest {
            system_prompt,
            user_prompt,
            max_output_tokens: config.query_generation_max_tokens,
            temperature: config.temperature,
            call_site: CallSite::QueryGeneration,
        };
        let started = Instant::now();
        let generated = self.gateway.complete(&request).await;
        exchange.timings.query_generation_ms = elapsed_ms(started);
        let generated = match generated {
            Ok(response) => response,
            Err(source) => {
                exchange.timings.total_ms = elapsed_ms(received);
                return Err(PipelineError::Gateway {
                    call_site: CallSite::QueryGeneration,
                    source,
                    partial: Box::new(exchange),
                });
            }
        };
        let parsed = parse_generated_queries(&generated.text, config.num_generated_queries)?;
        exchange.warnings.extend(parsed.warning);
        exchange.generated_queries = parsed.queries;

        let started = Instant::now();
        let mut search_queries: Vec<String> = Vec::new();
        if config.include_original_query_retrieval {
            search_queries.push(query.to_string());
        }
        search_queries.extend(exchange.generated_queries.iter().cloned());
        let corpus = &self.corpus;
        let top_n = config.per_query_top_n;
        let retrievals: Vec<RankedRetrieval> = stream::iter(search_queries)
            .map(|q| async move { corpus.retrieve(&q, top_n).await })
            .buffered(config.retrieval_parallelism)
            .try_collect()
            .await?;
        exchange.timings.retrieval_ms = elapsed_ms(started);

        let started = Instant::now();
        let fused: FusionResult = fusion::fuse(&retrievals, config.k)?;
        exchange.evidence = fusion::select_evidence(&fused, config.evidence_top_m);
        exchange.timings.fusion_ms = elapsed_ms(started);
        exchange.retrievals = retrievals;
        exchange.fusion = Some(fused);

        self.synthesize(&mut exchange, config, received).await?;
        debug_assert!(validate_exchange(&exchange).is_empty());
        Ok(exchange)
    }
}
