use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use fusionrag_core::embedding::EmbedError;
use fusionrag_core::eval::{run_benchmark, BenchSettings, RubricError, RubricScore, RubricStore, RunOrder, TimingTable};
use fusionrag_core::fusion::fuse;
use fusionrag_core::llm::LlmGateway;
use fusionrag_core::model::{ChatExchange, Mode, RankedRetrieval, RetrievedChunk};
use fusionrag_core::pipeline::{Pipeline, PipelineError};

use crate::api::{router, AppState};
use crate::config::ServiceConfig;
use crate::ops;
use crate::store::ExchangeStore;

#[derive(Debug, Parser)]
#[command(name = "fusionrag", version, about = "Multi-query RAG with reciprocal rank fusion")]
pub struct Cli {
    /// Service config JSON; falls back to $FUSIONRAG_CONFIG, then defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk and index a directory of documents into the data directory.
    Ingest {
        dir: PathBuf,
        /// Include pattern, repeatable. Defaults to **/*.md and **/*.txt.
        #[arg(long = "glob")]
        globs: Vec<String>,
    },
    /// Answer one query.
    Ask {
        query: String,
        #[arg(long, default_value = "rag-fusion", value_parser = parse_mode)]
        mode: Mode,
        #[arg(long)]
        show_evidence: bool,
        /// Print the full exchange as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Time the same query through both pipelines.
    Bench {
        query: String,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_parser = parse_order)]
        order: Option<RunOrder>,
        #[arg(long)]
        json: bool,
    },
    /// Record or summarize human scores.
    Rubric {
        #[command(subcommand)]
        action: RubricCommand,
    },
    /// Run the HTTP API.
    Serve,
    /// Fuse ranked lists read from JSON files and print the result.
    Fuse {
        #[arg(long, num_args = 1.., required = true)]
        lists: Vec<PathBuf>,
        #[arg(long, default_value_t = fusionrag_core::fusion::DEFAULT_K)]
        k: f64,
    },
    /// Render a timing CSV (Run, RAG-Fusion Time (s), RAG Time (s)) as a table.
    Table { csv: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum RubricCommand {
    Add {
        exchange_id: String,
        #[arg(long)]
        accuracy: u8,
        #[arg(long)]
        relevance: u8,
        #[arg(long)]
        comprehensiveness: u8,
        #[arg(long, default_value = "cli")]
        rater: String,
        #[arg(long, default_value = "")]
        notes: String,
    },
    Summary {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: fusionrag_core::model::UnknownMode| e.to_string())
}

fn parse_order(s: &str) -> Result<RunOrder, String> {
    match s {
        "blocked" => Ok(RunOrder::Blocked),
        "interleaved" => Ok(RunOrder::Interleaved),
        other => Err(format!("unknown order '{other}' (expected blocked or interleaved)")),
    }
}

/// Exit 1 for bad input, 2 for provider or IO trouble.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn validation(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::EmptyQuery
            | PipelineError::InvalidConfig(_)
            | PipelineError::Embedding {
                source: EmbedError::EmptyText | EmbedError::NoTokens,
                ..
            } => validation(e),
            _ => runtime(e),
        }
    }
}

pub async fn run(cli: Cli) -> Result<(), Failure> {
    let config = ServiceConfig::discover(cli.config.as_deref()).map_err(validation)?;
    match cli.command {
        Command::Ingest { dir, globs } => ingest(&config, &dir, &globs).await,
        Command::Ask {
            query,
            mode,
            show_evidence,
            json,
        } => ask(&config, &query, mode, show_evidence, json).await,
        Command::Bench {
            query,
            runs,
            order,
            json,
        } => bench(&config, &query, runs, order, json).await,
        Command::Rubric { action } => rubric(&config, action),
        Command::Serve => serve(config).await,
        Command::Fuse { lists, k } => fuse_files(&lists, k),
        Command::Table { csv } => table(&csv),
    }
}

async fn ingest(config: &ServiceConfig, dir: &Path, globs: &[String]) -> Result<(), Failure> {
    let (_, summary) = ops::ingest_for(config, dir, globs, &config.chunking)
        .await
        .map_err(|e| {
            for fe in e.file_errors() {
                eprintln!("skipped {}: {}", fe.path, fe.message);
            }
            if e.is_validation() {
                validation(e)
            } else {
                runtime(e)
            }
        })?;
    for fe in &summary.errors {
        eprintln!("skipped {}: {}", fe.path, fe.message);
    }
    println!(
        "{}: {} documents, {} chunks",
        summary.corpus_id, summary.document_count, summary.chunk_count
    );
    Ok(())
}

async fn pipeline_for(config: &ServiceConfig) -> Result<Pipeline, Failure> {
    let (corpus, _) = ops::open_corpus(config).await.map_err(runtime)?.ok_or_else(|| {
        Failure::Runtime(format!(
            "no index under {}; run `fusionrag ingest <dir>` or set corpus_root",
            config.corpus_dir().display()
        ))
    })?;
    Ok(Pipeline::new(Arc::new(corpus), LlmGateway::from_config(&config.llm)))
}

fn print_exchange(exchange: &ChatExchange, show_evidence: bool) {
    println!("{}", exchange.answer);
    if !exchange.generated_queries.is_empty() {
        println!("\nGenerated queries:");
        for (i, q) in exchange.generated_queries.iter().enumerate() {
            println!("  {}. {q}", i + 1);
        }
    }
    for w in &exchange.warnings {
        println!("\nwarning: {w}");
    }
    if show_evidence {
        println!("\nEvidence:");
        match &exchange.fusion {
            Some(fusion) => {
                println!("  {:<4} {:<32} {:>10}  contributors", "rank", "chunk_id", "rrf_score");
                for (i, e) in fusion.entries.iter().filter(|e| exchange.evidence.contains(&e.chunk_id)).enumerate() {
                    println!(
                        "  {:<4} {:<32} {:>10.6}  {}",
                        i + 1,
                        e.chunk_id,
                        e.rrf_score,
                        e.contributors.len()
                    );
                }
            }
            None => {
                println!("  {:<4} {:<32} {:>10}", "rank", "chunk_id", "distance");
                let retrieval = exchange.retrievals.first().map(|r| r.entries.as_slice()).unwrap_or_default();
                for (i, e) in retrieval.iter().take(exchange.evidence.len()).enumerate() {
                    println!("  {:<4} {:<32} {:>10.6}", i + 1, e.chunk_id, e.distance);
                }
            }
        }
        if exchange.evidence.is_empty() {
            println!("  (none)");
        }
    }
    let t = &exchange.timings;
    println!(
        "\nTimings (ms): query_generation={} retrieval={} fusion={} synthesis={} total={}",
        t.query_generation_ms, t.retrieval_ms, t.fusion_ms, t.synthesis_ms, t.total_ms
    );
    println!("Exchange: {}", exchange.exchange_id);
}

async fn ask(config: &ServiceConfig, query: &str, mode: Mode, show_evidence: bool, json: bool) -> Result<(), Failure> {
    let pipeline = pipeline_for(config).await?;
    let exchange = pipeline.run(query, config.pipeline_config(mode)).await?;
    ExchangeStore::new(config.exchanges_dir()).save(&exchange).map_err(runtime)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&exchange).expect("exchange serializes"));
    } else {
        print_exchange(&exchange, show_evidence);
    }
    Ok(())
}

async fn bench(
    config: &ServiceConfig,
    query: &str,
    runs: Option<usize>,
    order: Option<RunOrder>,
    json: bool,
) -> Result<(), Failure> {
    let pipeline = pipeline_for(config).await?;
    let settings = BenchSettings {
        runs_per_mode: runs.unwrap_or(config.bench.runs_per_mode),
        order: order.unwrap_or(config.bench.order),
        ..config.bench.clone()
    };
    let report = run_benchmark(&pipeline, query, &settings, &config.rag, &config.rag_fusion)
        .await
        .map_err(validation)?;
    let path = config.bench_report_path();
    std::fs::create_dir_all(&config.data_dir).map_err(runtime)?;
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes")).map_err(runtime)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        return Ok(());
    }
    print!("{}", TimingTable::from_report(&report).render());
    if !report.failures.is_empty() {
        println!("{} runs failed and are excluded from the averages:", report.failures.len());
        for f in &report.failures {
            println!("  {} run {}: {}", f.mode, f.run_index + 1, f.error);
        }
    }
    for i in &report.query_generation_over_bound {
        println!(
            "rag_fusion run {}: query generation exceeded {} ms",
            i + 1,
            report.query_generation_bound_ms
        );
    }
    println!("Report written to {}", path.display());
    Ok(())
}

fn rubric(config: &ServiceConfig, action: RubricCommand) -> Result<(), Failure> {
    let store = RubricStore::open(&config.rubric_path()).map_err(runtime)?;
    match action {
        RubricCommand::Add {
            exchange_id,
            accuracy,
            relevance,
            comprehensiveness,
            rater,
            notes,
        } => {
            std::fs::create_dir_all(&config.data_dir).map_err(runtime)?;
            let score = RubricScore {
                exchange_id,
                rater,
                accuracy,
                relevance,
                comprehensiveness,
                notes,
            };
            let exchanges = ExchangeStore::new(config.exchanges_dir());
            let stored = store.record(score, &exchanges).map_err(|e| match e {
                RubricError::Validation(_) | RubricError::UnknownExchange(_) => validation(e),
                _ => runtime(e),
            })?;
            println!("stored {} (revision {})", stored.id, stored.revision);
        }
        RubricCommand::Summary { mode } => {
            println!(
                "{}",
                serde_json::to_string_pretty(&store.summary(mode)).expect("summary serializes")
            );
        }
    }
    Ok(())
}

async fn serve(config: ServiceConfig) -> Result<(), Failure> {
    let gateway = LlmGateway::from_config(&config.llm);
    let opened = ops::open_corpus(&config).await.map_err(runtime)?;
    let bind = config.bind.clone();
    let state = Arc::new(AppState::new(config, gateway).map_err(runtime)?);
    match opened {
        Some((corpus, id)) => state.set_corpus(corpus, id).await,
        None => tracing::warn!("no corpus yet; chat returns 503 until POST /api/ingest"),
    }
    let listener = tokio::net::TcpListener::bind(&bind).await.map_err(runtime)?;
    println!("listening on http://{}", listener.local_addr().map_err(runtime)?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(runtime)
}

/// A ranked-list file is either a retrieval object or a bare array of
/// chunk ids in rank order (the file stem becomes the query text).
fn read_list(path: &Path) -> Result<RankedRetrieval, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    if let Ok(ids) = serde_json::from_str::<Vec<String>>(&text) {
        let query_text = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(RankedRetrieval {
            query_text,
            entries: ids
                .into_iter()
                .enumerate()
                .map(|(i, chunk_id)| RetrievedChunk {
                    chunk_id,
                    distance: i as f64,
                })
                .collect(),
        });
    }
    serde_json::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))
}

fn fuse_files(paths: &[PathBuf], k: f64) -> Result<(), Failure> {
    let lists = paths.iter().map(|p| read_list(p)).collect::<Result<Vec<_>, _>>()?;
    let fused = fuse(&lists, k).map_err(validation)?;
    println!("{}", serde_json::to_string_pretty(&fused).expect("fusion serializes"));
    Ok(())
}

fn table(path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let table = TimingTable::from_csv(&text).map_err(validation)?;
    print!("{}", table.render());
    Ok(())
}
