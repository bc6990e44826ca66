use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{Mode, StageTimings};
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError};

pub const DEFAULT_QUERY_GENERATION_BOUND_MS: u64 = 5_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOrder {
    /// All RAG runs, then all fusion runs.
    #[default]
    Blocked,
    /// rag, fusion, rag, fusion, ...
    Interleaved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSettings {
    pub runs_per_mode: usize,
    pub order: RunOrder,
    pub query_generation_bound_ms: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            runs_per_mode: 10,
            order: RunOrder::Blocked,
            query_generation_bound_ms: DEFAULT_QUERY_GENERATION_BOUND_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub run_index: usize,
    pub mode: Mode,
    /// Wall time from receiving the query to having the answer, floored to
    /// whole milliseconds and at least 1.
    pub total_ms: u64,
    pub timings: StageTimings,
    pub query: String,
    pub llm_calls: u64,
    pub exchange_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub run_index: usize,
    pub mode: Mode,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub query: String,
    pub runs_per_mode: usize,
    pub order: RunOrder,
    pub rag_runs: Vec<BenchRun>,
    pub fusion_runs: Vec<BenchRun>,
    pub failures: Vec<FailedRun>,
    /// `None` when every run of the mode failed.
    pub rag_avg_ms: Option<f64>,
    pub fusion_avg_ms: Option<f64>,
    /// fusion_avg_ms / rag_avg_ms.
    pub ratio: Option<f64>,
    pub query_generation_bound_ms: u64,
    /// Fusion run indices whose query generation exceeded the bound.
    pub query_generation_over_bound: Vec<usize>,
    pub started_at: DateTime<Utc>,
}

fn mean_ms(runs: &[BenchRun]) -> Option<f64> {
    if runs.is_empty() {
        return None;
    }
    Some(runs.iter().map(|r| r.total_ms as f64).sum::<f64>() / runs.len() as f64)
}

impl BenchReport {
    fn finish(&mut self) {
        self.rag_avg_ms = mean_ms(&self.rag_runs);
        self.fusion_avg_ms = mean_ms(&self.fusion_runs);
        self.ratio = match (self.fusion_avg_ms, self.rag_avg_ms) {
            (Some(f), Some(r)) if r > 0.0 => Some(f / r),
            _ => None,
        };
        self.query_generation_over_bound = self
            .fusion_runs
            .iter()
            .filter(|r| r.timings.query_generation_ms > self.query_generation_bound_ms)
            .map(|r| r.run_index)
            .collect();
    }

    /// Averages and ratio that disagree with the stored runs.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() <= 0.5,
            (None, None) => true,
            _ => false,
        };
        if !close(self.rag_avg_ms, mean_ms(&self.rag_runs)) {
            out.push("rag_avg_ms does not match its runs".into());
        }
        if !close(self.fusion_avg_ms, mean_ms(&self.fusion_runs)) {
            out.push("fusion_avg_ms does not match its runs".into());
        }
        for run in self.rag_runs.iter().chain(&self.fusion_runs) {
            if run.total_ms == 0 {
                out.push(format!("run {} has zero total_ms", run.run_index));
            }
        }
        out
    }

    pub fn failure_count(&self) -> usize {
        self.failures.len()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("runs_per_mode must be positive")]
    NoRuns,
    #[error("benchmark query is empty")]
    EmptyQuery,
    #[error("{mode} config is invalid: {source}")]
    Config {
        mode: Mode,
        #[source]
        source: PipelineError,
    },
}

/// Runs the query `runs_per_mode` times through each pipeline, one run at a
/// time. Failed runs are recorded and left out of the averages.
pub async fn run_benchmark(
    pipeline: &Pipeline,
    query: &str,
    settings: &BenchSettings,
    rag_config: &PipelineConfig,
    fusion_config: &PipelineConfig,
) -> Result<BenchReport, BenchError> {
    if settings.runs_per_mode == 0 {
        return Err(BenchError::NoRuns);
    }
    if query.trim().is_empty() {
        return Err(BenchError::EmptyQuery);
    }
    let rag_config = PipelineConfig {
        mode: Mode::Rag,
        ..rag_config.clone()
    };
    let fusion_config = PipelineConfig {
        mode: Mode::RagFusion,
        ..fusion_config.clone()
    };
    for cfg in [&rag_config, &fusion_config] {
        cfg.validate().map_err(|source| BenchError::Config {
            mode: cfg.mode,
            source,
        })?;
    }

    let schedule: Vec<(usize, &PipelineConfig)> = match settings.order {
        RunOrder::Blocked => (0..settings.runs_per_mode)
            .map(|i| (i, &rag_config))
            .chain((0..settings.runs_per_mode).map(|i| (i, &fusion_config)))
            .collect(),
        RunOrder::Interleaved => (0..settings.runs_per_mode)
            .flat_map(|i| [(i, &rag_config), (i, &fusion_config)])
            .collect(),
    };

    let mut report = BenchReport {
        query: query.to_string(),
        runs_per_mode: settings.runs_per_mode,
        order: settings.order,
        rag_runs: Vec::new(),
        fusion_runs: Vec::new(),
        failures: Vec::new(),
        rag_avg_ms: None,
        fusion_avg_ms: None,
        ratio: None,
        query_generation_bound_ms: settings.query_generation_bound_ms,
        query_generation_over_bound: Vec::new(),
        started_at: Utc::now(),
    };

    for (run_index, config) in schedule {
        let counted = Pipeline::new(pipeline.corpus().clone(), pipeline.gateway().with_fresh_counter());
        let received = Instant::now();
        let outcome = counted.run(query, config).await;
        let total_ms = (received.elapsed().as_millis() as u64).max(1);
        match outcome {
            Ok(exchange) => {
                let run = BenchRun {
                    run_index,
                    mode: config.mode,
                    total_ms,
                    timings: exchange.timings,
                    query: query.to_string(),
                    llm_calls: counted.gateway().calls_made(),
                    exchange_id: exchange.exchange_id,
                };
                match config.mode {
                    Mode::Rag => report.rag_runs.push(run),
                    Mode::RagFusion => report.fusion_runs.push(run),
                }
            }
            Err(e) => {
                tracing::warn!(run_index, mode = %config.mode, error = %e, "bench run failed");
                report.failures.push(FailedRun {
                    run_index,
                    mode: config.mode,
                    error: e.to_string(),
                });
            }
        }
    }
    report.finish();
    Ok(report)
}
