//! Latency benchmark and human rubric scoring.

mod bench;
mod rubric;
mod table;

pub use bench::{
    run_benchmark, BenchError, BenchReport, BenchRun, BenchSettings, FailedRun, RunOrder,
    DEFAULT_QUERY_GENERATION_BOUND_MS,
};
pub use rubric::{
    rubric_summary, DimensionMeans, ExchangeLookup, ModeSummary, RubricError, RubricScore,
    RubricStore, RubricSummary, StoredRubric, RUBRIC_FILE,
};
pub use table::{TableError, TimingRow, TimingTable};
