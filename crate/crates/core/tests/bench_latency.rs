mod common;

use std::path::PathBuf;
use std::sync::Arc;

use common::fixture_corpus;
use fusionrag_core::eval::{run_benchmark, BenchError, BenchSettings, RunOrder, TimingTable};
use fusionrag_core::llm::{LlmGateway, MockConfig, MockProvider};
use fusionrag_core::model::Mode;
use fusionrag_core::pipeline::{Pipeline, PipelineConfig};

async fn delayed_pipeline(ms: u64) -> Pipeline {
    Pipeline::new(
        fixture_corpus().await,
        LlmGateway::new(Arc::new(MockProvider::new(MockConfig::with_delay(ms))), 4),
    )
}

#[tokio::test]
async fn fusion_is_slower_by_about_one_call() {
    let pipeline = delayed_pipeline(40).await;
    for order in [RunOrder::Blocked, RunOrder::Interleaved] {
        let settings = BenchSettings {
            runs_per_mode: 3,
            order,
            ..BenchSettings::default()
        };
        let report = run_benchmark(
            &pipeline,
            "IM72D128 IP Rating",
            &settings,
            &PipelineConfig::for_mode(Mode::Rag),
            &PipelineConfig::default(),
        )
        .await
        .unwrap();
        assert_eq!(report.rag_runs.len(), 3);
        assert_eq!(report.fusion_runs.len(), 3);
        assert!(report.failures.is_empty());
        assert!(report.rag_runs.iter().all(|r| r.llm_calls == 1 && r.total_ms >= 40));
        assert!(report.fusion_runs.iter().all(|r| r.llm_calls == 2 && r.total_ms >= 80));
        let ratio = report.ratio.unwrap();
        assert!((1.6..=2.4).contains(&ratio), "{ratio}");
        assert!(report.violations().is_empty());
        assert!(report.query_generation_over_bound.is_empty());
    }
}

#[tokio::test]
async fn zero_runs_is_rejected() {
    let pipeline = delayed_pipeline(0).await;
    let settings = BenchSettings {
        runs_per_mode: 0,
        ..BenchSettings::default()
    };
    let err = run_benchmark(&pipeline, "q", &settings, &PipelineConfig::default(), &PipelineConfig::default())
        .await
        .unwrap_err();
    assert!(matches!(err, BenchError::NoRuns));
}

#[tokio::test]
async fn failed_runs_are_counted_and_excluded() {
    let pipeline = delayed_pipeline(0).await;
    let settings = BenchSettings {
        runs_per_mode: 2,
        ..BenchSettings::default()
    };
    // Punctuation only: the rag query has nothing to embed, while the
    // generated rephrasings still carry template words.
    let report = run_benchmark(&pipeline, "???", &settings, &PipelineConfig::for_mode(Mode::Rag), &PipelineConfig::default())
        .await
        .unwrap();
    assert_eq!(report.failure_count(), 2);
    assert!(report.failures.iter().all(|f| f.mode == Mode::Rag));
    assert_eq!(report.rag_avg_ms, None);
    assert!(report.fusion_avg_ms.is_some());
    assert_eq!(report.ratio, None);
}

#[test]
fn reference_timing_table_reproduces_its_footer() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/latency_reference.csv");
    let table = TimingTable::from_csv(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 10);
    // Hand sums: 346.19 / 10 and 195.21 / 10.
    assert!((table.fusion_average().unwrap() - 34.619).abs() < 1e-9);
    assert!((table.rag_average().unwrap() - 19.521).abs() < 1e-9);
    let text = table.render();
    let average = text.lines().find(|l| l.starts_with("Average")).unwrap();
    assert_eq!(average.split_whitespace().collect::<Vec<_>>(), ["Average", "34.62", "19.52"]);
    assert_eq!(text.lines().last().unwrap(), "Observation: RAG-Fusion takes 1.77 times longer.");
}
