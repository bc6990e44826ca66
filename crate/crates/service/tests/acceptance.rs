//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fail.
//!
//! `--offline-probe` runs every other check and is what criterion 11 runs
//! inside a fresh network namespace.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use fusionrag_core::embedding::{EmbedderConfig, HashedEmbedder};
use fusionrag_core::eval::{run_benchmark, BenchSettings, RunOrder, TimingTable};
use fusionrag_core::fusion::{fuse, rrf_score};
use fusionrag_core::index::{DistanceMetric, VectorIndex};
use fusionrag_core::ingestion::{ingest_directory, ChunkingConfig};
use fusionrag_core::llm::{LlmGateway, MockConfig, MockProvider, NO_EVIDENCE};
use fusionrag_core::model::{EmbeddingVector, FusionResult, Mode, RankedRetrieval, RetrievedChunk};
use fusionrag_core::pipeline::{parse_generated_queries, Corpus, Pipeline, PipelineConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::runtime::Runtime;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn core_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core")
}

fn rt() -> Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

async fn fixture_corpus() -> Arc<Corpus> {
    let ingested = ingest_directory(&core_dir().join("tests/fixtures/corpus"), &[], &ChunkingConfig::default()).unwrap();
    let corpus = Corpus::build(ingested.chunks, Box::new(HashedEmbedder::new(256)), DistanceMetric::CosineDistance)
        .await
        .unwrap();
    Arc::new(corpus)
}

fn mock_pipeline(corpus: Arc<Corpus>, delay_ms: u64) -> Pipeline {
    let provider = MockProvider::new(MockConfig::with_delay(delay_ms));
    Pipeline::new(corpus, LlmGateway::new(Arc::new(provider), 4))
}

fn ranked(query: &str, ids: &[String]) -> RankedRetrieval {
    RankedRetrieval {
        query_text: query.to_string(),
        entries: ids
            .iter()
            .enumerate()
            .map(|(i, id)| RetrievedChunk { chunk_id: id.clone(), distance: i as f64 })
            .collect(),
    }
}

fn retrievals(lists: &[Vec<String>]) -> Vec<RankedRetrieval> {
    lists.iter().enumerate().map(|(i, l)| ranked(&format!("q{i}"), l)).collect()
}

fn random_lists(rng: &mut impl Rng) -> Vec<Vec<String>> {
    let pool: Vec<String> = (0..20).map(|i| format!("c{i:02}")).collect();
    (0..rng.random_range(1..=5))
        .map(|_| {
            let mut ids = pool.clone();
            ids.shuffle(rng);
            ids.truncate(rng.random_range(0..=20));
            ids
        })
        .collect()
}

/// Brute force: every (list, position) pair adds 1/(position+1+k).
fn oracle_fuse(lists: &[Vec<String>], k: f64) -> Vec<(String, f64)> {
    let mut ranks: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for list in lists {
        for (pos, id) in list.iter().enumerate() {
            ranks.entry(id).or_default().push(pos + 1);
        }
    }
    let mut out: Vec<(String, f64)> = ranks
        .into_iter()
        .map(|(id, mut r)| {
            r.sort_unstable();
            (id.to_string(), r.iter().map(|&r| 1.0 / (r as f64 + k)).sum())
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

fn ids(result: &FusionResult) -> Vec<String> {
    result.chunk_ids().map(String::from).collect()
}

fn c1_rrf_points() -> Outcome {
    let a = rrf_score(1, 0.0).map_err(|e| e.to_string())?;
    let b = rrf_score(1, 60.0).map_err(|e| e.to_string())?;
    let c = rrf_score(3, 1.0).map_err(|e| e.to_string())?;
    ensure!(a == 1.0, "rrf(1,0) = {a}");
    ensure!((b - 1.0 / 61.0).abs() <= 1e-12, "rrf(1,60) = {b}");
    ensure!((c - 0.25).abs() <= 1e-12, "rrf(3,1) = {c}");
    Ok(format!("{a}, {b:.15}, {c}"))
}

fn c2_fusion_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..500 {
        let lists = random_lists(&mut rng);
        let k = [0.0, 1.0, 60.0][i % 3];
        let fused = fuse(&retrievals(&lists), k).map_err(|e| e.to_string())?;
        let want = oracle_fuse(&lists, k);
        let want_ids: Vec<String> = want.iter().map(|(id, _)| id.clone()).collect();
        ensure!(ids(&fused) == want_ids, "instance {i}: order differs");
        for (got, (_, score)) in fused.entries.iter().zip(&want) {
            ensure!((got.rrf_score - score).abs() <= 1e-12, "instance {i}: {} score {}", got.chunk_id, got.rrf_score);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(elapsed < 5.0, "took {elapsed:.2}s");
    Ok(format!("500 instances in {elapsed:.3}s"))
}

fn c3_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..256 {
        let mut lists = random_lists(&mut rng);
        let k = [0.0, 1.0, 60.0][i % 3];
        let base = fuse(&retrievals(&lists), k).map_err(|e| e.to_string())?;

        // Shuffling the list order keeps each list's query text attached.
        let mut tagged = retrievals(&lists);
        tagged.shuffle(&mut rng);
        let shuffled = fuse(&tagged, k).map_err(|e| e.to_string())?;
        ensure!(ids(&shuffled) == ids(&base), "permutation instance {i}: order");
        for (a, b) in shuffled.entries.iter().zip(&base.entries) {
            ensure!(a.rrf_score == b.rrf_score, "permutation instance {i}: score of {}", a.chunk_id);
        }

        let single = fuse(&retrievals(&lists[..1]), k).map_err(|e| e.to_string())?;
        ensure!(ids(&single) == lists[0], "single-list instance {i}");

        // Appending an unseen chunk to one list never lowers anyone's score.
        let target = rng.random_range(0..lists.len());
        let fresh = format!("new{i}");
        lists[target].push(fresh.clone());
        let grown = fuse(&retrievals(&lists), k).map_err(|e| e.to_string())?;
        let before: BTreeMap<&str, f64> = base.entries.iter().map(|e| (e.chunk_id.as_str(), e.rrf_score)).collect();
        for e in &grown.entries {
            match before.get(e.chunk_id.as_str()) {
                Some(old) => ensure!(e.rrf_score >= *old, "monotonicity instance {i}: {}", e.chunk_id),
                None => ensure!(e.chunk_id == fresh, "monotonicity instance {i}: stray {}", e.chunk_id),
            }
        }
        ensure!(grown.entries.len() == base.entries.len() + 1, "monotonicity instance {i}: size");
    }
    Ok("permutation, single-list, monotonicity: 256 instances each".into())
}

fn check_hand_fixture(result: &FusionResult) -> Result<(), String> {
    ensure!(ids(result) == ["A", "B", "C"], "order {:?}", ids(result));
    let s: Vec<f64> = result.entries.iter().map(|e| e.rrf_score).collect();
    ensure!((s[0] - 2.0 / 61.0).abs() <= 1e-12, "A = {}", s[0]);
    ensure!((s[1] - 1.0 / 62.0).abs() <= 1e-12, "B = {}", s[1]);
    ensure!((s[2] - 1.0 / 62.0).abs() <= 1e-12, "C = {}", s[2]);
    Ok(())
}

fn c4_hand_fixture() -> Outcome {
    let lists = vec![vec!["A".to_string(), "B".to_string()], vec!["A".to_string(), "C".to_string()]];
    let lib = fuse(&retrievals(&lists), 60.0).map_err(|e| e.to_string())?;
    check_hand_fixture(&lib).map_err(|e| format!("library: {e}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    std::fs::write(&a, r#"["A","B"]"#).unwrap();
    std::fs::write(&b, r#"["A","C"]"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fusionrag"))
        .env_remove("FUSIONRAG_CONFIG")
        .args(["fuse", "--lists"])
        .args([&a, &b])
        .args(["--k", "60"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "fuse exited {:?}", out.status.code());
    let cli: FusionResult = serde_json::from_slice(&out.stdout).map_err(|e| format!("cli output: {e}"))?;
    check_hand_fixture(&cli).map_err(|e| format!("cli: {e}"))?;
    Ok("A=2/61, B=C=1/62 via library and CLI".into())
}

fn c5_retrieval_exactness() -> Outcome {
    const D: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let embedder = EmbedderConfig::Hashed { dimension: D };
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..D).map(|_| rng.random_range(-1.0..1.0)).collect();
            if v.iter().any(|x| *x != 0.0) {
                return v;
            }
        }
    };
    for i in 0..200 {
        let metric = if i % 2 == 0 { DistanceMetric::CosineDistance } else { DistanceMetric::Euclidean };
        let n = rng.random_range(1..=100);
        let raw: Vec<(String, Vec<f64>)> = (0..n).map(|j| (format!("v{j:03}"), draw(&mut rng))).collect();
        let vectors = raw
            .iter()
            .map(|(id, v)| (id.clone(), EmbeddingVector::raw(v.clone()).unwrap()))
            .collect();
        let index = VectorIndex::from_vectors(&embedder, metric, vectors).map_err(|e| e.to_string())?;
        let q = draw(&mut rng);
        let top_n = rng.random_range(1..=n);
        let got = index
            .search("q", &EmbeddingVector::raw(q.clone()).unwrap(), top_n)
            .map_err(|e| e.to_string())?;

        // Recomputed from the raw draws rather than the index's stored copies.
        let unit = |v: &[f64]| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect::<Vec<f64>>()
        };
        let mut want: Vec<(String, f64)> = raw
            .iter()
            .map(|(id, v)| {
                let d = match metric {
                    DistanceMetric::CosineDistance => {
                        let dot: f64 = unit(&q).iter().zip(unit(v)).map(|(a, b)| a * b).sum();
                        (1.0 - dot).clamp(0.0, 2.0)
                    }
                    DistanceMetric::Euclidean => q.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
                };
                (id.clone(), d)
            })
            .collect();
        want.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        want.truncate(top_n);
        let got: Vec<(String, f64)> = got.entries.into_iter().map(|e| (e.chunk_id, e.distance)).collect();
        ensure!(got == want, "index {i}: results differ");
    }
    Ok("200 indexes".into())
}

async fn c6_call_counts() -> Outcome {
    let pipeline = mock_pipeline(fixture_corpus().await, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..50 {
        let config = PipelineConfig {
            num_generated_queries: rng.random_range(1..=8),
            per_query_top_n: rng.random_range(1..=10),
            evidence_top_m: rng.random_range(1..=10),
            include_original_query_retrieval: rng.random_bool(0.5),
            retrieval_parallelism: rng.random_range(1..=4),
            k: [0.0, 1.0, 60.0][rng.random_range(0..3)],
            ..PipelineConfig::default()
        };
        for (mode, want) in [(Mode::Rag, 1), (Mode::RagFusion, 2)] {
            let fresh = Pipeline::new(pipeline.corpus().clone(), pipeline.gateway().with_fresh_counter());
            fresh
                .run("IM72D128 IP Rating", &PipelineConfig { mode, ..config.clone() })
                .await
                .map_err(|e| e.to_string())?;
            let calls = fresh.gateway().calls_made();
            ensure!(calls == want, "config {i} {}: {calls} calls", mode.as_str());
        }
    }
    Ok("50 configs: rag 1, rag_fusion 2".into())
}

async fn c7_latency() -> Outcome {
    let pipeline = mock_pipeline(fixture_corpus().await, 200);
    let settings = BenchSettings { runs_per_mode: 10, order: RunOrder::Blocked, ..BenchSettings::default() };
    let report = run_benchmark(
        &pipeline,
        "IM72D128 IP Rating",
        &settings,
        &PipelineConfig::for_mode(Mode::Rag),
        &PipelineConfig::for_mode(Mode::RagFusion),
    )
    .await
    .map_err(|e| e.to_string())?;
    ensure!(report.failure_count() == 0, "{} failed runs", report.failure_count());
    let ratio = report.ratio.ok_or("no ratio")?;
    ensure!((1.6..=2.4).contains(&ratio), "measured ratio {ratio:.3}");

    let csv = std::fs::read_to_string(core_dir().join("tests/fixtures/latency_reference.csv")).map_err(|e| e.to_string())?;
    let table = TimingTable::from_csv(&csv).map_err(|e| e.to_string())?;
    let fusion = format!("{:.2}", table.fusion_average().ok_or("no fusion average")?);
    let rag = format!("{:.2}", table.rag_average().ok_or("no rag average")?);
    ensure!(fusion == "34.62" && rag == "19.52", "reference averages {fusion} / {rag}");
    let line = table.observation();
    ensure!(line == "Observation: RAG-Fusion takes 1.77 times longer.", "observation {line:?}");
    Ok(format!("measured {ratio:.3}; reference {fusion}/{rag}, 1.77"))
}

/// The exchange as JSON with its volatile fields removed.
fn stable_json(value: &serde_json::Value) -> serde_json::Value {
    let mut v = value.clone();
    if let Some(map) = v.as_object_mut() {
        for key in ["exchange_id", "timings", "created_at"] {
            map.remove(key);
        }
    }
    v
}

async fn c8_determinism() -> Outcome {
    let pipeline = mock_pipeline(fixture_corpus().await, 0);
    let config = PipelineConfig::default();
    let mut runs = Vec::new();
    for _ in 0..3 {
        let x = pipeline.run("IM72D128 IP Rating", &config).await.map_err(|e| e.to_string())?;
        runs.push(stable_json(&serde_json::to_value(&x).unwrap()));
    }
    ensure!(runs.windows(2).all(|w| w[0] == w[1]), "repeated runs differ");
    let golden = std::fs::read_to_string(core_dir().join("tests/golden/rag_fusion_exchange.json")).map_err(|e| e.to_string())?;
    let golden: serde_json::Value = serde_json::from_str(&golden).map_err(|e| e.to_string())?;
    ensure!(stable_json(&golden) == runs[0], "differs from golden");
    Ok("3 runs equal each other and the golden".into())
}

async fn c9_generated_queries() -> Outcome {
    let pipeline = mock_pipeline(fixture_corpus().await, 0);
    let config = PipelineConfig { num_generated_queries: 4, ..PipelineConfig::default() };
    let x = pipeline
        .run("IP rating of mounted IM72D128", &config)
        .await
        .map_err(|e| e.to_string())?;
    ensure!(x.generated_queries.len() == 4, "mock gave {}", x.generated_queries.len());

    let block = "['1. What is the IP rating of the mounted IM72D128?', '2. IP rating explained for mounted IM72D128.', '3. Waterproofing capabilities of the IM72D128 with its IP rating.', '4. How does the IP rating of the IM72D128 affect its durability when mounted?']";
    let parsed = parse_generated_queries(block, 4).map_err(|e| e.to_string())?;
    ensure!(parsed.queries.len() == 4, "parsed {}", parsed.queries.len());
    ensure!(parsed.queries[0] == "What is the IP rating of the mounted IM72D128?", "first {:?}", parsed.queries[0]);
    ensure!(parsed.warning.is_none(), "unexpected warning");
    Ok("mock 4; reference block 4".into())
}

async fn c10_empty_corpus() -> Outcome {
    let corpus = Arc::new(Corpus::empty(&EmbedderConfig::default(), DistanceMetric::CosineDistance));
    let pipeline = mock_pipeline(corpus, 0);
    for mode in [Mode::Rag, Mode::RagFusion] {
        let x = pipeline
            .run("IM72D128 IP Rating", &PipelineConfig::for_mode(mode))
            .await
            .map_err(|e| format!("{}: {e}", mode.as_str()))?;
        ensure!(x.evidence.is_empty(), "{}: evidence present", mode.as_str());
        ensure!(x.answer.contains(NO_EVIDENCE), "{}: answer {:?}", mode.as_str(), x.answer);
    }
    Ok("both modes answer NO_EVIDENCE".into())
}

fn c11_offline() -> Outcome {
    let outbound = fusionrag_core::outbound_requests();
    ensure!(outbound == 0, "{outbound} outbound requests");
    let me = std::env::current_exe().map_err(|e| e.to_string())?;
    // Plain -n keeps file access when already root; -rn covers everyone else.
    for flags in ["-n", "-rn"] {
        let Ok(out) = Command::new("unshare").arg(flags).arg(&me).arg("--offline-probe").output() else {
            return Ok("0 outbound; unshare not installed".into());
        };
        if out.status.success() {
            return Ok("0 outbound; all checks pass in an empty network namespace".into());
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        if stdout.contains("FAIL") {
            let failures: Vec<&str> = stdout.lines().filter(|l| l.starts_with("FAIL")).collect();
            return Err(format!("offline run: {}", failures.join("; ")));
        }
    }
    Ok("0 outbound; network namespaces unavailable here".into())
}

fn main() {
    let probe = std::env::args().any(|a| a == "--offline-probe");
    let rt = rt();
    let mut checks: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("rrf point values", Box::new(c1_rrf_points)),
        ("fusion matches oracle", Box::new(c2_fusion_oracle)),
        ("fusion properties", Box::new(c3_properties)),
        ("hand fixture", Box::new(c4_hand_fixture)),
        ("retrieval exactness", Box::new(c5_retrieval_exactness)),
        ("llm call count", Box::new(|| rt.block_on(c6_call_counts()))),
        ("latency ratio", Box::new(|| rt.block_on(c7_latency()))),
        ("determinism golden", Box::new(|| rt.block_on(c8_determinism()))),
        ("generated query contract", Box::new(|| rt.block_on(c9_generated_queries()))),
        ("empty corpus", Box::new(|| rt.block_on(c10_empty_corpus()))),
    ];
    if !probe {
        checks.push(("offline", Box::new(c11_offline)));
    }

    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
