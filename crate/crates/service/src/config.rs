use std::path::{Path, PathBuf};

use fusionrag_core::embedding::EmbedderConfig;
use fusionrag_core::eval::BenchSettings;
use fusionrag_core::index::DistanceMetric;
use fusionrag_core::ingestion::ChunkingConfig;
use fusionrag_core::llm::LlmConfig;
use fusionrag_core::model::Mode;
use fusionrag_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "FUSIONRAG_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path} is invalid: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("config field {field} points to {path}, which does not exist")]
    MissingPath { field: &'static str, path: PathBuf },
    #[error("config field {field} is invalid: {message}")]
    Invalid { field: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Source documents ingested at startup when no saved index exists.
    pub corpus_root: Option<PathBuf>,
    pub include_globs: Vec<String>,
    pub chunking: ChunkingConfig,
    pub embedder: EmbedderConfig,
    pub metric: DistanceMetric,
    pub llm: LlmConfig,
    pub rag: PipelineConfig,
    pub rag_fusion: PipelineConfig,
    pub bench: BenchSettings,
    pub bind: String,
    pub cors_origins: Vec<String>,
    pub max_concurrent_chats: usize,
    /// Holds the saved corpus, exchanges, rubric scores and bench reports.
    pub data_dir: PathBuf,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            corpus_root: None,
            include_globs: Vec::new(),
            chunking: ChunkingConfig::default(),
            embedder: EmbedderConfig::default(),
            metric: DistanceMetric::default(),
            llm: LlmConfig::default(),
            rag: PipelineConfig::for_mode(Mode::Rag),
            rag_fusion: PipelineConfig::for_mode(Mode::RagFusion),
            bench: BenchSettings::default(),
            bind: "127.0.0.1:8080".into(),
            cors_origins: vec!["http://localhost:5173".into()],
            max_concurrent_chats: 8,
            data_dir: PathBuf::from("data"),
        }
    }
}

impl ServiceConfig {
    /// Reads the file named by `explicit`, else `$FUSIONRAG_CONFIG`, else
    /// returns defaults (mock provider, hashed embedder).
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => Self::load(&path),
            None => {
                let config = Self::default();
                config.check()?;
                Ok(config)
            }
        }
    }

    /// Relative paths inside the file resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.data_dir = base.join(&config.data_dir);
        config.corpus_root = config.corpus_root.map(|p| base.join(p));
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if let Some(root) = &self.corpus_root {
            if !root.is_dir() {
                return Err(ConfigError::MissingPath {
                    field: "corpus_root",
                    path: root.clone(),
                });
            }
        }
        for (field, cfg, mode) in [
            ("rag", &self.rag, Mode::Rag),
            ("rag_fusion", &self.rag_fusion, Mode::RagFusion),
        ] {
            if cfg.mode != mode {
                return Err(ConfigError::Invalid {
                    field,
                    message: format!("mode must be {mode}"),
                });
            }
            cfg.validate().map_err(|e| ConfigError::Invalid {
                field,
                message: e.to_string(),
            })?;
        }
        self.chunking.validate().map_err(|e| ConfigError::Invalid {
            field: "chunking",
            message: e.to_string(),
        })?;
        if self.max_concurrent_chats == 0 {
            return Err(ConfigError::Invalid {
                field: "max_concurrent_chats",
                message: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn pipeline_config(&self, mode: Mode) -> &PipelineConfig {
        match mode {
            Mode::Rag => &self.rag,
            Mode::RagFusion => &self.rag_fusion,
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.data_dir.join("corpus")
    }

    pub fn exchanges_dir(&self) -> PathBuf {
        self.data_dir.join("exchanges")
    }

    pub fn rubric_path(&self) -> PathBuf {
        self.data_dir.join(fusionrag_core::eval::RUBRIC_FILE)
    }

    pub fn bench_report_path(&self) -> PathBuf {
        self.data_dir.join("bench_report.json")
    }
}
