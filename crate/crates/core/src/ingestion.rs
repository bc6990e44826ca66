//! Document loading and chunking.
//!
//! Input is plain text or Markdown. A file `foo.md` may carry a sidecar
//! `foo.md.meta.json` with string fields such as `doc_type`, `title` and
//! `product`; every string field ends up in the chunk metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::model::DocumentChunk;

pub const META_SUFFIX: &str = ".meta.json";
pub const MANIFEST_FILE: &str = "corpus.manifest.json";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const UNKNOWN_DOC_TYPE: &str = "unknown";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("corpus root {0} does not exist or is not a directory")]
    MissingRoot(PathBuf),
    #[error("invalid include pattern '{pattern}': {message}")]
    BadGlob { pattern: String, message: String },
    #[error("no documents loaded under {root} ({} file errors)", errors.len())]
    EmptyCorpus { root: PathBuf, errors: Vec<FileError> },
    #[error("document {0} is empty after trimming whitespace")]
    EmptyDocument(String),
    #[error("invalid chunking config: {0}")]
    BadConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed chunk record at {path}:{line}: {message}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// A single file that failed to load; loading continues past it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitOn {
    Paragraph,
    Sentence,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    pub max_chars: usize,
    pub overlap_chars: usize,
    pub split_on: SplitOn,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            max_chars: 1200,
            overlap_chars: 120,
            split_on: SplitOn::Paragraph,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.max_chars == 0 {
            return Err(IngestError::BadConfig("max_chars must be positive".into()));
        }
        if self.overlap_chars >= self.max_chars {
            return Err(IngestError::BadConfig(format!(
                "overlap_chars ({}) must be below max_chars ({})",
                self.overlap_chars, self.max_chars
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadedDocument {
    pub doc_id: String,
    pub raw_text: String,
    pub metadata: BTreeMap<String, String>,
}

impl LoadedDocument {
    pub fn doc_type(&self) -> &str {
        self.metadata
            .get("doc_type")
            .map(String::as_str)
            .unwrap_or(UNKNOWN_DOC_TYPE)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub documents: Vec<LoadedDocument>,
    pub errors: Vec<FileError>,
}

fn build_globs(patterns: &[String]) -> Result<GlobSet, IngestError> {
    let mut builder = GlobSetBuilder::new();
    let defaults = ["**/*.md".to_string(), "**/*.txt".to_string()];
    let patterns = if patterns.is_empty() { &defaults[..] } else { patterns };
    for pattern in patterns {
        let glob = Glob::new(pattern).map_err(|e| IngestError::BadGlob {
            pattern: pattern.clone(),
            message: e.to_string(),
        })?;
        builder.add(glob);
    }
    builder.build().map_err(|e| IngestError::BadGlob {
        pattern: patterns.join(","),
        message: e.to_string(),
    })
}

fn read_sidecar(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(META_SUFFIX);
    let sidecar = PathBuf::from(sidecar);
    if !sidecar.exists() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(&sidecar).map_err(|e| format!("sidecar: {e}"))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("sidecar: {e}"))?;
    let object = value
        .as_object()
        .ok_or_else(|| "sidecar: expected a JSON object".to_string())?;
    Ok(object
        .iter()
        .filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_string())))
        .collect())
}

/// Loads every file under `root` matching one of `include_globs` (defaults
/// to Markdown and text files). Files are visited in sorted path order.
pub fn load_documents(root: &Path, include_globs: &[String]) -> Result<LoadReport, IngestError> {
    if !root.is_dir() {
        return Err(IngestError::MissingRoot(root.to_path_buf()));
    }
    let globs = build_globs(include_globs)?;
    let mut report = LoadReport::default();

    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                report.errors.push(FileError {
                    path: e
                        .path()
                        .map(|p| p.display().to_string())
                        .unwrap_or_default(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let relative = path.strip_prefix(root).unwrap_or(path);
        let doc_id = relative
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if doc_id.ends_with(META_SUFFIX) || !globs.is_match(relative) {
            continue;
        }

        let raw_text = match fs::read(path) {
            Ok(bytes) => match String::from_utf8(bytes) {
                Ok(text) => text,
                Err(_) => {
                    report.errors.push(FileError {
                        path: doc_id,
                        message: "file is not valid UTF-8".into(),
                    });
                    continue;
                }
            },
            Err(e) => {
                report.errors.push(FileError {
                    path: doc_id,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let mut metadata = match read_sidecar(path) {
            Ok(m) => m,
            Err(message) => {
                report.errors.push(FileError {
                    path: doc_id,
                    message,
                });
                continue;
            }
        };
        metadata
            .entry("doc_type".into())
            .or_insert_with(|| UNKNOWN_DOC_TYPE.into());
        metadata.entry("title".into()).or_insert_with(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| doc_id.clone())
        });
        report.documents.push(LoadedDocument {
            doc_id,
            raw_text,
            metadata,
        });
    }

    if report.documents.is_empty() {
        return Err(IngestError::EmptyCorpus {
            root: root.to_path_buf(),
            errors: report.errors,
        });
    }
    Ok(report)
}

/// Splits `raw_text` into chunks with ids `doc_id#position`.
///
/// `fixed` cuts windows of `max_chars` characters advancing by
/// `max_chars - overlap_chars`. `paragraph` and `sentence` pack whole units
/// greedily; the next chunk starts with the trailing units of the previous one
/// that fit within `overlap_chars`. A unit longer than `max_chars` is cut into
/// fixed windows.
pub fn chunk_text(
    doc_id: &str,
    raw_text: &str,
    config: &ChunkingConfig,
) -> Result<Vec<DocumentChunk>, IngestError> {
    config.validate()?;
    if raw_text.trim().is_empty() {
        return Err(IngestError::EmptyDocument(doc_id.to_string()));
    }
    let pieces = match config.split_on {
        SplitOn::Fixed => fixed_windows(raw_text, config.max_chars, config.overlap_chars),
        SplitOn::Paragraph => pack_units(&paragraphs(raw_text), "\n\n", config),
        SplitOn::Sentence => pack_units(&sentences(raw_text), " ", config),
    };
    Ok(pieces
        .into_iter()
        .filter(|p| !p.trim().is_empty())
        .enumerate()
        .map(|(position, text)| DocumentChunk {
            chunk_id: DocumentChunk::chunk_id_for(doc_id, position),
            doc_id: doc_id.to_string(),
            text,
            position,
            metadata: BTreeMap::new(),
        })
        .collect())
}

/// [`chunk_text`] plus the document's metadata on every chunk.
pub fn chunk_document(
    doc: &LoadedDocument,
    config: &ChunkingConfig,
) -> Result<Vec<DocumentChunk>, IngestError> {
    let mut chunks = chunk_text(&doc.doc_id, &doc.raw_text, config)?;
    for chunk in &mut chunks {
        chunk.metadata = doc.metadata.clone();
    }
    Ok(chunks)
}

fn fixed_windows(text: &str, max_chars: usize, overlap: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let step = max_chars - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + max_chars).min(chars.len());
        out.push(chars[start..end].iter().collect());
        if end == chars.len() {
            break;
        }
        start += step;
    }
    out
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut units = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                units.push(current.join("\n").trim().to_string());
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        units.push(current.join("\n").trim().to_string());
    }
    units
}

fn sentences(text: &str) -> Vec<String> {
    let mut units = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        let terminator = matches!(c, '.' | '!' | '?');
        let boundary = chars.peek().is_none_or(|n| n.is_whitespace());
        if terminator && boundary {
            let unit = current.trim();
            if !unit.is_empty() {
                units.push(unit.to_string());
            }
            current.clear();
        }
    }
    let rest = current.trim();
    if !rest.is_empty() {
        units.push(rest.to_string());
    }
    units
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

fn pack_units(units: &[String], separator: &str, config: &ChunkingConfig) -> Vec<String> {
    let sep_len = char_len(separator);
    // Oversized units are cut first so every unit fits on its own.
    let units: Vec<String> = units
        .iter()
        .flat_map(|u| {
            if char_len(u) > config.max_chars {
                fixed_windows(u, config.max_chars, config.overlap_chars)
            } else {
                vec![u.clone()]
            }
        })
        .collect();

    let joined_len = |parts: &[&str]| -> usize {
        parts.iter().map(|p| char_len(p)).sum::<usize>() + sep_len * parts.len().saturating_sub(1)
    };

    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut fresh = 0usize;
    for unit in &units {
        let mut candidate = current.clone();
        candidate.push(unit);
        if joined_len(&candidate) <= config.max_chars {
            current = candidate;
            fresh += 1;
            continue;
        }
        if fresh > 0 {
            out.push(current.join(separator));
        }
        // Carry trailing units as overlap, then drop from the front until the
        // new unit fits.
        let mut carry: Vec<&str> = Vec::new();
        if fresh > 0 {
            for prev in current.iter().rev() {
                let mut trial = vec![*prev];
                trial.extend(carry.iter().copied());
                if joined_len(&trial) > config.overlap_chars {
                    break;
                }
                carry = trial;
            }
        }
        carry.push(unit);
        while joined_len(&carry) > config.max_chars {
            carry.remove(0);
        }
        current = carry;
        fresh = 1;
    }
    if fresh > 0 {
        out.push(current.join(separator));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestDocument {
    pub doc_id: String,
    pub source_path: String,
    pub doc_type: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub documents: Vec<ManifestDocument>,
    pub chunking: ChunkingConfig,
    pub chunk_count: usize,
}

#[derive(Debug, Clone)]
pub struct IngestedCorpus {
    pub manifest: CorpusManifest,
    pub chunks: Vec<DocumentChunk>,
    pub errors: Vec<FileError>,
}

/// Load, chunk and describe a corpus. Documents that chunk to an error are
/// reported in `errors` and left out of the manifest.
pub fn ingest_directory(
    root: &Path,
    include_globs: &[String],
    chunking: &ChunkingConfig,
) -> Result<IngestedCorpus, IngestError> {
    chunking.validate()?;
    let report = load_documents(root, include_globs)?;
    let mut errors = report.errors;
    let mut documents = Vec::new();
    let mut chunks = Vec::new();
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(chunking).expect("config serializes"));

    for doc in &report.documents {
        match chunk_document(doc, chunking) {
            Ok(doc_chunks) => {
                hasher.update(doc.doc_id.as_bytes());
                hasher.update([0]);
                hasher.update(doc.raw_text.as_bytes());
                hasher.update([0]);
                documents.push(ManifestDocument {
                    doc_id: doc.doc_id.clone(),
                    source_path: root.join(&doc.doc_id).display().to_string(),
                    doc_type: doc.doc_type().to_string(),
                    title: doc.metadata.get("title").cloned().unwrap_or_default(),
                });
                chunks.extend(doc_chunks);
            }
            Err(e) => errors.push(FileError {
                path: doc.doc_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    if documents.is_empty() {
        return Err(IngestError::EmptyCorpus {
            root: root.to_path_buf(),
            errors,
        });
    }

    let corpus_id = format!("corpus-{}", hex::encode(&hasher.finalize()[..6]));
    Ok(IngestedCorpus {
        manifest: CorpusManifest {
            corpus_id,
            documents,
            chunking: chunking.clone(),
            chunk_count: chunks.len(),
        },
        chunks,
        errors,
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `corpus.manifest.json` and `chunks.jsonl` into `dir`.
pub fn write_corpus(dir: &Path, corpus: &IngestedCorpus) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = serde_json::to_string_pretty(&corpus.manifest).expect("manifest serializes");
    fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))?;

    let chunks_path = dir.join(CHUNKS_FILE);
    let mut out = io::BufWriter::new(fs::File::create(&chunks_path).map_err(io_err(&chunks_path))?);
    for chunk in &corpus.chunks {
        serde_json::to_writer(&mut out, chunk).expect("chunk serializes");
        out.write_all(b"\n").map_err(io_err(&chunks_path))?;
    }
    out.flush().map_err(io_err(&chunks_path))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest, IngestError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| IngestError::BadRecord {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn read_chunks(dir: &Path) -> Result<Vec<DocumentChunk>, IngestError> {
    let path = dir.join(CHUNKS_FILE);
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let mut chunks = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk = serde_json::from_str(&line).map_err(|e| IngestError::BadRecord {
            path: path.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        chunks.push(chunk);
    }
    Ok(chunks)
}
