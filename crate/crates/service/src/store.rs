//! One JSON file per exchange, named by its ULID.

use std::io;
use std::path::{Path, PathBuf};

use fusionrag_core::eval::ExchangeLookup;
use fusionrag_core::model::{ChatExchange, Mode};

#[derive(Debug, Clone)]
pub struct ExchangeStore {
    dir: PathBuf,
}

/// ULIDs are Crockford base32; anything else would escape the directory or
/// cannot name a stored exchange.
fn is_exchange_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric())
}

impl ExchangeStore {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn save(&self, exchange: &ChatExchange) -> io::Result<PathBuf> {
        if !is_exchange_id(&exchange.exchange_id) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "bad exchange id"));
        }
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path_for(&exchange.exchange_id);
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_string_pretty(exchange).expect("exchange serializes");
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn get(&self, id: &str) -> io::Result<Option<ChatExchange>> {
        if !is_exchange_id(id) {
            return Ok(None);
        }
        match std::fs::read_to_string(self.path_for(id)) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Newest first; ULIDs sort by creation time.
    pub fn list(&self, limit: usize) -> io::Result<Vec<ChatExchange>> {
        let mut ids: Vec<String> = match std::fs::read_dir(&self.dir) {
            Ok(entries) => entries
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let name = e.file_name().into_string().ok()?;
                    let id = name.strip_suffix(".json")?;
                    is_exchange_id(id).then(|| id.to_string())
                })
                .collect(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        ids.sort_unstable_by(|a, b| b.cmp(a));
        ids.truncate(limit);
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            out.extend(self.get(&id)?);
        }
        Ok(out)
    }
}

impl ExchangeLookup for ExchangeStore {
    fn exchange_mode(&self, exchange_id: &str) -> Option<Mode> {
        self.get(exchange_id).ok().flatten().map(|x| x.mode)
    }
}
