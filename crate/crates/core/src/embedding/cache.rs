//! Append-only on-disk embedding cache, one JSON-lines file per provider.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub values: Vec<f64>,
    pub created_at: DateTime<Utc>,
}

impl CacheEntry {
    pub fn new(key: String, values: Vec<f64>) -> Self {
        CacheEntry {
            key,
            values,
            created_at: Utc::now(),
        }
    }
}

/// SHA-256 over length-prefixed provider id, model id and the exact text bytes,
/// as 64 lowercase hex characters.
pub fn cache_key(provider_id: &str, model_id: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [provider_id, model_id, text] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

type Shard = HashMap<String, Vec<f64>>;

/// Concurrent readers, serialized appends. Appends also take an advisory lock
/// on `<provider_id>.lock` so separate processes do not interleave lines.
#[derive(Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
    shards: RwLock<HashMap<String, Shard>>,
    writer: Mutex<()>,
}

impl EmbeddingCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(EmbeddingCache {
            dir,
            shards: RwLock::new(HashMap::new()),
            writer: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn file_for(&self, provider_id: &str) -> Result<PathBuf> {
        if provider_id.is_empty()
            || !provider_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::validation(format!(
                "provider id {provider_id:?} is not usable as a cache file name"
            )));
        }
        Ok(self.dir.join(format!("{provider_id}.jsonl")))
    }

    fn load_shard(&self, provider_id: &str) -> Result<Shard> {
        let path = self.file_for(provider_id)?;
        let mut shard = Shard::new();
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(shard),
            Err(e) => return Err(e.into()),
        };
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<CacheEntry>(&line) {
                Ok(entry) => {
                    shard.insert(entry.key, entry.values);
                }
                Err(e) => log::warn!("{}:{}: skipping unreadable cache line: {e}", path.display(), n + 1),
            }
        }
        Ok(shard)
    }

    fn ensure_loaded(&self, provider_id: &str) -> Result<()> {
        if self.shards.read().unwrap().contains_key(provider_id) {
            return Ok(());
        }
        let shard = self.load_shard(provider_id)?;
        self.shards
            .write()
            .unwrap()
            .entry(provider_id.to_string())
            .or_insert(shard);
        Ok(())
    }

    pub fn get(&self, provider_id: &str, key: &str) -> Result<Option<Vec<f64>>> {
        self.ensure_loaded(provider_id)?;
        Ok(self.shards.read().unwrap()[provider_id].get(key).cloned())
    }

    pub fn len(&self, provider_id: &str) -> Result<usize> {
        self.ensure_loaded(provider_id)?;
        Ok(self.shards.read().unwrap()[provider_id].len())
    }

    pub fn append(&self, provider_id: &str, entries: &[CacheEntry]) -> Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        self.ensure_loaded(provider_id)?;
        let _guard = self.writer.lock().unwrap();
        let path = self.file_for(provider_id)?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path.with_extension("lock"))?;
        lock.lock()?;
        let result = (|| -> Result<()> {
            let file = OpenOptions::new().create(true).append(true).open(&path)?;
            let mut out = BufWriter::new(file);
            for entry in entries {
                serde_json::to_writer(&mut out, entry)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
            Ok(())
        })();
        lock.unlock()?;
        result?;

        let mut shards = self.shards.write().unwrap();
        let shard = shards.entry(provider_id.to_string()).or_default();
        for entry in entries {
            shard.insert(entry.key.clone(), entry.values.clone());
        }
        Ok(())
    }
}
