use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_response, prompt_hash, BackendError, Label};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache file {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub(super) enum FetchError {
    Backend(BackendError),
    Cache(CacheError),
}

/// `(model_id, sha256(rendered prompt))`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub model_id: String,
    pub prompt_hash: String,
}

impl CacheKey {
    pub fn new(model_id: &str, prompt: &str) -> Self {
        CacheKey {
            model_id: model_id.to_string(),
            prompt_hash: prompt_hash(prompt),
        }
    }

    pub fn as_string(&self) -> String {
        format!("{}:{}", self.model_id, self.prompt_hash)
    }
}

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model_id: String,
    pub prompt_hash: String,
    pub raw_response: String,
    /// `None` when the reply had no parseable verdict.
    pub label: Option<Label>,
    pub timestamp: String,
}

type Slot = Arc<Mutex<Option<String>>>;

/// Append-only reply cache, optionally persisted as JSONL.
///
/// Lookups for the same key are serialized through a per-key slot, so
/// concurrent callers never query the backend twice for one key. The first
/// entry recorded for a key wins; later duplicates in the file are ignored.
#[derive(Debug)]
pub struct ScoreCache {
    slots: Mutex<HashMap<String, Slot>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        ScoreCache {
            slots: Mutex::new(HashMap::new()),
            file: None,
        }
    }

    /// Load `path` if it exists and append new entries to it.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let io_err = |source| CacheError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut slots = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io_err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| CacheError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                slots
                    .entry(entry.key)
                    .or_insert_with(|| Arc::new(Mutex::new(Some(entry.raw_response))));
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        Ok(ScoreCache {
            slots: Mutex::new(slots),
            file: Some((path.to_path_buf(), Mutex::new(file))),
        })
    }

    /// Number of cached replies.
    pub fn len(&self) -> usize {
        let slots = self.slots.lock().expect("cache lock poisoned");
        slots
            .values()
            .filter(|s| s.lock().expect("slot lock poisoned").is_some())
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<String> {
        let slot = self.slots.lock().expect("cache lock poisoned").get(&key.as_string()).cloned()?;
        let value = slot.lock().expect("slot lock poisoned").clone();
        value
    }

    /// Return the cached reply for `key`, or call `fetch` and record its reply.
    /// The flag is true on a cache hit.
    pub(super) fn get_or_fetch<F>(&self, key: &CacheKey, fetch: F) -> Result<(String, bool), FetchError>
    where
        F: FnOnce() -> Result<String, BackendError>,
    {
        let key_string = key.as_string();
        let slot = {
            let mut slots = self.slots.lock().expect("cache lock poisoned");
            slots.entry(key_string.clone()).or_default().clone()
        };
        let mut guard = slot.lock().expect("slot lock poisoned");
        if let Some(raw) = guard.as_ref() {
            return Ok((raw.clone(), true));
        }
        let raw = fetch().map_err(FetchError::Backend)?;
        if let Some((path, file)) = &self.file {
            let entry = CacheEntry {
                key: key_string,
                model_id: key.model_id.clone(),
                prompt_hash: key.prompt_hash.clone(),
                raw_response: raw.clone(),
                label: parse_response(&raw).ok().map(|v| v.label),
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            };
            let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
            line.push('\n');
            let mut file = file.lock().expect("cache file lock poisoned");
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| {
                    FetchError::Cache(CacheError::Io {
                        path: path.clone(),
                        source,
                    })
                })?;
        }
        *guard = Some(raw.clone());
        Ok((raw, false))
    }
}
