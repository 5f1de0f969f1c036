//! Append-only JSONL completion cache.
//!
//! Layout: `<cache_dir>/completions.jsonl`, one [`CacheEntry`] per line. The
//! whole file is indexed in memory on open. An unparseable final line with no
//! newline is a torn write from an interrupted run and is truncated away; any
//! other bad line is reported as corruption.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Decoding, TeacherError};
use crate::digest::Digest;

pub const CACHE_FILE: &str = "completions.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    backend_id: String,
    prompt_digest: Digest,
    temperature_bits: u64,
    max_output_tokens: u32,
}

impl CacheKey {
    pub fn new(backend_id: &str, prompt_digest: Digest, decoding: Decoding) -> Self {
        CacheKey {
            backend_id: backend_id.to_string(),
            prompt_digest,
            // +0.0 folds -0.0 into 0.0
            temperature_bits: (decoding.temperature + 0.0).to_bits(),
            max_output_tokens: decoding.max_output_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub backend_id: String,
    pub prompt_digest: Digest,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

impl CacheEntry {
    fn key(&self) -> CacheKey {
        CacheKey::new(
            &self.backend_id,
            self.prompt_digest,
            Decoding {
                temperature: self.temperature,
                max_output_tokens: self.max_output_tokens,
            },
        )
    }
}

struct Inner {
    index: HashMap<CacheKey, CacheEntry>,
    file: Option<File>,
}

pub struct CompletionCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl CompletionCache {
    pub fn in_memory() -> Self {
        CompletionCache {
            path: None,
            inner: Mutex::new(Inner {
                index: HashMap::new(),
                file: None,
            }),
        }
    }

    /// Open (creating if needed) the cache stored in `dir`.
    pub fn open(dir: &Path) -> Result<Self, TeacherError> {
        let path = dir.join(CACHE_FILE);
        let io_err = |e: std::io::Error| TeacherError::CacheIo {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(io_err)?;
        let mut index = HashMap::new();
        if path.exists() {
            let content = fs::read_to_string(&path).map_err(io_err)?;
            let mut good_len = 0usize;
            let mut offset = 0usize;
            let mut unterminated_tail = false;
            for (i, raw) in content.split_inclusive('\n').enumerate() {
                offset += raw.len();
                let terminated = raw.ends_with('\n');
                let line = raw.trim_end_matches(['\n', '\r']);
                if line.trim().is_empty() {
                    good_len = offset;
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(line) {
                    Ok(entry) => {
                        good_len = offset;
                        unterminated_tail = !terminated;
                        index.entry(entry.key()).or_insert(entry);
                    }
                    Err(e) if !terminated => {
                        tracing::warn!(path = %path.display(), line = i + 1, error = %e, "dropping torn cache line");
                    }
                    Err(e) => {
                        return Err(TeacherError::CacheCorrupt {
                            path: path.display().to_string(),
                            line: i + 1,
                            reason: e.to_string(),
                        })
                    }
                }
            }
            if good_len < content.len() {
                let f = OpenOptions::new().write(true).open(&path).map_err(io_err)?;
                f.set_len(good_len as u64).map_err(io_err)?;
            } else if unterminated_tail {
                let mut f = OpenOptions::new()
                    .append(true)
                    .open(&path)
                    .map_err(io_err)?;
                f.write_all(b"\n").map_err(io_err)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        Ok(CompletionCache {
            path: Some(path),
            inner: Mutex::new(Inner {
                index,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache poisoned").index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<CacheEntry> {
        self.inner
            .lock()
            .expect("cache poisoned")
            .index
            .get(key)
            .cloned()
    }

    /// Persist then index. The first entry for a key wins.
    pub fn insert(&self, entry: CacheEntry) -> Result<(), TeacherError> {
        let mut inner = self.inner.lock().expect("cache poisoned");
        let key = entry.key();
        if inner.index.contains_key(&key) {
            return Ok(());
        }
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| TeacherError::CacheIo {
                    path: self
                        .path
                        .as_ref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_default(),
                    message: e.to_string(),
                })?;
        }
        inner.index.insert(key, entry);
        Ok(())
    }
}
