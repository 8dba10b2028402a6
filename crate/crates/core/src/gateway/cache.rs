//! Content-addressed response cache.
//!
//! On disk, each entry lives in `<dir>/<key[..2]>/<key>.json`: a pretty-printed
//! JSON object with `key`, `provider`, `model`, `decoding`, `messages`
//! (role/content list), `prefix` and `response`. Files are written via
//! temp-file + rename, so a crash never leaves a torn entry behind. The
//! credential is never part of an entry.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::{DecodingParams, GatewayError, Message};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub provider: String,
    pub model: String,
    pub decoding: DecodingParams,
    pub messages: Vec<Message>,
    pub prefix: Option<String>,
    pub response: String,
}

/// In-memory map backed by an optional on-disk directory.
#[derive(Debug)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, String>>,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn new(dir: Option<PathBuf>) -> Result<ResponseCache, GatewayError> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| GatewayError::Cache(format!("{}: {e}", d.display())))?;
        }
        Ok(ResponseCache {
            dir,
            memory: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(dir: &Path, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("xx");
        dir.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>, GatewayError> {
        if let Some(text) = self.memory.read().get(key) {
            return Ok(Some(text.clone()));
        }
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let path = Self::path_for(dir, key);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry = match serde_json::from_str(&raw) {
            Ok(entry) => entry,
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                return Ok(None);
            }
        };
        if entry.key != key {
            log::warn!("cache entry {} carries key {}, ignoring", path.display(), entry.key);
            return Ok(None);
        }
        self.memory.write().insert(key.to_string(), entry.response.clone());
        Ok(Some(entry.response))
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), GatewayError> {
        let _guard = self.write_lock.lock();
        if let Some(dir) = &self.dir {
            let path = Self::path_for(dir, &entry.key);
            let body = serde_json::to_string_pretty(entry).expect("cache entry serializes");
            crate::io::write_atomic(&path, format!("{body}\n").as_bytes())
                .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        }
        self.memory.write().insert(entry.key.clone(), entry.response.clone());
        Ok(())
    }

    /// Number of entries visible in memory (disk entries count once read).
    pub fn len_in_memory(&self) -> usize {
        self.memory.read().len()
    }

    /// Number of entry files on disk.
    pub fn len_on_disk(&self) -> usize {
        let Some(dir) = &self.dir else { return 0 };
        walk_count(dir)
    }
}

fn walk_count(dir: &Path) -> usize {
    let Ok(entries) = fs::read_dir(dir) else { return 0 };
    entries
        .filter_map(Result::ok)
        .map(|e| {
            let p = e.path();
            if p.is_dir() {
                walk_count(&p)
            } else if p.extension().is_some_and(|x| x == "json") {
                1
            } else {
                0
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: &str, response: &str) -> CacheEntry {
        CacheEntry {
            key: key.to_string(),
            provider: "mock".into(),
            model: "m".into(),
            decoding: DecodingParams {
                temperature: 0.0,
                max_tokens: None,
            },
            messages: vec![Message {
                role: "system".into(),
                content: "s".into(),
            }],
            prefix: None,
            response: response.to_string(),
        }
    }

    #[test]
    fn disk_entries_survive_a_new_instance() {
        let dir = tempfile::tempdir().unwrap();
        let c = ResponseCache::new(Some(dir.path().to_path_buf())).unwrap();
        c.put(&entry("abcdef", "hello")).unwrap();
        assert_eq!(c.len_on_disk(), 1);
        let c2 = ResponseCache::new(Some(dir.path().to_path_buf())).unwrap();
        assert_eq!(c2.get("abcdef").unwrap().as_deref(), Some("hello"));
        assert!(dir.path().join("ab").join("abcdef.json").exists());
    }

    #[test]
    fn memory_only() {
        let c = ResponseCache::new(None).unwrap();
        assert_eq!(c.get("k").unwrap(), None);
        c.put(&entry("k", "v")).unwrap();
        assert_eq!(c.get("k").unwrap().as_deref(), Some("v"));
    }

    #[test]
    fn corrupt_entry_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("zz")).unwrap();
        fs::write(dir.path().join("zz").join("zzzz.json"), "{not json").unwrap();
        let c = ResponseCache::new(Some(dir.path().to_path_buf())).unwrap();
        assert_eq!(c.get("zzzz").unwrap(), None);
    }
}
