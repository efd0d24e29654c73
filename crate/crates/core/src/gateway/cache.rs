use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{Backend, CompletionRequest, CompletionResult, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Serve stored entries; on a miss call the inner backend and store.
    Record,
    /// Serve stored entries only; a miss is an error.
    Replay,
    /// Always call the inner backend; never read or write entries.
    Passthrough,
}

/// Digest-keyed response store. Concurrent reads, exclusive writes.
#[derive(Debug)]
pub struct ReplayCache {
    mode: CacheMode,
    entries: RwLock<BTreeMap<String, CompletionResult>>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    digest: String,
    result: CompletionResult,
}

impl ReplayCache {
    pub fn new(mode: CacheMode) -> Self {
        Self {
            mode,
            entries: RwLock::new(BTreeMap::new()),
        }
    }

    /// Loads a cache file. A missing file yields an empty cache.
    pub fn load(path: &Path, mode: CacheMode) -> Result<Self, GatewayError> {
        let cache = Self::new(mode);
        if !path.exists() {
            return Ok(cache);
        }
        let reader = BufReader::new(fs::File::open(path)?);
        {
            let mut entries = cache.entries.write().unwrap_or_else(|e| e.into_inner());
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: Line = serde_json::from_str(&line).map_err(|e| {
                    GatewayError::CacheFile(format!("{}:{}: {e}", path.display(), i + 1))
                })?;
                entries.insert(parsed.digest, parsed.result);
            }
        }
        Ok(cache)
    }

    /// Writes one JSON object per line, sorted by digest, so identical
    /// contents always produce identical bytes.
    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let mut out = BufWriter::new(fs::File::create(path)?);
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner());
        for (digest, result) in entries.iter() {
            let line = Line {
                digest: digest.clone(),
                result: result.clone(),
            };
            serde_json::to_writer(&mut out, &line)
                .map_err(|e| GatewayError::CacheFile(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &str) -> Option<CompletionResult> {
        self.entries
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(digest)
            .cloned()
    }

    fn insert(&self, digest: String, result: CompletionResult) {
        self.entries
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(digest, result);
    }
}

pub fn cached_complete(
    cache: &ReplayCache,
    inner: &dyn Backend,
    request: &CompletionRequest,
) -> Result<CompletionResult, GatewayError> {
    request.validate()?;
    match cache.mode {
        CacheMode::Passthrough => inner.complete(request),
        CacheMode::Replay => {
            let digest = request.digest();
            cache.get(&digest).ok_or(GatewayError::CacheMiss(digest))
        }
        CacheMode::Record => {
            let digest = request.digest();
            // first stored response wins so that a replay reproduces the
            // recorded run exactly, even for repeated identical requests
            if let Some(hit) = cache.get(&digest) {
                return Ok(hit);
            }
            let result = inner.complete(request)?;
            cache.insert(digest, result.clone());
            Ok(result)
        }
    }
}

/// A backend wrapped by a shared [`ReplayCache`].
#[derive(Debug)]
pub struct CachedBackend<B> {
    cache: Arc<ReplayCache>,
    inner: B,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(cache: Arc<ReplayCache>, inner: B) -> Self {
        Self { cache, inner }
    }

    pub fn cache(&self) -> &Arc<ReplayCache> {
        &self.cache
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        cached_complete(&self.cache, &self.inner, request)
    }
}
