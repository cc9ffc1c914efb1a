//! Persistent transcript cache: an append-only JSONL record file plus an
//! offset index, keyed by hash(prompt digest || canonical params).
//!
//! The cache lets an experiment be re-run (or replayed entirely offline)
//! without re-spending provider tokens. Readers may share the cache across
//! threads; writes are serialized internally.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GenerationOutput, GenerationRequest, Provider, ProviderError};

/// One cached completion, self-describing for audit purposes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub digest: String,
    pub params: String,
    pub output: GenerationOutput,
    pub unix_ms: u64,
}

fn cache_key(digest: &str, canonical_params: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(digest.as_bytes());
    hasher.update([0u8]);
    hasher.update(canonical_params.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

struct CacheState {
    entries: BTreeMap<String, TranscriptEntry>,
    writer: Option<File>,
}

/// On-disk transcript store. `open` loads or creates the record file;
/// `open_replay` loads an existing file read-only and treats misses as errors.
pub struct TranscriptCache {
    path: PathBuf,
    state: Mutex<CacheState>,
    replay: bool,
}

impl TranscriptCache {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let entries = Self::load_entries(path)?;
        let writer = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            state: Mutex::new(CacheState {
                entries,
                writer: Some(writer),
            }),
            replay: false,
        })
    }

    /// Replay mode: every lookup must hit; misses surface as `ReplayMiss`.
    pub fn open_replay(path: &Path) -> std::io::Result<Self> {
        let entries = Self::load_entries(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            state: Mutex::new(CacheState {
                entries,
                writer: None,
            }),
            replay: true,
        })
    }

    fn load_entries(path: &Path) -> std::io::Result<BTreeMap<String, TranscriptEntry>> {
        let mut entries = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("corrupt transcript entry: {e}"),
                    )
                })?;
                entries.insert(entry.key.clone(), entry);
            }
        }
        Ok(entries)
    }

    pub fn is_replay(&self) -> bool {
        self.replay
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, request: &GenerationRequest) -> Option<GenerationOutput> {
        let key = cache_key(&request.prompt.digest, &request.params.canonical());
        self.state
            .lock()
            .unwrap()
            .entries
            .get(&key)
            .map(|e| e.output.clone())
    }

    /// Inserts under lock; an existing entry for the key wins, so concurrent
    /// misses on the same request never produce duplicates.
    pub fn put(
        &self,
        request: &GenerationRequest,
        output: &GenerationOutput,
    ) -> std::io::Result<()> {
        let key = cache_key(&request.prompt.digest, &request.params.canonical());
        let mut state = self.state.lock().unwrap();
        if state.entries.contains_key(&key) {
            return Ok(());
        }
        let entry = TranscriptEntry {
            key: key.clone(),
            digest: request.prompt.digest.clone(),
            params: request.params.canonical(),
            output: output.clone(),
            unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        if let Some(writer) = state.writer.as_mut() {
            writeln!(writer, "{}", serde_json::to_string(&entry)?)?;
            writer.flush()?;
        }
        state.entries.insert(key, entry);
        Ok(())
    }

    /// Writes the key -> byte-offset index beside the record file, for
    /// external tooling that wants random access without a full scan.
    pub fn write_index(&self) -> std::io::Result<PathBuf> {
        let index_path = self.path.with_extension("idx.json");
        let mut offsets: BTreeMap<String, u64> = BTreeMap::new();
        if self.path.exists() {
            let mut reader = BufReader::new(File::open(&self.path)?);
            let mut line = String::new();
            loop {
                let offset = reader.stream_position()?;
                line.clear();
                if reader.read_line(&mut line)? == 0 {
                    break;
                }
                if line.trim().is_empty() {
                    continue;
                }
                if let Ok(entry) = serde_json::from_str::<TranscriptEntry>(&line) {
                    offsets.entry(entry.key).or_insert(offset);
                }
            }
        }
        let mut f = File::create(&index_path)?;
        serde_json::to_writer_pretty(&mut f, &offsets)?;
        f.write_all(b"\n")?;
        Ok(index_path)
    }
}

/// Provider wrapper that consults the transcript cache before calling the
/// inner provider. In replay mode there is no inner provider and a miss is
/// an error.
pub struct CachedProvider<P> {
    cache: std::sync::Arc<TranscriptCache>,
    inner: Option<P>,
}

impl<P: Provider> CachedProvider<P> {
    pub fn new(cache: std::sync::Arc<TranscriptCache>, inner: P) -> Self {
        Self {
            cache,
            inner: Some(inner),
        }
    }
}

impl CachedProvider<super::MockProvider> {
    /// Replay-only provider over a warmed cache.
    pub fn replay(cache: std::sync::Arc<TranscriptCache>) -> Self {
        Self { cache, inner: None }
    }
}

impl<P: Provider> Provider for CachedProvider<P> {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationOutput, ProviderError> {
        if let Some(hit) = self.cache.get(request) {
            return Ok(hit);
        }
        if self.cache.is_replay() || self.inner.is_none() {
            return Err(ProviderError::ReplayMiss {
                digest: request.prompt.digest.clone(),
            });
        }
        let output = self.inner.as_ref().unwrap().complete(request)?;
        self.cache
            .put(request, &output)
            .map_err(|e| ProviderError::ProviderUnavailable(format!("cache write failed: {e}")))?;
        Ok(output)
    }

    fn id(&self) -> &str {
        match &self.inner {
            Some(p) => p.id(),
            None => "replay",
        }
    }
}
