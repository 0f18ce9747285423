//! Record/replay of remote exchanges ("cassettes").
//!
//! A cassette file is JSONL: each line holds the canonical request JSON,
//! its content hash, a per-hash sequence number, and the raw response text.
//! Recording appends each exchange as it happens; replaying answers
//! requests purely from the file, keyed by content hash, consuming
//! responses for identical requests in recorded order. Replay makes every
//! model-dependent stage runnable with no network and byte-identical
//! output.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chat::{ChatRequest, ChatTransport, TransportError};

/// Whether a cassette captures live traffic or serves recorded traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    Record,
    Replay,
}

impl std::str::FromStr for CassetteMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(CassetteMode::Record),
            "replay" => Ok(CassetteMode::Replay),
            other => Err(format!("expected 'record' or 'replay', got '{other}'")),
        }
    }
}

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    /// SHA-256 of the canonical request JSON.
    pub key: String,
    /// 0-based occurrence counter among identical requests.
    pub seq: u64,
    /// The full request, for human inspection and re-keying.
    pub request: serde_json::Value,
    /// The raw response text.
    pub response: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CassetteError {
    #[error("cassette {path}: {message}")]
    File { path: String, message: String },
    #[error("no recorded response for request {key} (occurrence {seq})")]
    Miss { key: String, seq: u64 },
    #[error("live call failed while recording: {message}")]
    Live { message: String },
}

struct CassetteState {
    /// Replay queues per key, in recorded order.
    pending: BTreeMap<String, VecDeque<String>>,
    /// Next sequence number per key (both modes).
    seq: BTreeMap<String, u64>,
    /// Append handle (record mode).
    sink: Option<fs::File>,
}

/// A request/response tape shared by chat and embedding transports.
pub struct Cassette {
    mode: CassetteMode,
    path: PathBuf,
    state: Mutex<CassetteState>,
}

/// Content hash of the canonical (sorted-key) encoding of `request`.
pub fn request_key(request: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(request).unwrap_or_default();
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

impl Cassette {
    /// Opens `path` for recording, truncating any previous tape.
    pub fn record(path: &Path) -> Result<Self, CassetteError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| CassetteError::File {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        let sink = fs::File::create(path).map_err(|e| CassetteError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Cassette {
            mode: CassetteMode::Record,
            path: path.to_owned(),
            state: Mutex::new(CassetteState {
                pending: BTreeMap::new(),
                seq: BTreeMap::new(),
                sink: Some(sink),
            }),
        })
    }

    /// Loads `path` for replay.
    pub fn replay(path: &Path) -> Result<Self, CassetteError> {
        let text = fs::read_to_string(path).map_err(|e| CassetteError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut pending: BTreeMap<String, VecDeque<String>> = BTreeMap::new();
        for (index, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry =
                serde_json::from_str(line).map_err(|e| CassetteError::File {
                    path: path.display().to_string(),
                    message: format!("line {}: {e}", index + 1),
                })?;
            pending.entry(entry.key).or_default().push_back(entry.response);
        }
        Ok(Cassette {
            mode: CassetteMode::Replay,
            path: path.to_owned(),
            state: Mutex::new(CassetteState { pending, seq: BTreeMap::new(), sink: None }),
        })
    }

    /// Opens in the given mode.
    pub fn open(path: &Path, mode: CassetteMode) -> Result<Self, CassetteError> {
        match mode {
            CassetteMode::Record => Self::record(path),
            CassetteMode::Replay => Self::replay(path),
        }
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    /// Resolves one exchange: recorded tape in replay mode, `live` (then
    /// append) in record mode.
    pub fn exchange(
        &self,
        request: &serde_json::Value,
        live: &dyn Fn() -> Result<String, String>,
    ) -> Result<String, CassetteError> {
        let key = request_key(request);
        match self.mode {
            CassetteMode::Replay => {
                let mut state = self.state.lock().expect("cassette lock");
                let seq = state.seq.entry(key.clone()).or_insert(0);
                let current = *seq;
                *seq += 1;
                state
                    .pending
                    .get_mut(&key)
                    .and_then(|queue| queue.pop_front())
                    .ok_or(CassetteError::Miss { key, seq: current })
            }
            CassetteMode::Record => {
                let response = live().map_err(|message| CassetteError::Live { message })?;
                let mut state = self.state.lock().expect("cassette lock");
                let seq = state.seq.entry(key.clone()).or_insert(0);
                let entry = CassetteEntry {
                    key,
                    seq: *seq,
                    request: request.clone(),
                    response: response.clone(),
                };
                *seq += 1;
                let line = serde_json::to_string(&entry).map_err(|e| CassetteError::File {
                    path: self.path.display().to_string(),
                    message: e.to_string(),
                })?;
                let sink = state.sink.as_mut().expect("record mode keeps a sink");
                sink.write_all(line.as_bytes())
                    .and_then(|()| sink.write_all(b"\n"))
                    .and_then(|()| sink.flush())
                    .map_err(|e| CassetteError::File {
                        path: self.path.display().to_string(),
                        message: e.to_string(),
                    })?;
                Ok(response)
            }
        }
    }
}

/// Chat transport with a cassette in front of an optional live transport.
///
/// Replay mode needs no live transport at all; record mode forwards to
/// `inner` and tapes the reply.
pub struct CassetteChat {
    cassette: std::sync::Arc<Cassette>,
    inner: Option<Box<dyn ChatTransport>>,
}

impl CassetteChat {
    pub fn new(cassette: std::sync::Arc<Cassette>, inner: Option<Box<dyn ChatTransport>>) -> Self {
        CassetteChat { cassette, inner }
    }
}

/// The canonical cassette request envelope for chat calls.
pub fn chat_envelope(request: &ChatRequest) -> serde_json::Value {
    serde_json::json!({ "kind": "chat", "request": request })
}

impl ChatTransport for CassetteChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let envelope = chat_envelope(request);
        let live: Box<dyn Fn() -> Result<String, String>> = match &self.inner {
            Some(transport) => {
                Box::new(move || transport.complete(request).map_err(|e| e.to_string()))
            }
            None => Box::new(|| Err("no live transport behind the cassette".to_owned())),
        };
        self.cassette.exchange(&envelope, live.as_ref()).map_err(|e| match e {
            CassetteError::Miss { key, .. } => TransportError::CassetteMiss { key },
            other => TransportError::Exhausted { attempts: 1, message: other.to_string() },
        })
    }
}
