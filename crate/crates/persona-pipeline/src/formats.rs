//! Line-delimited artifact formats and atomic file IO.
//!
//! Every inter-stage artifact is JSONL: one self-contained JSON object per
//! line, UTF-8, `\n` separators, no trailing blank line beyond the final
//! newline. Serialization is deterministic (sorted object keys, shortest
//! round-trip floats), which is what makes whole-pipeline reruns
//! byte-comparable. The documented shapes live in `docs/formats.md`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use persona_core::domain::{Day, IntentMemory, Persona, Window};
use persona_core::embedding::EmbeddingTable;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("failed to {action} {path}: {source}")]
    Io {
        action: &'static str,
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid record: {message}")]
    Record { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Content { path: String, message: String },
}

/// One raw behavioral log event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub user_id: String,
    pub day: Day,
    pub text: String,
}

/// One intent memory owned by a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub user_id: String,
    #[serde(flatten)]
    pub memory: IntentMemory,
}

/// One generated candidate for a user's window. `personas` is present only
/// when the raw text parsed and validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub user_id: String,
    /// Position in the user's sampling batch.
    pub candidate_index: usize,
    pub raw_text: String,
    pub valid: bool,
    /// Why the candidate was rejected, when it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personas: Option<Vec<Persona>>,
    /// Generator's variant tag, when the source labels candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
}

/// Scored candidate: the scalar reward and its decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub user_id: String,
    pub candidate_index: usize,
    pub scalar_reward: f64,
    pub coverage_raw: f64,
    pub coverage_soft: f64,
    pub per_persona: Vec<PersonaScoreRecord>,
}

/// Per-persona reward components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaScoreRecord {
    pub persona_id: String,
    pub cohesion: f64,
    pub size: f64,
    pub align: f64,
    pub truth: f64,
    pub reward: f64,
}

/// A user's selected persona set (e.g. the trained policy's pick).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSetRecord {
    pub user_id: String,
    pub candidate_index: usize,
    pub personas: Vec<Persona>,
}

/// Ground-truth future items for a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub user_id: String,
    pub item_ids: Vec<u32>,
}

/// One embedding table entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub key: String,
    pub vector: Vec<f64>,
}

/// Reads a whole JSONL file, reporting the first malformed line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let file = fs::File::open(path).map_err(|source| FormatError::Io {
        action: "open",
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| FormatError::Io {
            action: "read",
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| FormatError::Record {
            path: path.display().to_string(),
            line: index + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Serializes `records` as JSONL and writes the file atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), FormatError> {
    let mut body = Vec::new();
    for record in records {
        serde_json::to_writer(&mut body, record).map_err(|e| FormatError::Content {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        body.push(b'\n');
    }
    write_atomic(path, &body)
}

/// Serializes one value as pretty JSON and writes the file atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut body = serde_json::to_vec_pretty(value).map_err(|e| FormatError::Content {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    body.push(b'\n');
    write_atomic(path, &body)
}

/// Reads one JSON value from a file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        action: "open",
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| FormatError::Content {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes bytes to a sibling temp file, then renames over `path`, so a
/// reader never observes a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let display = || path.display().to_string();
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        fs::create_dir_all(dir).map_err(|source| FormatError::Io {
            action: "create parent directory for",
            path: display(),
            source,
        })?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| FormatError::Content {
            path: display(),
            message: "path has no file name".into(),
        })?;
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    let mut file = fs::File::create(&tmp).map_err(|source| FormatError::Io {
        action: "create temp file for",
        path: display(),
        source,
    })?;
    let finish = file
        .write_all(bytes)
        .and_then(|()| file.sync_all())
        .and_then(|()| fs::rename(&tmp, path));
    if let Err(source) = finish {
        let _ = fs::remove_file(&tmp);
        return Err(FormatError::Io { action: "write", path: display(), source });
    }
    Ok(())
}

/// Loads an embedding table from its JSONL form, re-normalizing every
/// vector and inferring the dimension from the first record.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, FormatError> {
    let records: Vec<EmbeddingRecord> = read_jsonl(path)?;
    let pairs: Vec<(String, Vec<f64>)> =
        records.into_iter().map(|r| (r.key, r.vector)).collect();
    EmbeddingTable::from_records(pairs).map_err(|e| FormatError::Content {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes an embedding table as JSONL, keys in sorted order.
pub fn save_embeddings(path: &Path, table: &EmbeddingTable) -> Result<(), FormatError> {
    let records: Vec<EmbeddingRecord> = table
        .iter()
        .map(|(key, vector)| EmbeddingRecord { key: key.to_owned(), vector: vector.to_vec() })
        .collect();
    write_jsonl(path, &records)
}

/// Groups memory records into per-user windows, preserving user order of
/// first appearance but sorting memories by id within a window.
pub fn windows_from_memories(records: &[MemoryRecord]) -> Result<Vec<Window>, String> {
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: std::collections::BTreeMap<&str, Vec<IntentMemory>> =
        std::collections::BTreeMap::new();
    for record in records {
        let user = record.user_id.as_str();
        if !grouped.contains_key(user) {
            order.push(user);
        }
        grouped.entry(user).or_default().push(record.memory.clone());
    }
    order
        .into_iter()
        .map(|user| {
            Window::new(user, grouped.remove(user).unwrap_or_default())
                .map_err(|e| format!("user {user}: {e}"))
        })
        .collect()
}
