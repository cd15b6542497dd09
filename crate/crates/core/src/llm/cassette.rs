//! JSON-lines cassettes: one `{key, request, response}` object per line.
//!
//! Replay looks responses up by request content hash, so entries may be
//! consumed in any order. A miss is an error; replay never touches the
//! network.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendFailure, ChatBackend, ChatRequest, ChatResponse, Gateway};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub request: ChatRequest,
    pub response: String,
}

#[derive(Debug, Clone, Default)]
pub struct Cassette {
    entries: HashMap<String, CassetteEntry>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(line)
                .map_err(|e| Error::parse_at(n + 1, format!("cassette {}: {e}", path.display())))?;
            // First recording of a key wins.
            entries.entry(entry.key.clone()).or_insert(entry);
        }
        Ok(Cassette { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, request: &ChatRequest) -> Option<&CassetteEntry> {
        self.entries.get(&request.cassette_key())
    }
}

pub struct ReplayBackend {
    cassette: Cassette,
    path: PathBuf,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(ReplayBackend { cassette: Cassette::load(path)?, path: path.to_path_buf() })
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> String {
        format!("replay:{}", self.path.file_name().map(|f| f.to_string_lossy()).unwrap_or_default())
    }

    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, BackendFailure> {
        match self.cassette.get(request) {
            Some(entry) => Ok(entry.response.clone()),
            None => Err(BackendFailure::Fatal(Error::CassetteMiss {
                key: request.cassette_key(),
                tag: request.tag.clone(),
            })),
        }
    }
}

/// Forwards to an inner backend and appends every successful exchange to
/// a cassette file.
pub struct RecordingBackend {
    inner: Box<dyn ChatBackend>,
    path: PathBuf,
    writer: Mutex<std::fs::File>,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn ChatBackend>, path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RecordingBackend { inner, path: path.to_path_buf(), writer: Mutex::new(file) })
    }
}

impl ChatBackend for RecordingBackend {
    fn id(&self) -> String {
        format!("record:{}", self.inner.id())
    }

    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, BackendFailure> {
        let response = self.inner.complete(request)?;
        let entry = CassetteEntry {
            key: request.cassette_key(),
            request: request.clone(),
            response: response.clone(),
        };
        let mut line = serde_json::to_string(&entry).expect("cassette entry serializes");
        line.push('\n');
        self.writer
            .lock()
            .expect("cassette lock")
            .write_all(line.as_bytes())
            .map_err(|e| BackendFailure::Fatal(Error::io(&self.path, e)))?;
        Ok(response)
    }
}

/// Sends `request` through `live` and stores the exchange in `cassette_path`.
pub fn record(request: &ChatRequest, live: Box<dyn ChatBackend>, cassette_path: &Path) -> Result<ChatResponse> {
    Gateway::new(Box::new(RecordingBackend::new(live, cassette_path)?)).send(request)
}

/// Answers `request` from the cassette at `cassette_path`.
pub fn replay(request: &ChatRequest, cassette_path: &Path) -> Result<ChatResponse> {
    Gateway::new(Box::new(ReplayBackend::open(cassette_path)?)).send(request)
}
