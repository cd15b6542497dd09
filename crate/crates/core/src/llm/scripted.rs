use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{BackendFailure, ChatBackend, ChatRequest};
use crate::error::{Error, Result};

/// One queued outcome of a [`ScriptedBackend`].
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Reply(String),
    Transient(String),
}

type Responder = dyn Fn(&ChatRequest) -> String + Send + Sync;

enum Source {
    Queue(Mutex<VecDeque<ScriptStep>>),
    Func(Box<Responder>),
}

/// Backend that answers from a fixed queue or a deterministic function.
pub struct ScriptedBackend {
    source: Source,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FileStep {
    Reply(String),
    Tagged { transient: String },
}

impl ScriptedBackend {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        ScriptedBackend { source: Source::Queue(Mutex::new(steps.into())) }
    }

    pub fn replies<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(replies.into_iter().map(|r| ScriptStep::Reply(r.into())).collect())
    }

    pub fn from_fn(f: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> Self {
        ScriptedBackend { source: Source::Func(Box::new(f)) }
    }

    /// Loads a JSON array whose items are reply strings or
    /// `{"transient": "<reason>"}` objects.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let steps: Vec<FileStep> = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad script file {}: {e}", path.display())))?;
        Ok(Self::new(
            steps
                .into_iter()
                .map(|s| match s {
                    FileStep::Reply(r) => ScriptStep::Reply(r),
                    FileStep::Tagged { transient } => ScriptStep::Transient(transient),
                })
                .collect(),
        ))
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, BackendFailure> {
        match &self.source {
            Source::Func(f) => Ok(f(request)),
            Source::Queue(queue) => match queue.lock().expect("script lock").pop_front() {
                Some(ScriptStep::Reply(r)) => Ok(r),
                Some(ScriptStep::Transient(msg)) => Err(BackendFailure::transient(msg)),
                None => Err(BackendFailure::Fatal(Error::Backend(format!(
                    "script exhausted at request `{}`",
                    request.tag
                )))),
            },
        }
    }
}
