#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use camtax::llm::simulated::SimulatedBackend;
use camtax::llm::{BackendConfig, BackendFailure, ChatBackend, ChatRequest, Gateway, RecordingBackend};
use camtax::pipeline::{Pipeline, RunConfig};
use camtax::Error;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn shipped_rules() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("rules")
}

/// Fixture-corpus config with small batches so every stage checkpoints
/// several times.
pub fn small_batch_config(corpus: &Path, runs: &Path, backend: BackendConfig) -> RunConfig {
    let mut c = RunConfig::new(corpus, backend);
    c.runs_dir = runs.to_path_buf();
    c.rules_dir = Some(shipped_rules());
    c.identify.batch_size = 3;
    c.classify.summaries_per_request = 4;
    c.taxonomy.categories_per_request = 3;
    c
}

/// Runs the whole pipeline against the simulated model, recording every
/// exchange to `cassette`.
pub fn record_cassette(corpus: &Path, runs: &Path, cassette: &Path) {
    let config = small_batch_config(corpus, runs, BackendConfig::simulated());
    let backend = RecordingBackend::new(Box::new(SimulatedBackend::new()), cassette).expect("cassette file");
    let mut p = Pipeline::with_gateway(config, Some("recording"), Gateway::new(Box::new(backend))).expect("open run");
    p.run_all().expect("recording run");
}

/// Answers the first `budget` requests, then fails every request.
pub struct FailAfter {
    inner: Box<dyn ChatBackend>,
    left: AtomicUsize,
}

impl FailAfter {
    pub fn new(inner: Box<dyn ChatBackend>, budget: usize) -> Self {
        FailAfter { inner, left: AtomicUsize::new(budget) }
    }
}

impl ChatBackend for FailAfter {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendFailure> {
        let ok = self.left.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok();
        if ok {
            self.inner.complete(request)
        } else {
            Err(BackendFailure::Fatal(Error::Backend("injected crash".into())))
        }
    }
}
