//! Run-directory persistence with checkpoints.
//!
//! Layout of `runs/<id>/`:
//!
//! ```text
//! manifest.json  corpus.json  slices.json
//! instances/batch-NNNN.json  undecided.json
//! cot/batch-NNNN.json  cot-instances.json  unresolved.json
//! categories/batch-NNNN.json  merged-instances.json  categories.json  growth.jsonl
//! taxonomy/batch-NNNN.json  taxonomy.json  keywords.json
//! rules/  violations.jsonl  metrics.json  llm-log.jsonl
//! ```
//!
//! Stage files are JSON envelopes `{schema_version, stage, payload, sha256}`
//! where `sha256` is the hash of the canonical payload rendering; a
//! mismatch on load is an integrity error. Writes go through a temp file
//! and a rename. A `.lock` file holds the writer's pid.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Identify,
    Cot,
    Classify,
    Taxonomy,
    Rules,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Identify,
        Stage::Cot,
        Stage::Classify,
        Stage::Taxonomy,
        Stage::Rules,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Identify => "identify",
            Stage::Cot => "cot",
            Stage::Classify => "classify",
            Stage::Taxonomy => "taxonomy",
            Stage::Rules => "rules",
            Stage::Eval => "eval",
        }
    }

    /// Directory holding this stage's batch checkpoints.
    fn batch_dir(self) -> &'static str {
        match self {
            Stage::Identify => "instances",
            Stage::Cot => "cot",
            Stage::Classify => "categories",
            Stage::Taxonomy => "taxonomy",
            Stage::Rules => "rules",
            Stage::Ingest | Stage::Eval => self.name(),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    InProgress,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub created_at: String,
    pub config_hash: String,
    pub backend: String,
    pub stage_status: BTreeMap<Stage, StageStatus>,
    /// Number of committed batches per stage.
    pub batches_done: BTreeMap<Stage, usize>,
    pub template_hashes: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    stage: Stage,
    payload: T,
    sha256: String,
}

fn payload_hash(value: &serde_json::Value) -> String {
    let text = serde_json::to_string(value).expect("json value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
                    return Ok(RunLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if Self::is_stale(&path) {
                        let _ = std::fs::remove_file(&path);
                        continue;
                    }
                    return Err(Error::Config(format!(
                        "run directory {} is locked by another writer (remove {} if it is stale)",
                        dir.display(),
                        path.display()
                    )));
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Err(Error::Config(format!("could not lock {}", dir.display())))
    }

    /// A lock is stale when its pid is no longer alive (Linux only).
    fn is_stale(path: &Path) -> bool {
        let Ok(text) = std::fs::read_to_string(path) else {
            return false;
        };
        let Ok(pid) = text.trim().parse::<u32>() else {
            return true;
        };
        let proc_root = Path::new("/proc");
        proc_root.is_dir() && !proc_root.join(pid.to_string()).exists()
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Reads any stage file, checking its content hash.
pub fn read_stage_file<T: DeserializeOwned>(path: &Path) -> Result<(Stage, T)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
    if payload_hash(&env.payload) != env.sha256 {
        return Err(Error::Integrity(format!("{}: content hash mismatch", path.display())));
    }
    let payload = serde_json::from_value(env.payload)
        .map_err(|e| Error::Integrity(format!("{}: schema mismatch: {e}", path.display())))?;
    Ok((env.stage, payload))
}

/// A run directory opened for writing.
pub struct RunStore {
    dir: PathBuf,
    manifest: RunManifest,
    _lock: RunLock,
}

impl std::fmt::Debug for RunStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunStore").field("dir", &self.dir).field("manifest", &self.manifest).finish()
    }
}

impl RunStore {
    /// Creates `runs_dir/<run_id>` with every stage pending.
    pub fn init(
        runs_dir: &Path,
        run_id: &str,
        config_hash: &str,
        backend: &str,
        template_hashes: BTreeMap<String, String>,
    ) -> Result<Self> {
        let dir = runs_dir.join(run_id);
        if dir.join("manifest.json").exists() {
            return Err(Error::Config(format!("run {run_id} already exists")));
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let lock = RunLock::acquire(&dir)?;
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            run_id: run_id.to_string(),
            created_at: chrono::Utc::now().to_rfc3339(),
            config_hash: config_hash.to_string(),
            backend: backend.to_string(),
            stage_status: Stage::ALL.iter().map(|s| (*s, StageStatus::Pending)).collect(),
            batches_done: Stage::ALL.iter().map(|s| (*s, 0)).collect(),
            template_hashes,
        };
        let store = RunStore { dir, manifest, _lock: lock };
        store.write_manifest()?;
        Ok(store)
    }

    /// Opens an existing run directory.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("bad manifest: {e}")))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::Integrity(format!(
                "manifest schema version {} is not supported",
                manifest.schema_version
            )));
        }
        let lock = RunLock::acquire(dir)?;
        Ok(RunStore { dir: dir.to_path_buf(), manifest, _lock: lock })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_manifest(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes())
    }

    pub fn status(&self, stage: Stage) -> StageStatus {
        self.manifest.stage_status.get(&stage).copied().unwrap_or(StageStatus::Pending)
    }

    pub fn batches_done(&self, stage: Stage) -> usize {
        self.manifest.batches_done.get(&stage).copied().unwrap_or(0)
    }

    fn set_status(&mut self, stage: Stage, status: StageStatus) -> Result<()> {
        self.manifest.stage_status.insert(stage, status);
        self.write_manifest()
    }

    pub fn begin_stage(&mut self, stage: Stage) -> Result<()> {
        match self.status(stage) {
            StageStatus::Pending => self.set_status(stage, StageStatus::InProgress),
            StageStatus::InProgress => Ok(()),
            StageStatus::Done => Err(Error::Input(format!("stage {stage} is already done"))),
        }
    }

    pub fn complete_stage(&mut self, stage: Stage) -> Result<()> {
        self.set_status(stage, StageStatus::Done)
    }

    /// Returns a stage and every later stage to pending, dropping their batch counters.
    pub fn reset_from(&mut self, stage: Stage) -> Result<()> {
        for s in Stage::ALL.into_iter().filter(|s| *s >= stage) {
            self.manifest.stage_status.insert(s, StageStatus::Pending);
            self.manifest.batches_done.insert(s, 0);
        }
        self.write_manifest()
    }

    /// First stage that is not done, with the next batch index to run.
    pub fn resume_point(&self) -> Option<(Stage, usize)> {
        Stage::ALL
            .into_iter()
            .find(|s| self.status(*s) != StageStatus::Done)
            .map(|s| (s, self.batches_done(s)))
    }

    fn write_envelope<T: Serialize>(&self, stage: Stage, path: &Path, payload: &T) -> Result<()> {
        if self.status(stage) == StageStatus::Done {
            return Err(Error::Input(format!("stage {stage} is done; reset it before writing")));
        }
        let value = serde_json::to_value(payload).expect("payload serializes");
        let env = Envelope { schema_version: SCHEMA_VERSION, stage, sha256: payload_hash(&value), payload: value };
        let mut text = serde_json::to_string_pretty(&env).expect("envelope serializes");
        text.push('\n');
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_atomic(path, text.as_bytes())
    }

    fn read_envelope<T: DeserializeOwned>(&self, stage: Stage, path: &Path) -> Result<T> {
        let (found, payload) = read_stage_file(path).map_err(|e| match e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                Error::NotReady(format!("{stage} ({})", path.display()))
            }
            other => other,
        })?;
        if found != stage {
            return Err(Error::Integrity(format!("{} belongs to stage {found}, not {stage}", path.display())));
        }
        Ok(payload)
    }

    /// Writes a named stage artifact such as `categories.json`.
    pub fn save_stage<T: Serialize>(&mut self, stage: Stage, name: &str, payload: &T) -> Result<()> {
        if self.status(stage) == StageStatus::Pending {
            self.begin_stage(stage)?;
        }
        self.write_envelope(stage, &self.dir.join(name), payload)
    }

    /// Reads a named stage artifact.
    pub fn load_stage<T: DeserializeOwned>(&self, stage: Stage, name: &str) -> Result<T> {
        if self.status(stage) == StageStatus::Pending {
            return Err(Error::NotReady(stage.name().into()));
        }
        self.read_envelope(stage, &self.dir.join(name))
    }

    fn batch_path(&self, stage: Stage, index: usize) -> PathBuf {
        self.dir.join(stage.batch_dir()).join(format!("batch-{index:04}.json"))
    }

    /// Commits batch `index`; batches must be committed in order.
    pub fn save_batch<T: Serialize>(&mut self, stage: Stage, index: usize, payload: &T) -> Result<()> {
        let expected = self.batches_done(stage);
        if index != expected {
            return Err(Error::Input(format!(
                "stage {stage}: expected batch {expected}, got {index}"
            )));
        }
        if self.status(stage) == StageStatus::Pending {
            self.begin_stage(stage)?;
        }
        self.write_envelope(stage, &self.batch_path(stage, index), payload)?;
        self.manifest.batches_done.insert(stage, index + 1);
        self.write_manifest()
    }

    pub fn load_batch<T: DeserializeOwned>(&self, stage: Stage, index: usize) -> Result<T> {
        if index >= self.batches_done(stage) {
            return Err(Error::NotReady(format!("{stage} batch {index}")));
        }
        self.read_envelope(stage, &self.batch_path(stage, index))
    }

    /// All committed batches of a stage, in order.
    pub fn load_batches<T: DeserializeOwned>(&self, stage: Stage) -> Result<Vec<T>> {
        (0..self.batches_done(stage)).map(|i| self.load_batch(stage, i)).collect()
    }

    /// Overwrites a JSON-lines file (no envelope).
    pub fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut text = String::new();
        for row in rows {
            text.push_str(&serde_json::to_string(row).expect("row serializes"));
            text.push('\n');
        }
        write_atomic(&self.dir.join(name), text.as_bytes())
    }

    /// Writes a plain file relative to the run directory.
    pub fn write_file(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_atomic(&path, bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh(dir: &Path) -> RunStore {
        RunStore::init(dir, "r1", "cfg", "scripted", BTreeMap::new()).unwrap()
    }

    #[test]
    fn fresh_run_resumes_at_first_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let store = fresh(tmp.path());
        assert_eq!(store.resume_point(), Some((Stage::Ingest, 0)));
    }

    #[test]
    fn resume_after_committed_batch() {
        let tmp = tempfile::tempdir().unwrap();
        {
            let mut store = fresh(tmp.path());
            store.save_stage(Stage::Ingest, "corpus.json", &vec!["a"]).unwrap();
            store.complete_stage(Stage::Ingest).unwrap();
            for i in 0..=3 {
                store.save_batch(Stage::Identify, i, &vec![i]).unwrap();
            }
            // dropped without completing: a crash
        }
        let store = RunStore::open(&tmp.path().join("r1")).unwrap();
        assert_eq!(store.resume_point(), Some((Stage::Identify, 4)));
        let b: Vec<usize> = store.load_batch(Stage::Identify, 3).unwrap();
        assert_eq!(b, vec![3]);
        assert!(store.load_batch::<Vec<usize>>(Stage::Identify, 4).is_err());
    }

    #[test]
    fn batches_must_be_sequential() {
        let tmp = tempfile::tempdir().unwrap();
        let mut store = fresh(tmp.path());
        assert!(store.save_batch(Stage::Identify, 1, &1).is_err());
    }

    #[test]
    fn tampering_is_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut store = fresh(tmp.path());
        store.save_stage(Stage::Classify, "categories.json", &vec!["Weak hash"]).unwrap();
        let loaded: Vec<String> = store.load_stage(Stage::Classify, "categories.json").unwrap();
        assert_eq!(loaded, ["Weak hash"]);

        let path = store.path("categories.json");
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("Weak hash", "Strong hash")).unwrap();
        let err = store.load_stage::<Vec<String>>(Stage::Classify, "categories.json").unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn pending_stage_is_not_ready() {
        let tmp = tempfile::tempdir().unwrap();
        let store = fresh(tmp.path());
        let err = store.load_stage::<Vec<String>>(Stage::Taxonomy, "taxonomy.json").unwrap_err();
        assert!(matches!(err, Error::NotReady(_)));
    }

    #[test]
    fn done_stage_rejects_writes() {
        let tmp = tempfile::tempdir().unwrap();
        let mut store = fresh(tmp.path());
        store.save_stage(Stage::Ingest, "corpus.json", &1).unwrap();
        store.complete_stage(Stage::Ingest).unwrap();
        assert!(store.save_stage(Stage::Ingest, "corpus.json", &2).is_err());
        store.reset_from(Stage::Ingest).unwrap();
        assert_eq!(store.status(Stage::Ingest), StageStatus::Pending);
        store.save_stage(Stage::Ingest, "corpus.json", &2).unwrap();
    }

    #[test]
    fn lock_excludes_second_writer() {
        let tmp = tempfile::tempdir().unwrap();
        let store = fresh(tmp.path());
        assert!(RunStore::open(store.dir()).is_err());
        let dir = store.dir().to_path_buf();
        drop(store);
        assert!(RunStore::open(&dir).is_ok());
    }

    #[test]
    fn envelope_keeps_hash_last() {
        let tmp = tempfile::tempdir().unwrap();
        let mut store = fresh(tmp.path());
        store.save_stage(Stage::Eval, "metrics.json", &serde_json::json!({"b": 1, "a": 2})).unwrap();
        let text = std::fs::read_to_string(store.path("metrics.json")).unwrap();
        let last_key = text.lines().rfind(|l| l.trim_start().starts_with('"')).unwrap();
        assert!(last_key.trim_start().starts_with("\"sha256\""));
    }
}
