//! Records a run against the simulated model to a cassette, replays it
//! offline, and confirms the taxonomies are byte-identical.

use std::path::Path;

use camtax::llm::simulated::SimulatedBackend;
use camtax::llm::{BackendConfig, Gateway, RecordingBackend};
use camtax::pipeline::{Pipeline, RunConfig};

fn main() -> camtax::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let work = tempfile::tempdir().expect("temp dir");
    let cassette = work.path().join("session.jsonl");
    let config = |backend| {
        let mut c = RunConfig::new(root.join("tests/fixtures/corpus"), backend);
        c.runs_dir = work.path().join("runs");
        c
    };

    let recorder = RecordingBackend::new(Box::new(SimulatedBackend::new()), &cassette)?;
    let mut live = Pipeline::with_gateway(config(BackendConfig::simulated()), Some("recorded"), Gateway::new(Box::new(recorder)))?;
    live.run_all()?;

    let mut replayed = Pipeline::open(config(BackendConfig::replay(&cassette)), Some("replayed"))?;
    replayed.run_all()?;

    let read = |p: &Pipeline| std::fs::read(p.run_dir().join("taxonomy.json")).expect("taxonomy written");
    let lines = std::fs::read_to_string(&cassette).map(|t| t.lines().count()).unwrap_or(0);
    println!("{lines} recorded exchanges; replay identical: {}", read(&live) == read(&replayed));
    Ok(())
}
