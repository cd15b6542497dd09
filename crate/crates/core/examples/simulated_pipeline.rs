//! Runs every stage over the bundled fixture corpus with the offline
//! simulated model and prints what each stage produced.
//!
//!     cargo run --example simulated_pipeline

use std::path::Path;

use camtax::llm::BackendConfig;
use camtax::pipeline::{Pipeline, RunConfig};

fn main() -> camtax::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let runs = tempfile::tempdir().expect("temp dir");
    let mut config = RunConfig::new(root.join("tests/fixtures/corpus"), BackendConfig::simulated());
    config.runs_dir = runs.path().to_path_buf();
    config.rules_dir = Some(root.join("rules"));

    let mut p = Pipeline::open(config, Some("demo"))?;
    let found = p.identify()?;
    println!(
        "identified {} instances ({} after chain of thought), {} slices unresolved",
        found.all_instances().count(),
        found.cot.instances.len(),
        found.cot.unresolved.len()
    );
    for c in p.classify()? {
        println!("  base category: {} <- {:?}", c.title, c.source_code_ids);
    }
    let taxonomy = p.taxonomy()?;
    for root in taxonomy.roots() {
        println!("{}", root.title);
        for child in taxonomy.children_of(&root.id) {
            println!("  {}", taxonomy.nodes[child].title);
        }
    }
    println!("{} rule violations", p.rules()?.len());
    Ok(())
}
