//! Checks the shipped detection rules against a directory of sources.
//!
//!     cargo run --example check_rules [DIR]

use std::path::{Path, PathBuf};

use camtax::corpus::load_corpus;
use camtax::rules::{check_corpus, load_rules_dir};

fn main() -> camtax::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| root.join("tests/fixtures/corpus"));
    let rules = load_rules_dir(&root.join("rules"))?;
    let corpus = load_corpus(&dir, &[])?;
    println!("{} rules, {} programs", rules.len(), corpus.units.len());
    for v in check_corpus(&rules, &corpus.units) {
        println!("{:<18} {:<30} {:?}: {}", v.program_id, v.rule_name, v.kind, v.evidence);
    }
    Ok(())
}
