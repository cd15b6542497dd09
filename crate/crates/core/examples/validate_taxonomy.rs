//! Builds a small taxonomy by hand, validates it, then breaks it.

use camtax::classification::CamCategory;
use camtax::taxonomy::{KeywordSet, Taxonomy};

fn node(mut c: CamCategory, id: &str) -> (String, CamCategory) {
    c.id = id.into();
    (id.into(), c)
}

fn main() {
    let mut t = Taxonomy::new(KeywordSet::seed());
    t.nodes.extend([
        node(CamCategory::abstract_category("Insecure Cipher Use", "Ciphers configured unsafely."), "cipher"),
        node(CamCategory::base("ECB Mode", "Block cipher in ECB mode.", vec!["Ecb.java".into()]), "ecb"),
        node(CamCategory::base("Static IV", "Constant initialization vector.", vec!["iv.go".into()]), "iv"),
    ]);
    t.edges.insert(("cipher".into(), "ecb".into()));
    t.edges.insert(("cipher".into(), "iv".into()));
    let report = t.validate();
    println!("valid: {} (depth {}, per level {:?})", report.ok, report.depth, report.counts_per_level);

    // A base category cannot have children, and a second parent is not allowed.
    t.edges.insert(("ecb".into(), "iv".into()));
    let report = t.validate();
    println!("valid: {}", report.ok);
    for v in &report.violations {
        println!("  {v}");
    }
}
