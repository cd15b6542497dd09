//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `CAMTAX_LIVE_SMOKE=1` additionally runs identification on a handful of
//! fixture files against a real endpoint given by `CAMTAX_LIVE_ENDPOINT`,
//! `CAMTAX_LIVE_MODEL` and `CAMTAX_LIVE_KEY_ENV` (the name of the variable
//! holding the API key).

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use camtax::classification::{merge_categories, run_classification, summarize_batch, CamCategory, ClassifyOptions};
use camtax::corpus::{slice_program, CryptoKeywordSet, ProgramUnit};
use camtax::evaluation::{compute_metrics, compute_rates, f1_from, growth_curve, ConfusionCounts};
use camtax::identification::CamInstance;
use camtax::llm::simulated::SimulatedBackend;
use camtax::llm::{BackendConfig, Gateway, ReplayBackend, ScriptedBackend};
use camtax::pipeline::Pipeline;
use camtax::prompts::PromptSet;
use camtax::rules::{check, load_rule, trace_program, OrderPattern, ViolationKind};
use camtax::taxonomy::{KeywordSet, Taxonomy, ViolationKind as TaxViolation};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};

use common::{fixture, record_cassette, shipped_rules, small_batch_config, FailAfter};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn near(actual: f64, expected: f64, tol: f64) -> bool {
    (actual - expected).abs() <= tol
}

// --- 1 -------------------------------------------------------------------

fn metrics() -> Outcome {
    let (tp, fp, fn_, tn) = (527u64, 55u64, 13u64, 121u64);
    let r = compute_metrics(ConfusionCounts::new(tp, fp, fn_, tn)).map_err(|e| e.to_string())?;

    // Independent arithmetic.
    let total = (tp + fp + fn_ + tn) as f64;
    let acc = (tp + tn) as f64 / total;
    let prec = tp as f64 / (tp + fp) as f64;
    let rec = tp as f64 / (tp + fn_) as f64;
    let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;

    let got = |v: Option<f64>, name: &str| v.ok_or(format!("{name} undefined"));
    let (a, p, rc, f) = (got(r.accuracy, "accuracy")?, got(r.precision, "precision")?, got(r.recall, "recall")?, got(r.f1, "f1")?);
    for (name, v, oracle, reported) in [
        ("accuracy", a, acc, 0.905),
        ("precision", p, prec, 0.906),
        ("recall", rc, rec, 0.976),
        ("f1", f, f1, 0.939),
    ] {
        ensure!(near(v, oracle, 1e-12), "{name} {v} differs from oracle {oracle}");
        ensure!(near(v, reported, 0.001), "{name} {v:.4} not within 0.001 of {reported}");
    }
    // The table's rounded figures.
    for (v, rounded) in [(a, 0.91), (p, 0.91), (rc, 0.98)] {
        ensure!(near(v, rounded, 0.005), "{v:.4} does not round to {rounded}");
    }
    let rounded_f1 = f1_from(0.91, 0.98).ok_or("f1_from undefined")?;
    ensure!(near(rounded_f1, 0.944, 0.001), "F1 from rounded inputs is {rounded_f1:.4}, want 0.944");

    let (fnr, fdr) = compute_rates(107, 975, 24, 1470).map_err(|e| e.to_string())?;
    ensure!(near(fnr, 107.0 / 975.0, 1e-12) && near(fnr, 0.110, 0.001), "miss rate {fnr:.4}");
    ensure!(near(fdr, 24.0 / 1470.0, 1e-12) && near(fdr, 0.016, 0.001), "false report rate {fdr:.4}");
    Ok(format!("acc {a:.3} prec {p:.3} rec {rc:.3} f1 {f:.3} (rounded-input {rounded_f1:.3}) rates {fnr:.3}/{fdr:.3}"))
}

// --- 2 -------------------------------------------------------------------

fn kinds(rule: &camtax::rules::DetectionRule, file: &str, src: &str) -> Vec<ViolationKind> {
    let unit = ProgramUnit::new(file, src);
    check(rule, &trace_program(&unit)).into_iter().map(|v| v.kind).collect()
}

fn openssl_rule() -> Outcome {
    let rule = load_rule(&shipped_rules().join("openssl_init_cleanse.rule")).map_err(|e| e.to_string())?;
    ensure!(rule.objects.len() == 3, "expected 3 objects, got {}", rule.objects.len());

    let forbidden = kinds(&rule, "legacy.c", "int main(void) {\n    OpenSSL_add_all_digests();\n    return 0;\n}\n");
    ensure!(forbidden == [ViolationKind::Forbidden], "forbidden call gave {forbidden:?}");

    let good = kinds(
        &rule,
        "good.c",
        "int main(void) {\n    OPENSSL_init_crypto(0, NULL);\n    do_work(key);\n    OPENSSL_cleanse(key, sizeof key);\n    return 0;\n}\n",
    );
    ensure!(good.is_empty(), "init then cleanse gave {good:?}");

    let init_only = kinds(&rule, "leak.c", "int main(void) {\n    OPENSSL_init_crypto(0, NULL);\n    do_work(key);\n    return 0;\n}\n");
    ensure!(init_only == [ViolationKind::Order], "init only gave {init_only:?}");
    Ok("forbidden -> Forbidden, init+cleanse -> none, init only -> Order".into())
}

// --- 3 -------------------------------------------------------------------

fn constraint_rules() -> Outcome {
    let pbkdf2 = load_rule(&shipped_rules().join("pbkdf2_iterations.rule")).map_err(|e| e.to_string())?;
    let gcm = load_rule(&shipped_rules().join("gcm_tag_length.rule")).map_err(|e| e.to_string())?;
    let py = |n: u32| format!("import hashlib\nkey = hashlib.pbkdf2_hmac('sha256', pw, salt, {n})\n");
    let java = |n: u32| format!("class T {{\n  void f() {{\n    GCMParameterSpec spec = new GCMParameterSpec({n}, iv);\n  }}\n}}\n");

    ensure!(kinds(&pbkdf2, "weak.py", &py(1000)) == [ViolationKind::Constraint], "1000 iterations not flagged");
    ensure!(kinds(&pbkdf2, "strong.py", &py(600_000)).is_empty(), "600000 iterations flagged");
    ensure!(kinds(&gcm, "Short.java", &java(64)) == [ViolationKind::Constraint], "64-bit tag not flagged");
    ensure!(kinds(&gcm, "Full.java", &java(128)).is_empty(), "128-bit tag flagged");
    Ok("pbkdf2 1000 flagged / 600000 ok, gcm 64 flagged / 128 ok".into())
}

// --- 4 -------------------------------------------------------------------

#[derive(Clone)]
enum Pat {
    L(char),
    Seq(Box<Pat>, Box<Pat>),
    Alt(Box<Pat>, Box<Pat>),
    Q(Box<Pat>, char),
}

fn render(p: &Pat) -> String {
    fn grouped(p: &Pat) -> String {
        match p {
            Pat::L(_) => render(p),
            _ => format!("({})", render(p)),
        }
    }
    match p {
        Pat::L(c) => c.to_string(),
        Pat::Seq(a, b) => {
            let side = |x: &Pat| if matches!(x, Pat::Alt(..)) { grouped(x) } else { render(x) };
            format!("{}{}", side(a), side(b))
        }
        Pat::Alt(a, b) => format!("{}|{}", render(a), render(b)),
        Pat::Q(x, q) => format!("{}{q}", grouped(x)),
    }
}

/// All patterns with exactly `leaves` leaves and `quants` quantifiers.
fn patterns(leaves: usize, quants: usize, memo: &mut BTreeMap<(usize, usize), Vec<Pat>>) -> Vec<Pat> {
    if let Some(v) = memo.get(&(leaves, quants)) {
        return v.clone();
    }
    let mut out = Vec::new();
    if leaves == 1 && quants == 0 {
        out.extend(['a', 'b', 'c'].map(Pat::L));
    }
    if quants > 0 {
        for inner in patterns(leaves, quants - 1, memo) {
            for q in ['*', '+', '?'] {
                out.push(Pat::Q(Box::new(inner.clone()), q));
            }
        }
    }
    for l in 1..leaves {
        for q in 0..=quants {
            let lhs = patterns(l, q, memo);
            let rhs = patterns(leaves - l, quants - q, memo);
            for x in &lhs {
                for y in &rhs {
                    out.push(Pat::Seq(Box::new(x.clone()), Box::new(y.clone())));
                    out.push(Pat::Alt(Box::new(x.clone()), Box::new(y.clone())));
                }
            }
        }
    }
    memo.insert((leaves, quants), out.clone());
    out
}

fn order_oracle() -> Outcome {
    let mut memo = BTreeMap::new();
    let mut texts = BTreeSet::new();
    for leaves in 1..=3 {
        for quants in 0..=2 {
            texts.extend(patterns(leaves, quants, &mut memo).iter().map(render));
        }
    }
    let mut traces: Vec<String> = vec![String::new()];
    let mut frontier = traces.clone();
    for _ in 0..6 {
        frontier = frontier.iter().flat_map(|t| ['a', 'b', 'c'].map(|c| format!("{t}{c}"))).collect();
        traces.extend(frontier.iter().cloned());
    }
    let labels: BTreeSet<String> = ["a", "b", "c"].map(String::from).into();
    let split: Vec<Vec<String>> = traces.iter().map(|t| t.chars().map(String::from).collect()).collect();

    let texts: Vec<&String> = texts.iter().collect();
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
    let per = texts.len().div_ceil(workers);
    let results: Vec<Result<usize, String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = texts
            .chunks(per)
            .map(|chunk| {
                let (traces, split, labels) = (&traces, &split, &labels);
                scope.spawn(move || -> Result<usize, String> {
                    let mut cases = 0;
                    for text in chunk {
                        let ours = OrderPattern::parse(text, labels).map_err(|e| format!("`{text}`: {e}"))?;
                        let oracle = regex::Regex::new(&format!("^(?:{text})$")).map_err(|e| e.to_string())?;
                        for (t, labels) in traces.iter().zip(split) {
                            let want = oracle.is_match(t);
                            ensure!(
                                ours.matches(labels) == want,
                                "pattern `{text}` on trace `{t}`: checker says {}, regex says {want}",
                                !want
                            );
                            cases += 1;
                        }
                    }
                    Ok(cases)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut cases = 0;
    for r in results {
        cases += r?;
    }
    Ok(format!("{} patterns x {} traces = {cases} agreements", texts.len(), traces.len()))
}

// --- 5 -------------------------------------------------------------------

fn run_replay(corpus: &Path, runs: &Path, cassette: &Path, id: &str) -> Result<Vec<u8>, String> {
    let config = small_batch_config(corpus, runs, BackendConfig::replay(cassette));
    let mut p = Pipeline::open(config, Some(id)).map_err(|e| e.to_string())?;
    p.run_all().map_err(|e| format!("run {id}: {e}"))?;
    fs::read(p.run_dir().join("taxonomy.json")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let corpus = fixture("corpus");
    let files = fs::read_dir(&corpus).map_err(|e| e.to_string())?.count();
    ensure!(files >= 10, "fixture corpus has only {files} files");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = tmp.path().join("runs");
    let cassette = tmp.path().join("cassette.jsonl");
    record_cassette(&corpus, &runs, &cassette);

    let first = run_replay(&corpus, &runs, &cassette, "first")?;
    let second = run_replay(&corpus, &runs, &cassette, "second")?;
    ensure!(first == second, "two replays produced different taxonomy.json");
    let requests = fs::read_to_string(runs.join("first/llm-log.jsonl")).map_err(|e| e.to_string())?.lines().count();
    ensure!(requests >= 8, "only {requests} requests; too few to crash at distinct points");

    let mut resumed_at = Vec::new();
    for (i, budget) in [requests / 4, requests / 2, requests * 3 / 4].into_iter().enumerate() {
        let id = format!("crash-{i}");
        let config = small_batch_config(&corpus, &runs, BackendConfig::replay(&cassette));
        let replay = ReplayBackend::open(&cassette).map_err(|e| e.to_string())?;
        let gateway = Gateway::new(Box::new(FailAfter::new(Box::new(replay), budget)));
        {
            let mut p = Pipeline::with_gateway(config.clone(), Some(&id), gateway).map_err(|e| e.to_string())?;
            ensure!(p.run_all().is_err(), "run with {budget} answers did not crash");
            resumed_at.push(p.store().resume_point().ok_or("crashed run reports no resume point")?);
        }
        let bytes = run_replay(&corpus, &runs, &cassette, &id)?;
        ensure!(bytes == first, "resume after {budget} answers differs from the clean run");
    }
    let distinct: BTreeSet<_> = resumed_at.iter().collect();
    ensure!(distinct.len() == 3, "crash points were not distinct: {resumed_at:?}");
    let points: Vec<String> = resumed_at.iter().map(|(s, b)| format!("{}#{b}", s.name())).collect();
    Ok(format!("{files} files, {requests} requests, resumed at {}", points.join(", ")))
}

// --- 6 -------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Graph {
    abstract_: Vec<bool>,
    edges: Vec<(usize, usize)>,
    /// Edges to ids that are not nodes.
    dangling: Vec<usize>,
}

fn build(g: &Graph) -> Taxonomy {
    let mut t = Taxonomy::new(KeywordSet::seed());
    let id = |i: usize| format!("n{i}");
    for (i, &a) in g.abstract_.iter().enumerate() {
        let mut c = if a {
            CamCategory::abstract_category(format!("Abstract {i}"), "group")
        } else {
            CamCategory::base(format!("Base {i}"), "leaf", vec![format!("p{i}.c")])
        };
        c.id = id(i);
        t.nodes.insert(c.id.clone(), c);
    }
    t.edges = g.edges.iter().map(|&(p, c)| (id(p), id(c))).collect();
    for &p in &g.dangling {
        t.edges.insert((id(p), "ghost".into()));
    }
    t
}

/// Random forest: parents precede children, abstract exactly when a node
/// has children, base nodes never roots.
fn forest() -> impl Strategy<Value = Graph> {
    (2usize..14).prop_flat_map(|n| proptest::collection::vec(proptest::option::of(any::<prop::sample::Index>()), n)).prop_map(
        |picks| {
            let n = picks.len();
            let mut parent: Vec<Option<usize>> = Vec::with_capacity(n);
            for (i, pick) in picks.iter().enumerate() {
                parent.push(if i == 0 { None } else { pick.as_ref().map(|ix| ix.index(i)) });
            }
            let mut has_child = vec![false; n];
            for p in parent.iter().flatten() {
                has_child[*p] = true;
            }
            // A childless root would be a base root: hang it under node 0.
            for i in 1..n {
                if parent[i].is_none() && !has_child[i] {
                    parent[i] = Some(0);
                    has_child[0] = true;
                }
            }
            if !has_child[0] {
                parent[1] = Some(0);
                has_child[0] = true;
            }
            let edges = parent.iter().enumerate().filter_map(|(c, p)| p.map(|p| (p, c))).collect();
            Graph { abstract_: has_child, edges, dangling: Vec::new() }
        },
    )
}

fn arbitrary_graph() -> impl Strategy<Value = Graph> {
    (1usize..9).prop_flat_map(|n| {
        (
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec((0..n, 0..n), 0..(2 * n)),
            proptest::collection::vec(0..n, 0..2),
        )
            .prop_map(|(abstract_, edges, dangling)| Graph { abstract_, edges, dangling })
    })
}

/// Violation kinds found by straightforward recomputation.
fn oracle_kinds(g: &Graph) -> BTreeSet<TaxViolation> {
    let n = g.abstract_.len();
    let edges: BTreeSet<(usize, usize)> = g.edges.iter().copied().collect();
    let mut out = BTreeSet::new();
    if !g.dangling.is_empty() {
        out.insert(TaxViolation::DanglingEdge);
    }
    let mut indeg = vec![0usize; n];
    let mut outdeg = vec![0usize; n];
    for &(p, c) in &edges {
        indeg[c] += 1;
        outdeg[p] += 1;
    }
    if indeg.iter().any(|&d| d > 1) {
        out.insert(TaxViolation::MultiParent);
    }
    // Kahn: leftover nodes sit on or behind a cycle.
    let mut deg = indeg.clone();
    let mut queue: Vec<usize> = (0..n).filter(|&i| deg[i] == 0).collect();
    let mut seen = 0;
    while let Some(v) = queue.pop() {
        seen += 1;
        for &(p, c) in &edges {
            if p == v {
                deg[c] -= 1;
                if deg[c] == 0 {
                    queue.push(c);
                }
            }
        }
    }
    if seen < n {
        out.insert(TaxViolation::Cycle);
    }
    for i in 0..n {
        match (g.abstract_[i], outdeg[i] > 0, indeg[i] > 0) {
            (true, false, _) => {
                out.insert(TaxViolation::AbstractLeaf);
            }
            (false, true, _) => {
                out.insert(TaxViolation::BaseNonLeaf);
            }
            (false, false, false) => {
                out.insert(TaxViolation::BaseRoot);
            }
            _ => {}
        }
    }
    out
}

/// Breaks a valid forest in one specific way.
fn corrupt(g: &Graph, how: usize) -> (Graph, TaxViolation) {
    let mut g = g.clone();
    let n = g.abstract_.len();
    let child = g.edges.iter().map(|&(_, c)| c).max().expect("forest has an edge");
    match how {
        0 => {
            // Close a loop from a node back to the root of its chain.
            let mut root = child;
            while let Some(&(p, _)) = g.edges.iter().find(|&&(_, c)| c == root) {
                root = p;
            }
            g.edges.retain(|&(p, c)| !(c == root && p == child));
            g.edges.push((child, root));
            g.abstract_[child] = true;
            (g, TaxViolation::Cycle)
        }
        1 => {
            g.abstract_.push(true);
            g.edges.push((n, child));
            g.edges.push((n, 0));
            (g, TaxViolation::MultiParent)
        }
        2 => {
            g.abstract_.push(true);
            g.edges.push((0, n));
            (g, TaxViolation::AbstractLeaf)
        }
        3 => {
            let p = g.edges.iter().find(|&&(_, c)| c == child).map(|&(p, _)| p).expect("child has a parent");
            g.abstract_[p] = false;
            (g, TaxViolation::BaseNonLeaf)
        }
        4 => {
            g.dangling.push(0);
            (g, TaxViolation::DanglingEdge)
        }
        _ => {
            g.abstract_.push(false);
            (g, TaxViolation::BaseRoot)
        }
    }
}

fn taxonomy_invariants() -> Outcome {
    let cfg = |cases| PtConfig { cases, failure_persistence: None, ..PtConfig::default() };
    let mut runner = TestRunner::new(cfg(1000));
    runner
        .run(&forest(), |g| {
            let report = build(&g).validate();
            prop_assert!(report.ok, "valid forest rejected: {}", report.summary());
            for how in 0..6 {
                let (bad, kind) = corrupt(&g, how);
                let report = build(&bad).validate();
                prop_assert!(!report.ok && report.has(kind), "missed {:?}: {}", kind, report.summary());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let mut runner = TestRunner::new(cfg(1000));
    runner
        .run(&arbitrary_graph(), |g| {
            let report = build(&g).validate();
            let want = oracle_kinds(&g);
            let got: BTreeSet<TaxViolation> = report.violations.iter().map(|v| v.kind).collect();
            prop_assert_eq!(report.ok, want.is_empty());
            prop_assert_eq!(got, want);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("1000 valid forests accepted with 6 corruptions each caught; 1000 random graphs match the oracle".into())
}

// --- 7 -------------------------------------------------------------------

const SUMMARIES: &[&str] = &[
    "Use of MD5 for hashing",
    "Use of SHA-1 for hashing",
    "Use of ECB mode for encryption",
    "Static initialization vector",
    "Hard-coded encryption key",
    "Insufficient PBKDF2 iteration count",
    "Certificate validation disabled",
    "Predictable salt in password hashing",
    "Key stored in world-readable file",
];

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

fn conservation() -> Outcome {
    let gateway = Gateway::new(Box::new(SimulatedBackend::new()));
    let prompts = PromptSet::builtin();

    // Scripted grouping: 5 instances into 2 groups.
    let five: Vec<CamInstance> = (0..5).map(|i| CamInstance::new(format!("s{i}"), "d", format!("f{i}.java"))).collect();
    let scripted = Gateway::new(Box::new(ScriptedBackend::replies([
        r#"[{"abstract": "Weak cipher", "members": [0, 2, 4]}, {"abstract": "Static IV", "members": [1, 3]}]"#,
        r#"[{"title": "Weak Cipher", "explanation": "e1"}, {"title": "Static IV", "explanation": "e2"}]"#,
    ])));
    let (_, cats) = summarize_batch(&five, &scripted, &prompts).map_err(|e| e.to_string())?;
    let ids: Vec<String> = cats.iter().flat_map(|c| c.source_code_ids.clone()).collect();
    ensure!(cats.len() == 2, "scripted grouping gave {} categories", cats.len());
    ensure!(sorted(ids) == sorted(five.iter().map(|i| i.code.clone()).collect()), "scripted grouping lost ids");

    let checked = std::cell::Cell::new(0);
    let mut runner = TestRunner::new(PtConfig { cases: 40, failure_persistence: None, ..PtConfig::default() });
    let strategy = (proptest::collection::vec(0..SUMMARIES.len(), 1..30), 1usize..7);
    runner
        .run(&strategy, |(picks, per)| {
            let instances: Vec<CamInstance> = picks
                .iter()
                .enumerate()
                .map(|(i, &s)| CamInstance::new(SUMMARIES[s], format!("detail {i}"), format!("prog{i}.py")))
                .collect();
            let opts = ClassifyOptions { summaries_per_request: per, ..ClassifyOptions::default() };
            let result = run_classification(&instances, &gateway, &prompts, None, &opts).expect("classification");
            let got: Vec<String> = result.categories.iter().flat_map(|c| c.source_code_ids.clone()).collect();
            let want: Vec<String> = instances.iter().map(|i| i.code.clone()).collect();
            prop_assert_eq!(sorted(got), sorted(want));

            let curve = growth_curve(&result.growth).expect("monotone growth");
            prop_assert_eq!(curve.last().map(|p| p.0), Some(instances.len()));

            let again = merge_categories(&result.categories, &result.categories, &gateway, &prompts, 4095).expect("merge");
            let titles = |cs: &[CamCategory]| cs.iter().map(|c| c.title.clone()).collect::<Vec<_>>();
            prop_assert_eq!(titles(&again), titles(&result.categories));
            let empty = merge_categories(&result.categories, &[], &gateway, &prompts, 4095).expect("merge");
            prop_assert_eq!(&empty, &result.categories);
            checked.set(checked.get() + 1);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("scripted 5->2 partition plus {} simulated runs conserve ids, merge idempotent, growth monotone", checked.get()))
}

// --- 8 -------------------------------------------------------------------

fn slicing() -> Outcome {
    let keywords = CryptoKeywordSet::default();
    let pieces = prop_oneof![
        Just("\n".to_string()),
        Just("    key = AES.new(k, AES.MODE_ECB)\n".to_string()),
        "[a-z ]{0,40}",
        "[\\u{80}-\\u{10FFFF}]{1,8}",
        "x{200,3000}",
    ];
    let source = proptest::collection::vec(pieces, 0..200).prop_map(|v| {
        let mut s = v.concat();
        // Cap near 50k bytes on a char boundary.
        let mut cut = s.len().min(50_000);
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
        s
    });
    let largest = std::cell::Cell::new(0);
    let mut runner = TestRunner::new(PtConfig { cases: 100, failure_persistence: None, ..PtConfig::default() });
    runner
        .run(&(source, 1usize..1500), |(src, budget)| {
            largest.set(largest.get().max(src.len()));
            let slices = slice_program(&ProgramUnit::new("gen.py", src.clone()), budget, &keywords);
            let joined: String = slices.iter().map(|s| s.text.as_str()).collect();
            prop_assert_eq!(&joined, &src);
            for (i, s) in slices.iter().enumerate() {
                prop_assert_eq!(s.index, i);
                prop_assert!(s.est_tokens <= budget, "slice {} has {} tokens over budget {}", i, s.est_tokens, budget);
                prop_assert!(!s.text.is_empty());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("100 sources up to {} bytes reassemble within budget", largest.get()))
}

// --- 9 -------------------------------------------------------------------

fn live_smoke() -> Outcome {
    if std::env::var("CAMTAX_LIVE_SMOKE").as_deref() != Ok("1") {
        return Ok("NOT REPRODUCIBLE offline (scripted suites above stand in); live smoke test skipped (set CAMTAX_LIVE_SMOKE=1)".into());
    }
    let var = |k: &str| std::env::var(k).map_err(|_| format!("{k} is not set"));
    let backend = BackendConfig::live(&var("CAMTAX_LIVE_ENDPOINT")?, &var("CAMTAX_LIVE_MODEL")?, &var("CAMTAX_LIVE_KEY_ENV")?);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = tmp.path().join("corpus");
    fs::create_dir(&corpus).map_err(|e| e.to_string())?;
    for name in ["md5_digest.py", "EcbCipher.java", "static_iv.go", "sha256_ok.py", "legacy_init.c"] {
        fs::copy(fixture("corpus").join(name), corpus.join(name)).map_err(|e| e.to_string())?;
    }
    let config = small_batch_config(&corpus, &tmp.path().join("runs"), backend);
    let mut p = Pipeline::open(config, Some("live")).map_err(|e| e.to_string())?;
    let result = p.identify().map_err(|e| e.to_string())?;
    Ok(format!(
        "NOT REPRODUCIBLE at full scale; live smoke on 5 files found {} instances",
        result.all_instances().count()
    ))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 9] = [
        ("metrics reproduction", metrics, Duration::from_secs(1)),
        ("OpenSSL init/cleanse rule", openssl_rule, Duration::from_secs(1)),
        ("constraint rules", constraint_rules, Duration::from_secs(1)),
        ("order checker vs regex oracle", order_oracle, Duration::from_secs(30)),
        ("pipeline determinism and resume", determinism, Duration::from_secs(60)),
        ("taxonomy invariants", taxonomy_invariants, Duration::from_secs(60)),
        ("classification conservation", conservation, Duration::from_secs(60)),
        ("slicing round trip", slicing, Duration::from_secs(60)),
        ("live-model results", live_smoke, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panic".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?} ({detail})")),
            other => other,
        };
        match outcome {
            Ok(detail) if detail.starts_with("NOT REPRODUCIBLE") => {
                println!("criterion {} NOT REPRODUCIBLE  {name}: {detail} [{elapsed:.2?}]", i + 1)
            }
            Ok(detail) => println!("criterion {} PASS  {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {why} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
