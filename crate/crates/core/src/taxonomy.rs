//! Hierarchical forest of misuse categories: baseline construction,
//! incremental expansion, structural validation and canonical JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classification::{category_id, CamCategory, CategoryKind};
use crate::error::{Error, Result};
use crate::llm::Gateway;
use crate::prompts::{self, Answer, PromptSet};
use crate::store::{RunStore, Stage};

const SEED_KEYWORDS: &str = include_str!("../templates/taxonomy_keywords.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordProvenance {
    Seed,
    LlmGenerated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    pub phrase: String,
    pub provenance: KeywordProvenance,
}

/// Ordered classification keywords describing root causes of misuse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeywordSet {
    entries: Vec<Keyword>,
}

impl Default for KeywordSet {
    fn default() -> Self {
        Self::seed()
    }
}

impl KeywordSet {
    /// The seven built-in root-cause keywords.
    pub fn seed() -> Self {
        Self::parse_seed(SEED_KEYWORDS)
    }

    /// One keyword per non-empty line; `#` starts a comment line.
    pub fn parse_seed(text: &str) -> Self {
        let mut set = KeywordSet { entries: Vec::new() };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            set.push(line, KeywordProvenance::Seed);
        }
        set
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            return serde_json::from_str(&text).map_err(|e| Error::parse(format!("{}: {e}", path.display())));
        }
        let set = Self::parse_seed(&text);
        if set.is_empty() {
            return Err(Error::Config(format!("keyword file {} is empty", path.display())));
        }
        Ok(set)
    }

    fn push(&mut self, phrase: &str, provenance: KeywordProvenance) -> bool {
        let phrase = phrase.trim();
        if phrase.is_empty() || self.contains(phrase) {
            return false;
        }
        self.entries.push(Keyword { phrase: phrase.to_string(), provenance });
        true
    }

    /// Appends a model-proposed keyword unless an equal one exists.
    pub fn add_generated(&mut self, phrase: &str) -> bool {
        self.push(phrase, KeywordProvenance::LlmGenerated)
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.entries.iter().any(|k| k.phrase.eq_ignore_ascii_case(phrase.trim()))
    }

    pub fn phrases(&self) -> Vec<&str> {
        self.entries.iter().map(|k| k.phrase.as_str()).collect()
    }

    pub fn entries(&self) -> &[Keyword] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Proposed additions returned by the construction and expansion prompts.
/// Node ids here are the model's labels until applied.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaxonomyDelta {
    pub new_nodes: Vec<CamCategory>,
    pub new_edges: Vec<(String, String)>,
    pub new_keywords: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DanglingEdge,
    MultiParent,
    Cycle,
    AbstractLeaf,
    BaseNonLeaf,
    BaseRoot,
}

impl ViolationKind {
    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::DanglingEdge => "dangling edge",
            ViolationKind::MultiParent => "multi-parent",
            ViolationKind::Cycle => "cycle",
            ViolationKind::AbstractLeaf => "abstract leaf",
            ViolationKind::BaseNonLeaf => "base non-leaf",
            ViolationKind::BaseRoot => "base root",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.name(), self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    /// Number of levels on the longest root-to-leaf path.
    pub depth: usize,
    pub counts_per_level: Vec<usize>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn summary(&self) -> String {
        self.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
    }
}

/// Depth above which `validate` warns.
pub const DEPTH_WARNING: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "TaxonomyFile", try_from = "TaxonomyFile")]
pub struct Taxonomy {
    pub nodes: BTreeMap<String, CamCategory>,
    pub edges: BTreeSet<(String, String)>,
    pub keywords: KeywordSet,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyFile {
    nodes: Vec<CamCategory>,
    edges: Vec<(String, String)>,
    keywords: KeywordSet,
}

impl From<Taxonomy> for TaxonomyFile {
    fn from(t: Taxonomy) -> Self {
        TaxonomyFile { nodes: t.nodes.into_values().collect(), edges: t.edges.into_iter().collect(), keywords: t.keywords }
    }
}

impl TryFrom<TaxonomyFile> for Taxonomy {
    type Error = String;

    fn try_from(file: TaxonomyFile) -> std::result::Result<Self, String> {
        let mut t = Taxonomy::new(file.keywords);
        for n in file.nodes {
            if t.nodes.contains_key(&n.id) {
                return Err(format!("duplicate node id {}", n.id));
            }
            t.insert_node(n);
        }
        t.edges = file.edges.into_iter().collect();
        Ok(t)
    }
}

impl Taxonomy {
    pub fn new(keywords: KeywordSet) -> Self {
        Taxonomy { nodes: BTreeMap::new(), edges: BTreeSet::new(), keywords }
    }

    pub fn node(&self, id: &str) -> Option<&CamCategory> {
        self.nodes.get(id)
    }

    pub fn abstract_nodes(&self) -> impl Iterator<Item = &CamCategory> {
        self.nodes.values().filter(|n| n.kind == CategoryKind::Abstract)
    }

    pub fn base_nodes(&self) -> impl Iterator<Item = &CamCategory> {
        self.nodes.values().filter(|n| n.kind == CategoryKind::Base)
    }

    pub fn parent_of(&self, id: &str) -> Option<&str> {
        self.edges.iter().find(|(_, c)| c == id).map(|(p, _)| p.as_str())
    }

    pub fn children_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |(p, _)| p == id).map(|(_, c)| c.as_str())
    }

    pub fn roots(&self) -> impl Iterator<Item = &CamCategory> {
        let children: BTreeSet<&str> = self.edges.iter().map(|(_, c)| c.as_str()).collect();
        self.nodes.values().filter(move |n| !children.contains(n.id.as_str()))
    }

    fn insert_node(&mut self, mut node: CamCategory) {
        node.source_code_ids.sort();
        node.source_code_ids.dedup();
        self.nodes.insert(node.id.clone(), node);
    }

    /// Checks every structural invariant. Violations are reported, not thrown.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut parents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (p, c) in &self.edges {
            let missing: Vec<&str> = [p, c].into_iter().filter(|id| !self.nodes.contains_key(*id)).map(|s| s.as_str()).collect();
            if !missing.is_empty() {
                violations.push(Violation {
                    kind: ViolationKind::DanglingEdge,
                    detail: format!("edge ({p}, {c}) references unknown {}", missing.join(", ")),
                });
                continue;
            }
            parents.entry(c).or_default().push(p);
            children.entry(p).or_default().push(c);
        }
        for (c, ps) in &parents {
            if ps.len() > 1 {
                violations.push(Violation {
                    kind: ViolationKind::MultiParent,
                    detail: format!("{c} has parents {}", ps.join(", ")),
                });
            }
        }
        if let Some(node) = self.find_cycle(&children) {
            violations.push(Violation { kind: ViolationKind::Cycle, detail: format!("cycle through {node}") });
        }
        for n in self.nodes.values() {
            let has_children = children.contains_key(n.id.as_str());
            let has_parent = parents.contains_key(n.id.as_str());
            match n.kind {
                CategoryKind::Abstract if !has_children => violations.push(Violation {
                    kind: ViolationKind::AbstractLeaf,
                    detail: format!("abstract category {} ({}) has no children", n.id, n.title),
                }),
                CategoryKind::Base if has_children => violations.push(Violation {
                    kind: ViolationKind::BaseNonLeaf,
                    detail: format!("base category {} ({}) has children", n.id, n.title),
                }),
                CategoryKind::Base if !has_parent => violations.push(Violation {
                    kind: ViolationKind::BaseRoot,
                    detail: format!("base category {} ({}) has no parent", n.id, n.title),
                }),
                _ => {}
            }
        }

        // Levels by breadth-first walk from the roots; nodes caught in a
        // cycle are unreachable and go uncounted.
        let mut counts_per_level = Vec::new();
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut frontier: Vec<&str> =
            self.nodes.keys().map(String::as_str).filter(|id| !parents.contains_key(id)).collect();
        while !frontier.is_empty() {
            counts_per_level.push(frontier.len());
            seen.extend(frontier.iter().copied());
            frontier = frontier
                .iter()
                .flat_map(|id| children.get(id).into_iter().flatten().copied())
                .filter(|c| !seen.contains(c))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
        }
        let depth = counts_per_level.len();
        let mut warnings = Vec::new();
        if depth > DEPTH_WARNING {
            warnings.push(format!("taxonomy depth {depth} exceeds {DEPTH_WARNING}"));
        }
        ValidationReport { ok: violations.is_empty(), violations, depth, counts_per_level, warnings }
    }

    fn find_cycle<'a>(&'a self, children: &BTreeMap<&'a str, Vec<&'a str>>) -> Option<&'a str> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Closed,
        }
        let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
        for start in self.nodes.keys().map(String::as_str) {
            if marks.contains_key(start) {
                continue;
            }
            let mut stack: Vec<(&str, usize)> = vec![(start, 0)];
            marks.insert(start, Mark::Open);
            while let Some((node, next)) = stack.last_mut() {
                let kids = children.get(*node).map(Vec::as_slice).unwrap_or(&[]);
                if let Some(&child) = kids.get(*next) {
                    *next += 1;
                    match marks.get(child) {
                        Some(Mark::Open) => return Some(child),
                        Some(Mark::Closed) => {}
                        None => {
                            marks.insert(child, Mark::Open);
                            stack.push((child, 0));
                        }
                    }
                } else {
                    marks.insert(node, Mark::Closed);
                    stack.pop();
                }
            }
        }
        None
    }

    /// Applies a model-proposed delta, adding `new_bases` as leaves.
    /// Model labels become content-hash ids; when a child is given two
    /// parents, the first (existing edges count first) wins. The result
    /// must pass `validate`, otherwise the delta is rejected whole.
    pub fn apply_delta(&self, delta: &TaxonomyDelta, new_bases: &[CamCategory]) -> std::result::Result<Taxonomy, String> {
        let mut next = self.clone();
        for base in new_bases {
            if base.kind != CategoryKind::Base {
                return Err(format!("category {} is not a base category", base.id));
            }
            next.insert_node(base.clone());
        }

        let mut labels: BTreeMap<String, String> = BTreeMap::new();
        for node in &delta.new_nodes {
            if next.nodes.contains_key(&node.id) {
                // The model re-declared an existing node; treat as a reference.
                labels.insert(node.id.clone(), node.id.clone());
                continue;
            }
            let id = category_id(&node.title, &node.explanation);
            if let Some(prev) = labels.get(&node.id) {
                if *prev != id {
                    return Err(format!("abstract category id `{}` is declared twice", node.id));
                }
            }
            labels.insert(node.id.clone(), id.clone());
            if !next.nodes.contains_key(&id) {
                next.insert_node(CamCategory { id, kind: CategoryKind::Abstract, source_code_ids: Vec::new(), ..node.clone() });
            }
        }
        let resolve = |label: &str| -> std::result::Result<String, String> {
            if let Some(id) = labels.get(label) {
                return Ok(id.clone());
            }
            if next.nodes.contains_key(label) {
                return Ok(label.to_string());
            }
            Err(format!("edge references unknown category id `{label}`"))
        };
        let mut added: Vec<(String, String)> = Vec::new();
        for (p, c) in &delta.new_edges {
            let (p, c) = (resolve(p)?, resolve(c)?);
            if next.edges.contains(&(p.clone(), c.clone())) || added.contains(&(p.clone(), c.clone())) {
                continue;
            }
            let existing_parent = next.parent_of(&c).map(str::to_string).or_else(|| {
                added.iter().find(|(_, ac)| *ac == c).map(|(ap, _)| ap.clone())
            });
            if let Some(kept) = existing_parent {
                log::warn!("discarding edge ({p}, {c}): {c} already has parent {kept}");
                continue;
            }
            added.push((p, c));
        }
        next.edges.extend(added);
        for k in &delta.new_keywords {
            next.keywords.add_generated(k);
        }

        let report = next.validate();
        if !report.ok {
            return Err(report.summary());
        }
        Ok(next)
    }

    /// Canonical JSON: nodes sorted by id, edges sorted, fixed key order.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("taxonomy serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: Some(e.line()), message: format!("taxonomy: {e}") })
    }
}

fn require_bases(categories: &[CamCategory]) -> Result<()> {
    if categories.is_empty() {
        return Err(Error::Input("taxonomy construction needs at least one base category".into()));
    }
    if let Some(c) = categories.iter().find(|c| c.kind != CategoryKind::Base) {
        return Err(Error::Input(format!("category {} is not a base category", c.id)));
    }
    Ok(())
}

/// Prompts for the initial structure over `base_categories`.
pub fn build_baseline(
    base_categories: &[CamCategory],
    keywords: &KeywordSet,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<Taxonomy> {
    require_bases(base_categories)?;
    let empty = Taxonomy::new(keywords.clone());
    let req = prompts.construct_taxonomy(keywords, base_categories)?;
    match prompts.ask(gateway, &req, |reply| {
        let delta = prompts::parse_taxonomy_delta(reply).map_err(|e| e.to_string())?;
        empty.apply_delta(&delta, base_categories)
    })? {
        Answer::Parsed { value, .. } => Ok(value),
        Answer::Failed { problem, .. } => Err(Error::Construction(problem)),
    }
}

/// Integrates `new_categories` into a valid taxonomy. Categories whose id
/// is already present are skipped; nothing existing is removed.
pub fn expand(
    taxonomy: &Taxonomy,
    new_categories: &[CamCategory],
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<Taxonomy> {
    let report = taxonomy.validate();
    if !report.ok {
        return Err(Error::Validation(format!("cannot expand an invalid taxonomy: {}", report.summary())));
    }
    let fresh: Vec<CamCategory> =
        new_categories.iter().filter(|c| !taxonomy.nodes.contains_key(&c.id)).cloned().collect();
    if fresh.is_empty() {
        return Ok(taxonomy.clone());
    }
    require_bases(&fresh)?;
    let req = prompts.expand_taxonomy(taxonomy, &fresh)?;
    match prompts.ask(gateway, &req, |reply| {
        let delta = prompts::parse_taxonomy_delta(reply).map_err(|e| e.to_string())?;
        taxonomy.apply_delta(&delta, &fresh)
    })? {
        Answer::Parsed { value, .. } => Ok(value),
        Answer::Failed { problem, .. } => Err(Error::Expansion(problem)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaxonomyOptions {
    pub categories_per_request: usize,
}

impl Default for TaxonomyOptions {
    fn default() -> Self {
        TaxonomyOptions { categories_per_request: 20 }
    }
}

/// Builds the baseline from the first batch and expands with the rest,
/// checkpointing the taxonomy after every batch.
pub fn build_taxonomy(
    categories: &[CamCategory],
    keywords: &KeywordSet,
    gateway: &Gateway,
    prompts: &PromptSet,
    mut store: Option<&mut RunStore>,
    opts: &TaxonomyOptions,
) -> Result<Taxonomy> {
    require_bases(categories)?;
    let per = opts.categories_per_request.max(1);
    let done = store.as_deref().map_or(0, |s| s.batches_done(Stage::Taxonomy));
    let mut current: Option<Taxonomy> = match (done, store.as_deref()) {
        (0, _) | (_, None) => None,
        (n, Some(st)) => {
            Some(st.load_batch(Stage::Taxonomy, n - 1)?)
        }
    };
    for (index, chunk) in categories.chunks(per).enumerate().skip(done) {
        let next = match &current {
            None => build_baseline(chunk, keywords, gateway, prompts)?,
            Some(t) => expand(t, chunk, gateway, prompts)?,
        };
        if let Some(st) = store.as_deref_mut() {
            st.save_batch(Stage::Taxonomy, index, &next)?;
        }
        current = Some(next);
    }
    Ok(current.expect("at least one batch"))
}
