//! Classification phase: the summarization loop groups instances of the
//! same misuse and distills one base category per group; the merging loop
//! folds each batch's categories into the accumulated set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::estimate_tokens;
use crate::error::{Error, Result};
use crate::identification::CamInstance;
use crate::llm::Gateway;
use crate::prompts::{self, is_no_misuse, Answer, PromptSet};
use crate::store::{RunStore, Stage};

/// Instances of one misuse merged into a single record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedInstance {
    #[serde(rename = "abstract")]
    pub summary: String,
    pub detail: String,
    pub code_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryKind {
    Base,
    Abstract,
}

/// A misuse category `⟨title, explanation⟩`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CamCategory {
    pub id: String,
    pub title: String,
    pub explanation: String,
    pub kind: CategoryKind,
    #[serde(default)]
    pub source_code_ids: Vec<String>,
}

/// Content-derived id of a category.
pub fn category_id(title: &str, explanation: &str) -> String {
    let mut h = Sha256::new();
    h.update(title.as_bytes());
    h.update([0x1f]);
    h.update(explanation.as_bytes());
    format!("cat-{}", &hex::encode(h.finalize())[..12])
}

impl CamCategory {
    pub fn base(title: impl Into<String>, explanation: impl Into<String>, source_code_ids: Vec<String>) -> Self {
        let (title, explanation) = (title.into(), explanation.into());
        CamCategory {
            id: category_id(&title, &explanation),
            title,
            explanation,
            kind: CategoryKind::Base,
            source_code_ids,
        }
    }

    pub fn abstract_category(title: impl Into<String>, explanation: impl Into<String>) -> Self {
        let (title, explanation) = (title.into(), explanation.into());
        CamCategory {
            id: category_id(&title, &explanation),
            title,
            explanation,
            kind: CategoryKind::Abstract,
            source_code_ids: Vec::new(),
        }
    }

    fn absorb_sources(&mut self, ids: &[String]) {
        for id in ids {
            if !self.source_code_ids.contains(id) {
                self.source_code_ids.push(id.clone());
            }
        }
    }
}

fn validate_groups(groups: &[prompts::GroupSpec], n: usize) -> std::result::Result<(), String> {
    let mut seen = vec![false; n];
    for g in groups {
        if g.members.is_empty() {
            return Err(format!("group `{}` has no members", g.summary));
        }
        for &m in &g.members {
            if m >= n {
                return Err(format!("member id {m} does not exist (ids are 0..{})", n - 1));
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(format!("summary {m} is assigned to more than one group"));
            }
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(format!("summary {missing} is not assigned to any group"));
    }
    Ok(())
}

fn merge_group(group: &prompts::GroupSpec, instances: &[CamInstance]) -> MergedInstance {
    let mut code_ids: Vec<String> = Vec::new();
    let mut details = Vec::new();
    for &m in &group.members {
        let inst = &instances[m];
        if !code_ids.contains(&inst.code) {
            code_ids.push(inst.code.clone());
        }
        details.push(format!("[{}] {}", inst.code, inst.detail));
    }
    MergedInstance { summary: group.summary.trim().to_string(), detail: details.join("\n"), code_ids }
}

fn failed(stage: &str, problem: String) -> Error {
    Error::parse(format!("{stage}: {problem} (after one repair attempt)"))
}

/// Groups one batch of instances and distills one base category per group.
/// Categories with identical title and explanation are combined.
pub fn summarize_batch(
    instances: &[CamInstance],
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<(Vec<MergedInstance>, Vec<CamCategory>)> {
    if instances.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let n = instances.len();
    let group_req = prompts.summarize_group(instances)?;
    let groups = match prompts.ask(gateway, &group_req, |reply| {
        let groups = prompts::parse_groups(reply).map_err(|e| e.to_string())?;
        validate_groups(&groups, n)?;
        Ok(groups)
    })? {
        Answer::Parsed { value, .. } => value,
        Answer::Failed { problem, .. } => return Err(failed("grouping", problem)),
    };
    let merged: Vec<MergedInstance> = groups.iter().map(|g| merge_group(g, instances)).collect();

    let cat_req = prompts.summarize_category(&merged)?;
    let raw = match prompts.ask(gateway, &cat_req, |reply| {
        let cats = prompts::parse_categories(reply).map_err(|e| e.to_string())?;
        if cats.len() != merged.len() {
            return Err(format!("expected {} categories, one per merged instance, got {}", merged.len(), cats.len()));
        }
        Ok(cats)
    })? {
        Answer::Parsed { value, .. } => value,
        Answer::Failed { problem, .. } => return Err(failed("category summarization", problem)),
    };

    let mut categories: Vec<CamCategory> = Vec::with_capacity(raw.len());
    for (cat, m) in raw.into_iter().zip(&merged) {
        let cat = CamCategory::base(cat.title, cat.explanation, m.code_ids.clone());
        match categories.iter_mut().find(|c| c.id == cat.id) {
            Some(existing) => existing.absorb_sources(&cat.source_code_ids),
            None => categories.push(cat),
        }
    }
    Ok((merged, categories))
}

fn validate_decisions(
    decisions: &[prompts::MergeDecision],
    incoming: usize,
    existing: usize,
) -> std::result::Result<(), String> {
    let mut seen = BTreeSet::new();
    for d in decisions {
        if d.incoming >= incoming {
            return Err(format!("incoming index {} does not exist", d.incoming));
        }
        if !seen.insert(d.incoming) {
            return Err(format!("incoming index {} is decided twice", d.incoming));
        }
        if let Some(j) = d.duplicate_of {
            if j >= existing {
                return Err(format!("existing index {j} does not exist"));
            }
        }
    }
    Ok(())
}

/// Splits `cats` into consecutive chunks whose listing fits `budget` tokens.
fn chunk_by_budget(cats: &[CamCategory], budget: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut used = 0;
    for (i, c) in cats.iter().enumerate() {
        let cost = estimate_tokens(&c.title) + estimate_tokens(&c.explanation) + 12;
        if i > start && used + cost > budget {
            out.push(start..i);
            start = i;
            used = 0;
        }
        used += cost;
    }
    if start < cats.len() {
        out.push(start..cats.len());
    }
    out
}

/// Folds `incoming` into `accumulated`. Categories with an id already
/// present are absorbed without a model call; the rest are compared
/// against the accumulated set (chunked to `budget` tokens per prompt).
/// A duplicate's source ids are unioned into the retained category;
/// non-duplicates are appended in arrival order.
pub fn merge_categories(
    accumulated: &[CamCategory],
    incoming: &[CamCategory],
    gateway: &Gateway,
    prompts: &PromptSet,
    budget: usize,
) -> Result<Vec<CamCategory>> {
    let mut result: Vec<CamCategory> = accumulated.to_vec();
    let mut pending: Vec<CamCategory> = Vec::new();
    for cat in incoming {
        if let Some(existing) = result.iter_mut().find(|c| c.id == cat.id) {
            existing.absorb_sources(&cat.source_code_ids);
        } else if let Some(p) = pending.iter_mut().find(|c| c.id == cat.id) {
            p.absorb_sources(&cat.source_code_ids);
        } else {
            pending.push(cat.clone());
        }
    }

    let base_len = accumulated.len();
    if !pending.is_empty() && base_len > 0 {
        for range in chunk_by_budget(&result[..base_len], (budget / 2).max(1)) {
            if pending.is_empty() {
                break;
            }
            let existing: Vec<&CamCategory> = result[range.clone()].iter().collect();
            let incoming_refs: Vec<&CamCategory> = pending.iter().collect();
            let req = prompts.merge_categories(&existing, &incoming_refs)?;
            let (n_in, n_ex) = (incoming_refs.len(), existing.len());
            let decisions = match prompts.ask(gateway, &req, |reply| {
                let d = prompts::parse_merge_decisions(reply).map_err(|e| e.to_string())?;
                validate_decisions(&d, n_in, n_ex)?;
                Ok(d)
            })? {
                Answer::Parsed { value, .. } => value,
                Answer::Failed { problem, .. } => return Err(failed("category merging", problem)),
            };
            let mut absorbed = vec![false; pending.len()];
            for d in decisions {
                if let Some(j) = d.duplicate_of {
                    let target = range.start + j;
                    let sources = pending[d.incoming].source_code_ids.clone();
                    log::debug!("merging category `{}` into `{}`", pending[d.incoming].title, result[target].title);
                    result[target].absorb_sources(&sources);
                    absorbed[d.incoming] = true;
                }
            }
            let mut keep = absorbed.iter().map(|a| !a);
            pending.retain(|_| keep.next().unwrap_or(true));
        }
    }
    result.extend(pending);
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub summaries_processed: usize,
    pub category_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOptions {
    pub summaries_per_request: usize,
    /// Token budget for one merge prompt's category listing.
    pub token_budget: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { summaries_per_request: 20, token_budget: crate::corpus::DEFAULT_TOKEN_BUDGET }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub merged_instances: Vec<MergedInstance>,
    pub categories: Vec<CamCategory>,
    pub growth: Vec<GrowthPoint>,
    /// "No misuse" reports seen and left out of summarization.
    pub no_misuse_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ClassifyBatch {
    merged: Vec<MergedInstance>,
    batch_categories: Vec<CamCategory>,
    accumulated: Vec<CamCategory>,
    growth: GrowthPoint,
}

/// Summarizes instances in batches and merges each batch's categories
/// into the running set, checkpointing after every batch.
pub fn run_classification(
    instances: &[CamInstance],
    gateway: &Gateway,
    prompts: &PromptSet,
    mut store: Option<&mut RunStore>,
    opts: &ClassifyOptions,
) -> Result<ClassificationResult> {
    let (skipped, work): (Vec<&CamInstance>, Vec<&CamInstance>) =
        instances.iter().partition(|i| is_no_misuse(&i.summary));
    let work: Vec<CamInstance> = work.into_iter().cloned().collect();

    let mut batches: Vec<ClassifyBatch> = match store.as_deref() {
        Some(st) => st.load_batches(Stage::Classify)?,
        None => Vec::new(),
    };
    let per = opts.summaries_per_request.max(1);
    let mut processed: usize = batches.last().map_or(0, |b| b.growth.summaries_processed);
    for (index, chunk) in work.chunks(per).enumerate().skip(batches.len()) {
        let accumulated = batches.last().map(|b| b.accumulated.clone()).unwrap_or_default();
        let (merged, batch_categories) = summarize_batch(chunk, gateway, prompts)?;
        let accumulated = merge_categories(&accumulated, &batch_categories, gateway, prompts, opts.token_budget)?;
        processed += chunk.len();
        let batch = ClassifyBatch {
            growth: GrowthPoint { summaries_processed: processed, category_count: accumulated.len() },
            merged,
            batch_categories,
            accumulated,
        };
        if let Some(st) = store.as_deref_mut() {
            st.save_batch(Stage::Classify, index, &batch)?;
        }
        batches.push(batch);
    }

    Ok(ClassificationResult {
        categories: batches.last().map(|b| b.accumulated.clone()).unwrap_or_default(),
        growth: batches.iter().map(|b| b.growth).collect(),
        merged_instances: batches.into_iter().flat_map(|b| b.merged).collect(),
        no_misuse_skipped: skipped.len(),
    })
}
