//! Semi-structured prompt templates and response parsers.
//!
//! Each template has a static instruction part, shared byte-for-byte by
//! every request of that kind in a run, and a dynamic part with
//! `{{slot}}` markers bound per entity. Template files separate the two
//! parts with a line reading `=== DYNAMIC ===`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::classification::{CamCategory, MergedInstance};
use crate::corpus::{CodeSlice, Language};
use crate::error::{Error, Result};
use crate::identification::CamInstance;
use crate::llm::{ChatRequest, Gateway, GenerationParams, Message};
use crate::taxonomy::{KeywordSet, Taxonomy, TaxonomyDelta};

const DYNAMIC_MARKER: &str = "=== DYNAMIC ===";

/// Abstract reported for code without misuse.
pub const NO_MISUSE: &str = "No misuse";

static SLOT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").expect("slot regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    DirectIdentify,
    CotElements,
    CotKnowledge,
    CotApply,
    SummarizeGroup,
    SummarizeCategory,
    MergeCategories,
    ConstructTaxonomy,
    ExpandTaxonomy,
}

impl PromptKind {
    pub const ALL: [PromptKind; 9] = [
        PromptKind::DirectIdentify,
        PromptKind::CotElements,
        PromptKind::CotKnowledge,
        PromptKind::CotApply,
        PromptKind::SummarizeGroup,
        PromptKind::SummarizeCategory,
        PromptKind::MergeCategories,
        PromptKind::ConstructTaxonomy,
        PromptKind::ExpandTaxonomy,
    ];

    /// Template file stem, also used as the request tag.
    pub fn name(self) -> &'static str {
        match self {
            PromptKind::DirectIdentify => "direct_identify",
            PromptKind::CotElements => "cot_elements",
            PromptKind::CotKnowledge => "cot_knowledge",
            PromptKind::CotApply => "cot_apply",
            PromptKind::SummarizeGroup => "summarize_group",
            PromptKind::SummarizeCategory => "summarize_category",
            PromptKind::MergeCategories => "merge_categories",
            PromptKind::ConstructTaxonomy => "construct_taxonomy",
            PromptKind::ExpandTaxonomy => "expand_taxonomy",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        let base = tag.strip_suffix(":repair").unwrap_or(tag);
        Self::ALL.into_iter().find(|k| k.name() == base)
    }

    fn builtin_text(self) -> &'static str {
        match self {
            PromptKind::DirectIdentify => include_str!("../templates/direct_identify.txt"),
            PromptKind::CotElements => include_str!("../templates/cot_elements.txt"),
            PromptKind::CotKnowledge => include_str!("../templates/cot_knowledge.txt"),
            PromptKind::CotApply => include_str!("../templates/cot_apply.txt"),
            PromptKind::SummarizeGroup => include_str!("../templates/summarize_group.txt"),
            PromptKind::SummarizeCategory => include_str!("../templates/summarize_category.txt"),
            PromptKind::MergeCategories => include_str!("../templates/merge_categories.txt"),
            PromptKind::ConstructTaxonomy => include_str!("../templates/construct_taxonomy.txt"),
            PromptKind::ExpandTaxonomy => include_str!("../templates/expand_taxonomy.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: Option<PromptKind>,
    pub static_text: String,
    pub dynamic_text: String,
    pub dynamic_slots: Vec<String>,
}

impl PromptTemplate {
    pub fn parse(kind: Option<PromptKind>, text: &str) -> Self {
        let (static_part, dynamic_part) = match text.find(DYNAMIC_MARKER) {
            Some(pos) => {
                let rest = &text[pos + DYNAMIC_MARKER.len()..];
                (&text[..pos], rest.strip_prefix('\n').unwrap_or(rest))
            }
            None => (text, ""),
        };
        let static_text = static_part.trim_end().to_string();
        let dynamic_text = dynamic_part.trim_end().to_string();
        let mut dynamic_slots: Vec<String> = Vec::new();
        for cap in SLOT.captures_iter(&dynamic_text) {
            let name = cap[1].to_string();
            if !dynamic_slots.contains(&name) {
                dynamic_slots.push(name);
            }
        }
        PromptTemplate { kind, static_text, dynamic_text, dynamic_slots }
    }

    /// Static part, a blank line, then the dynamic part with every slot
    /// substituted in a single pass.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String> {
        if let Some(missing) = self.dynamic_slots.iter().find(|s| !bindings.contains_key(s.as_str())) {
            return Err(Error::Render(missing.clone()));
        }
        if self.dynamic_text.is_empty() {
            return Ok(self.static_text.clone());
        }
        let dynamic = SLOT.replace_all(&self.dynamic_text, |cap: &regex::Captures<'_>| {
            bindings[&cap[1]].clone()
        });
        Ok(format!("{}\n\n{}", self.static_text, dynamic))
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.static_text.as_bytes());
        h.update([0u8]);
        h.update(self.dynamic_text.as_bytes());
        hex::encode(h.finalize())
    }
}

/// Case-insensitive phrases signalling an undecided answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HedgePhrases(Vec<String>);

impl HedgePhrases {
    pub fn parse(text: &str) -> Self {
        HedgePhrases(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn builtin() -> Self {
        Self::parse(include_str!("../templates/hedges.txt"))
    }

    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.0.iter().any(|p| lower.contains(p.as_str()))
    }

    pub fn phrases(&self) -> &[String] {
        &self.0
    }
}

/// All templates of one run plus the generation parameters they are sent with.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub system: String,
    templates: BTreeMap<PromptKind, PromptTemplate>,
    repair: PromptTemplate,
    pub hedges: HedgePhrases,
    pub params: GenerationParams,
}

impl PromptSet {
    pub fn builtin() -> Self {
        PromptSet {
            system: include_str!("../templates/system.txt").trim_end().to_string(),
            templates: PromptKind::ALL
                .into_iter()
                .map(|k| (k, PromptTemplate::parse(Some(k), k.builtin_text())))
                .collect(),
            repair: PromptTemplate::parse(None, include_str!("../templates/repair.txt")),
            hedges: HedgePhrases::builtin(),
            params: GenerationParams::default(),
        }
    }

    /// Built-in templates overridden by any `<name>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = Self::builtin();
        let read = |name: &str| -> Result<Option<String>> {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(t) => Ok(Some(t)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(Error::io(path, e)),
            }
        };
        for kind in PromptKind::ALL {
            if let Some(text) = read(kind.name())? {
                set.templates.insert(kind, PromptTemplate::parse(Some(kind), &text));
            }
        }
        if let Some(text) = read("system")? {
            set.system = text.trim_end().to_string();
        }
        if let Some(text) = read("repair")? {
            set.repair = PromptTemplate::parse(None, &text);
        }
        Ok(set)
    }

    pub fn with_hedges(mut self, hedges: HedgePhrases) -> Self {
        self.hedges = hedges;
        self
    }

    pub fn with_params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    pub fn template(&self, kind: PromptKind) -> &PromptTemplate {
        &self.templates[&kind]
    }

    /// Content hashes of every template, the system text and the hedge list.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = self
            .templates
            .iter()
            .map(|(k, t)| (k.name().to_string(), t.content_hash()))
            .collect();
        out.insert("repair".into(), self.repair.content_hash());
        out.insert("system".into(), hex::encode(Sha256::digest(self.system.as_bytes())));
        out.insert(
            "hedges".into(),
            hex::encode(Sha256::digest(self.hedges.0.join("\n").as_bytes())),
        );
        out
    }

    fn request(&self, kind: PromptKind, bindings: BTreeMap<&str, String>) -> Result<ChatRequest> {
        let text = self.template(kind).render(&bindings)?;
        ChatRequest::new(
            kind.name(),
            vec![Message::system(self.system.clone()), Message::user(text)],
            self.params,
        )
    }

    fn code_bindings(slice: &CodeSlice) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("code_id", slice.program_id.clone()),
            ("language", Language::from_path(&slice.program_id).fence_tag().to_string()),
            ("code", slice.text.clone()),
        ])
    }

    pub fn direct_identify(&self, slice: &CodeSlice) -> Result<ChatRequest> {
        if slice.text.is_empty() {
            return Err(Error::Input(format!("slice {} is empty", slice.key())));
        }
        self.request(PromptKind::DirectIdentify, Self::code_bindings(slice))
    }

    pub fn cot_elements(&self, slice: &CodeSlice) -> Result<ChatRequest> {
        self.request(PromptKind::CotElements, Self::code_bindings(slice))
    }

    /// Next step of a chain-of-thought conversation: the previous request,
    /// the model's reply to it, then the `next` prompt.
    pub fn cot_step(
        &self,
        previous: &ChatRequest,
        reply: &str,
        next: PromptKind,
        slice: &CodeSlice,
    ) -> Result<ChatRequest> {
        let text = self.template(next).render(&Self::code_bindings(slice))?;
        Ok(previous.follow_up(next.name(), reply, text))
    }

    pub fn summarize_group(&self, instances: &[CamInstance]) -> Result<ChatRequest> {
        let listed: Vec<Value> = instances
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                serde_json::json!({
                    "id": i, "abstract": inst.summary, "detail": inst.detail, "code": inst.code
                })
            })
            .collect();
        self.request(PromptKind::SummarizeGroup, BTreeMap::from([("instances", pretty(&listed))]))
    }

    pub fn summarize_category(&self, merged: &[MergedInstance]) -> Result<ChatRequest> {
        let listed: Vec<Value> = merged
            .iter()
            .enumerate()
            .map(|(i, m)| {
                serde_json::json!({
                    "id": i, "abstract": m.summary, "detail": m.detail, "code_ids": m.code_ids
                })
            })
            .collect();
        self.request(PromptKind::SummarizeCategory, BTreeMap::from([("merged", pretty(&listed))]))
    }

    pub fn merge_categories(&self, accumulated: &[&CamCategory], incoming: &[&CamCategory]) -> Result<ChatRequest> {
        let list = |cats: &[&CamCategory]| -> String {
            let v: Vec<Value> = cats
                .iter()
                .enumerate()
                .map(|(i, c)| serde_json::json!({"index": i, "title": c.title, "explanation": c.explanation}))
                .collect();
            pretty(&v)
        };
        self.request(
            PromptKind::MergeCategories,
            BTreeMap::from([("accumulated", list(accumulated)), ("incoming", list(incoming))]),
        )
    }

    pub fn construct_taxonomy(&self, keywords: &KeywordSet, categories: &[CamCategory]) -> Result<ChatRequest> {
        self.request(
            PromptKind::ConstructTaxonomy,
            BTreeMap::from([
                ("keywords", pretty(&keywords.phrases())),
                ("categories", category_listing(categories)),
            ]),
        )
    }

    pub fn expand_taxonomy(&self, taxonomy: &Taxonomy, categories: &[CamCategory]) -> Result<ChatRequest> {
        let abstracts: Vec<Value> = taxonomy
            .abstract_nodes()
            .map(|n| {
                serde_json::json!({
                    "id": n.id, "title": n.title, "explanation": n.explanation,
                    "parent": taxonomy.parent_of(&n.id),
                })
            })
            .collect();
        self.request(
            PromptKind::ExpandTaxonomy,
            BTreeMap::from([
                ("keywords", pretty(&taxonomy.keywords.phrases())),
                ("taxonomy", pretty(&abstracts)),
                ("categories", category_listing(categories)),
            ]),
        )
    }

    /// Re-prompt asking the model to re-emit `bad_reply` as valid JSON.
    pub fn repair(&self, original: &ChatRequest, bad_reply: &str, problem: &str) -> Result<ChatRequest> {
        let text = self.repair.render(&BTreeMap::from([("error", problem.to_string())]))?;
        Ok(original.follow_up(format!("{}:repair", original.tag), bad_reply, text))
    }

    /// Sends `request` and parses the reply, with at most one repair
    /// re-prompt when parsing fails. Backend errors propagate.
    pub fn ask<T>(
        &self,
        gateway: &Gateway,
        request: &ChatRequest,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<Answer<T>> {
        let reply = gateway.send(request)?.content;
        let problem = match parse(&reply) {
            Ok(v) => return Ok(Answer::Parsed { value: v, reply }),
            Err(p) => p,
        };
        let fix = self.repair(request, &reply, &problem)?;
        let second = gateway.send(&fix)?.content;
        Ok(match parse(&second) {
            Ok(v) => Answer::Parsed { value: v, reply: second },
            Err(problem) => Answer::Failed { problem, reply: second },
        })
    }
}

/// Outcome of [`PromptSet::ask`].
#[derive(Debug, Clone, PartialEq)]
pub enum Answer<T> {
    Parsed { value: T, reply: String },
    Failed { problem: String, reply: String },
}

fn pretty<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("prompt payload serializes")
}

fn category_listing(categories: &[CamCategory]) -> String {
    let v: Vec<Value> = categories
        .iter()
        .map(|c| serde_json::json!({"id": c.id, "title": c.title, "explanation": c.explanation}))
        .collect();
    pretty(&v)
}

/// Finds the JSON payload of a reply: the first fenced block that parses,
/// else the first JSON value starting at a `[` or `{`.
pub fn extract_json(text: &str) -> Option<Value> {
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let Some(close) = body.find("```") else { break };
        if let Ok(v) = serde_json::from_str::<Value>(body[..close].trim()) {
            return Some(v);
        }
        rest = &body[close + 3..];
    }
    if let Ok(v) = serde_json::from_str::<Value>(text.trim()) {
        return Some(v);
    }
    for (i, ch) in text.char_indices() {
        if ch == '[' || ch == '{' {
            let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
            if let Some(Ok(v)) = stream.next() {
                return Some(v);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Instances,
    NoMisuse,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedIdentification {
    pub verdict: Verdict,
    pub instances: Vec<CamInstance>,
}

impl ParsedIdentification {
    pub fn undecided() -> Self {
        ParsedIdentification { verdict: Verdict::Undecided, instances: Vec::new() }
    }

    pub fn no_misuse(code: &str, detail: &str) -> Self {
        ParsedIdentification {
            verdict: Verdict::NoMisuse,
            instances: vec![CamInstance::new(NO_MISUSE, detail, code)],
        }
    }
}

pub fn is_no_misuse(summary: &str) -> bool {
    summary.trim().trim_end_matches('.').eq_ignore_ascii_case(NO_MISUSE)
}

fn string_field(obj: &serde_json::Map<String, Value>, name: &str) -> std::result::Result<String, String> {
    match obj.get(name) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(Value::String(_)) => Err(format!("field `{name}` is empty")),
        Some(_) => Err(format!("field `{name}` is not a string")),
        None => Err(format!("missing field `{name}`")),
    }
}

fn as_array(v: Value) -> Vec<Value> {
    match v {
        Value::Array(items) => items,
        other => vec![other],
    }
}

/// Parses an identification reply. `Err` carries the schema problem and
/// means a repair re-prompt is warranted; hedged prose is `Ok(Undecided)`.
pub fn try_parse_identification(text: &str, hedges: &HedgePhrases) -> std::result::Result<ParsedIdentification, String> {
    let Some(value) = extract_json(text) else {
        if hedges.matches(text) {
            return Ok(ParsedIdentification::undecided());
        }
        return Err("reply contains no JSON".into());
    };
    let items = as_array(value);
    if items.is_empty() {
        return Err("empty array; report \"No misuse\" explicitly".into());
    }
    let mut all = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        let Value::Object(obj) = item else {
            return Err(format!("item {i} is not an object"));
        };
        let inst = CamInstance::new(
            string_field(&obj, "abstract").map_err(|e| format!("item {i}: {e}"))?,
            string_field(&obj, "detail").map_err(|e| format!("item {i}: {e}"))?,
            string_field(&obj, "code").map_err(|e| format!("item {i}: {e}"))?,
        );
        all.push(inst);
    }
    if all.iter().any(|i| hedges.matches(&i.summary)) {
        return Ok(ParsedIdentification::undecided());
    }
    let (none, misuse): (Vec<_>, Vec<_>) = all.into_iter().partition(|i| is_no_misuse(&i.summary));
    if misuse.is_empty() {
        let first = none.into_iter().next().expect("non-empty");
        return Ok(ParsedIdentification {
            verdict: Verdict::NoMisuse,
            instances: vec![CamInstance { summary: NO_MISUSE.to_string(), ..first }],
        });
    }
    Ok(ParsedIdentification { verdict: Verdict::Instances, instances: misuse })
}

/// Total identification parser: anything unusable is `Undecided`.
pub fn parse_identification(text: &str, hedges: &HedgePhrases) -> ParsedIdentification {
    try_parse_identification(text, hedges).unwrap_or_else(|_| ParsedIdentification::undecided())
}

/// Parses `[{"title", "explanation"}]` into base categories with no
/// source ids attached yet.
pub fn parse_categories(text: &str) -> Result<Vec<CamCategory>> {
    let value = extract_json(text).ok_or_else(|| Error::parse("reply contains no JSON"))?;
    as_array(value)
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            let Value::Object(obj) = item else {
                return Err(Error::parse(format!("category {i} is not an object")));
            };
            let title = string_field(&obj, "title").map_err(|e| Error::parse(format!("category {i}: {e}")))?;
            let explanation =
                string_field(&obj, "explanation").map_err(|e| Error::parse(format!("category {i}: {e}")))?;
            Ok(CamCategory::base(title, explanation, Vec::new()))
        })
        .collect()
}

/// One group proposed by the grouping prompt.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct GroupSpec {
    #[serde(rename = "abstract")]
    pub summary: String,
    pub members: Vec<usize>,
}

pub fn parse_groups(text: &str) -> Result<Vec<GroupSpec>> {
    let value = extract_json(text).ok_or_else(|| Error::parse("reply contains no JSON"))?;
    let groups: Vec<GroupSpec> =
        serde_json::from_value(Value::Array(as_array(value))).map_err(|e| Error::parse(e.to_string()))?;
    if let Some(g) = groups.iter().find(|g| g.summary.trim().is_empty()) {
        return Err(Error::parse(format!("group with members {:?} has an empty abstract", g.members)));
    }
    Ok(groups)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct MergeDecision {
    pub incoming: usize,
    pub duplicate_of: Option<usize>,
}

pub fn parse_merge_decisions(text: &str) -> Result<Vec<MergeDecision>> {
    let value = extract_json(text).ok_or_else(|| Error::parse("reply contains no JSON"))?;
    serde_json::from_value(Value::Array(as_array(value))).map_err(|e| Error::parse(e.to_string()))
}

#[derive(Deserialize)]
struct WireNode {
    id: Value,
    title: String,
    #[serde(default)]
    explanation: String,
}

#[derive(Deserialize)]
struct WireDelta {
    #[serde(default)]
    new_nodes: Vec<WireNode>,
    #[serde(default)]
    new_edges: Vec<(Value, Value)>,
    #[serde(default)]
    new_keywords: Vec<String>,
}

fn id_text(v: &Value) -> Result<String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::parse(format!("invalid node id {other}"))),
    }
}

/// Parses a construction/expansion reply. Node ids are the model's own
/// labels; [`Taxonomy::apply_delta`] maps them to stable ids.
pub fn parse_taxonomy_delta(text: &str) -> Result<TaxonomyDelta> {
    let value = extract_json(text).ok_or_else(|| Error::parse("reply contains no JSON"))?;
    let wire: WireDelta = serde_json::from_value(value).map_err(|e| Error::parse(e.to_string()))?;
    let mut delta = TaxonomyDelta::default();
    for node in wire.new_nodes {
        if node.title.trim().is_empty() {
            return Err(Error::parse("abstract category with empty title"));
        }
        let explanation = if node.explanation.trim().is_empty() {
            node.title.trim().to_string()
        } else {
            node.explanation.trim().to_string()
        };
        let mut cat = CamCategory::abstract_category(node.title.trim(), explanation);
        cat.id = id_text(&node.id)?;
        delta.new_nodes.push(cat);
    }
    for (p, c) in wire.new_edges {
        delta.new_edges.push((id_text(&p)?, id_text(&c)?));
    }
    delta.new_keywords = wire
        .new_keywords
        .into_iter()
        .map(|k| k.trim().to_string())
        .filter(|k| !k.is_empty())
        .collect();
    Ok(delta)
}
