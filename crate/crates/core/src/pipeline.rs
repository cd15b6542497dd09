//! Run configuration and stage orchestration over a run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classification::{run_classification, CamCategory, ClassifyOptions, GrowthPoint, MergedInstance};
use crate::corpus::{load_corpus, slice_corpus, CodeSlice, Corpus, CryptoKeywordSet, DEFAULT_TOKEN_BUDGET};
use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, growth_csv, growth_curve, load_labels, score_detection, ConfusionCounts, MetricsReport};
use crate::identification::{run_cot_loop, run_direct_loop, CamInstance, IdentificationResult, IdentifyOptions, UnresolvedSlice};
use crate::llm::{BackendConfig, GenerationParams, Gateway};
use crate::prompts::{HedgePhrases, PromptSet};
use crate::rules::{check_corpus, load_rules_dir, Violation};
use crate::store::{RunStore, Stage, StageStatus};
use crate::taxonomy::{build_taxonomy, KeywordSet, Taxonomy, TaxonomyOptions};

pub const DEFAULT_EXTENSIONS: &[&str] = &["c", "cc", "cpp", "cxx", "h", "hpp", "java", "py", "go"];

fn default_extensions() -> Vec<String> {
    DEFAULT_EXTENSIONS.iter().map(|s| s.to_string()).collect()
}
fn default_budget() -> usize {
    DEFAULT_TOKEN_BUDGET
}
fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Everything a run needs. Relative paths are resolved against the
/// config file's directory by [`RunConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_root: PathBuf,
    #[serde(default = "default_extensions")]
    pub extensions: Vec<String>,
    #[serde(default = "default_budget")]
    pub token_budget: usize,
    pub backend: BackendConfig,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub identify: IdentifyOptions,
    #[serde(default)]
    pub classify: ClassifyOptions,
    #[serde(default)]
    pub taxonomy: TaxonomyOptions,
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    #[serde(default)]
    pub keyword_seed: Option<PathBuf>,
    #[serde(default)]
    pub hedge_list: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub rules_dir: Option<PathBuf>,
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
}

impl RunConfig {
    /// A config over `corpus_root` with defaults everywhere else.
    pub fn new(corpus_root: impl Into<PathBuf>, backend: BackendConfig) -> Self {
        RunConfig {
            corpus_root: corpus_root.into(),
            extensions: default_extensions(),
            token_budget: DEFAULT_TOKEN_BUDGET,
            backend,
            generation: GenerationParams::default(),
            identify: IdentifyOptions::default(),
            classify: ClassifyOptions::default(),
            taxonomy: TaxonomyOptions::default(),
            template_dir: None,
            keyword_seed: None,
            hedge_list: None,
            labels: None,
            rules_dir: None,
            runs_dir: default_runs_dir(),
        }
    }

    /// Reads TOML (`.toml`) or JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus_root);
        fix(&mut self.runs_dir);
        for p in [
            &mut self.template_dir,
            &mut self.keyword_seed,
            &mut self.hedge_list,
            &mut self.labels,
            &mut self.rules_dir,
            &mut self.backend.cassette,
            &mut self.backend.script,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.token_budget == 0 {
            return Err(Error::Config("token_budget must be positive".into()));
        }
        self.generation.validate()?;
        self.backend.validate()?;
        let must_exist = [
            Some(&self.corpus_root),
            self.template_dir.as_ref(),
            self.keyword_seed.as_ref(),
            self.hedge_list.as_ref(),
            self.labels.as_ref(),
            self.rules_dir.as_ref(),
        ];
        if let Some(p) = must_exist.into_iter().flatten().find(|p| !p.exists()) {
            return Err(Error::Config(format!("{} does not exist", p.display())));
        }
        Ok(())
    }

    fn classify_options(&self) -> ClassifyOptions {
        ClassifyOptions { token_budget: self.token_budget, ..self.classify }
    }
}

/// Templates, keyword seed and hedge list resolved from a config.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub prompts: PromptSet,
    pub keywords: KeywordSet,
    pub config_hash: String,
}

impl Inputs {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let mut prompts = match &config.template_dir {
            Some(dir) => PromptSet::load_dir(dir)?,
            None => PromptSet::builtin(),
        };
        if let Some(path) = &config.hedge_list {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            prompts = prompts.with_hedges(HedgePhrases::parse(&text));
        }
        prompts = prompts.with_params(config.generation);
        let keywords = match &config.keyword_seed {
            Some(path) => KeywordSet::load(path)?,
            None => KeywordSet::seed(),
        };
        let config_hash = config_hash(config, &prompts, &keywords);
        Ok(Inputs { prompts, keywords, config_hash })
    }
}

/// Hash over the settings that change what a run produces. Retry and
/// concurrency knobs and the runs directory are left out.
pub fn config_hash(config: &RunConfig, prompts: &PromptSet, keywords: &KeywordSet) -> String {
    let mut c = config.clone();
    c.runs_dir = PathBuf::new();
    c.identify.parallel = 1;
    c.backend.max_retries = 0;
    c.backend.retry_backoff_ms = 0;
    c.backend.max_in_flight = 1;
    let value = serde_json::json!({
        "config": c,
        "templates": prompts.hashes(),
        "keywords": keywords,
    });
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RulesSummary {
    rules: Vec<String>,
    violations_per_rule: BTreeMap<String, usize>,
}

/// Request estimate for one stage of a dry run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedStage {
    pub stage: Stage,
    pub min_requests: usize,
    pub max_requests: Option<usize>,
    pub note: String,
}

/// Counts the requests each stage would send, without a backend.
pub fn plan(config: &RunConfig) -> Result<Vec<PlannedStage>> {
    let corpus = load_corpus(&config.corpus_root, &config.extensions)?;
    let slices = slice_corpus(&corpus.units, config.token_budget, &CryptoKeywordSet::default());
    let direct = if config.identify.force_cot {
        0
    } else if config.identify.skip_irrelevant {
        slices.iter().filter(|s| s.crypto_relevant).count()
    } else {
        slices.len()
    };
    let cot_max = 3 * slices.len();
    let cot_min = if config.identify.force_cot { cot_max } else { 0 };
    let p = |stage, min, max, note: &str| PlannedStage { stage, min_requests: min, max_requests: max, note: note.into() };
    Ok(vec![
        p(Stage::Ingest, 0, Some(0), &format!("{} programs, {} slices", corpus.units.len(), slices.len())),
        p(Stage::Identify, direct, Some(2 * direct), "one per slice, plus at most one repair each"),
        p(Stage::Cot, cot_min, Some(cot_max + slices.len()), "three per undecided slice, plus repairs"),
        p(Stage::Classify, 0, None, "two per batch of instances plus merges; depends on identification"),
        p(Stage::Taxonomy, 0, None, "one per batch of base categories; depends on classification"),
        p(Stage::Rules, 0, Some(0), "local"),
        p(Stage::Eval, 0, Some(0), "local"),
    ])
}

/// An open run with its backend.
pub struct Pipeline {
    config: RunConfig,
    inputs: Inputs,
    gateway: Gateway,
    store: RunStore,
    current: Option<Stage>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("store", &self.store).field("current", &self.current).finish()
    }
}

fn fresh_run_id() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string()
}

impl Pipeline {
    /// Opens `run_id` (resuming it) or creates a new run, with the
    /// backend from the config logging to `llm-log.jsonl`.
    pub fn open(config: RunConfig, run_id: Option<&str>) -> Result<Self> {
        let inputs = Inputs::from_config(&config)?;
        let store = Self::open_store(&config, &inputs, run_id)?;
        let gateway = Gateway::from_config(&config.backend)?.with_log(&store.path("llm-log.jsonl"))?;
        Ok(Pipeline { config, inputs, gateway, store, current: None })
    }

    /// Like [`Pipeline::open`] but with a caller-supplied gateway.
    pub fn with_gateway(config: RunConfig, run_id: Option<&str>, gateway: Gateway) -> Result<Self> {
        let inputs = Inputs::from_config(&config)?;
        let store = Self::open_store(&config, &inputs, run_id)?;
        Ok(Pipeline { config, inputs, gateway, store, current: None })
    }

    fn open_store(config: &RunConfig, inputs: &Inputs, run_id: Option<&str>) -> Result<RunStore> {
        let id = run_id.map_or_else(fresh_run_id, str::to_string);
        let dir = config.runs_dir.join(&id);
        if dir.join("manifest.json").exists() {
            let store = RunStore::open(&dir)?;
            if store.manifest().config_hash != inputs.config_hash {
                return Err(Error::Config(format!(
                    "run {id} was created with a different configuration; use a new --run-id"
                )));
            }
            log::info!("resuming run {id} at {:?}", store.resume_point());
            return Ok(store);
        }
        let store = RunStore::init(
            &config.runs_dir,
            &id,
            &inputs.config_hash,
            &config.backend.describe(),
            inputs.prompts.hashes(),
        )?;
        let text = serde_json::to_string_pretty(config).expect("config serializes");
        store.write_file("config.json", text.as_bytes())?;
        Ok(store)
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    pub fn run_dir(&self) -> &Path {
        self.store.dir()
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// The stage that was running when the last error happened.
    pub fn current_stage(&self) -> Option<Stage> {
        self.current
    }

    fn enter(&mut self, stage: Stage) -> bool {
        self.current = Some(stage);
        self.store.status(stage) != StageStatus::Done
    }

    pub fn ingest(&mut self) -> Result<(Corpus, Vec<CodeSlice>)> {
        if !self.enter(Stage::Ingest) {
            return Ok((
                self.store.load_stage(Stage::Ingest, "corpus.json")?,
                self.store.load_stage(Stage::Ingest, "slices.json")?,
            ));
        }
        let corpus = load_corpus(&self.config.corpus_root, &self.config.extensions)?;
        let slices = slice_corpus(&corpus.units, self.config.token_budget, &CryptoKeywordSet::default());
        log::info!("ingested {} programs into {} slices", corpus.units.len(), slices.len());
        self.store.save_stage(Stage::Ingest, "corpus.json", &corpus)?;
        self.store.save_stage(Stage::Ingest, "slices.json", &slices)?;
        self.store.complete_stage(Stage::Ingest)?;
        Ok((corpus, slices))
    }

    /// Direct loop followed by the chain-of-thought loop on undecided slices.
    pub fn identify(&mut self) -> Result<IdentificationResult> {
        let (_, slices) = self.ingest()?;
        let fresh = self.enter(Stage::Identify);
        let direct = run_direct_loop(&slices, &self.gateway, &self.inputs.prompts, Some(&mut self.store), &self.config.identify)?;
        if fresh {
            self.store.save_stage(Stage::Identify, "undecided.json", &direct.undecided_slices)?;
            self.store.complete_stage(Stage::Identify)?;
        }

        let fresh = self.enter(Stage::Cot);
        let cot = run_cot_loop(
            &direct.undecided_slices,
            &self.gateway,
            &self.inputs.prompts,
            Some(&mut self.store),
            self.config.identify.batch_size,
        )?;
        if fresh {
            self.store.save_stage(Stage::Cot, "cot-instances.json", &cot.instances)?;
            self.store.save_stage(Stage::Cot, "unresolved.json", &cot.unresolved)?;
            self.store.complete_stage(Stage::Cot)?;
        }
        log::info!(
            "identification: {} direct and {} chain-of-thought instances, {} unresolved",
            direct.instances.len(),
            cot.instances.len(),
            cot.unresolved.len()
        );
        Ok(direct.with_cot(cot))
    }

    pub fn classify(&mut self) -> Result<Vec<CamCategory>> {
        if self.store.status(Stage::Classify) == StageStatus::Done {
            self.current = Some(Stage::Classify);
            return self.store.load_stage(Stage::Classify, "categories.json");
        }
        let identified = self.identify()?;
        let instances: Vec<CamInstance> = identified.all_instances().cloned().collect();
        self.enter(Stage::Classify);
        let result = run_classification(
            &instances,
            &self.gateway,
            &self.inputs.prompts,
            Some(&mut self.store),
            &self.config.classify_options(),
        )?;
        let series = growth_curve(&result.growth)?;
        log::info!("classification: {} categories from {} summaries", result.categories.len(), instances.len());
        self.store.save_stage(Stage::Classify, "merged-instances.json", &result.merged_instances)?;
        self.store.save_stage(Stage::Classify, "categories.json", &result.categories)?;
        self.store.write_jsonl("growth.jsonl", &result.growth)?;
        self.store.write_file("growth.csv", growth_csv(&series).as_bytes())?;
        self.store.complete_stage(Stage::Classify)?;
        Ok(result.categories)
    }

    pub fn taxonomy(&mut self) -> Result<Taxonomy> {
        if self.store.status(Stage::Taxonomy) == StageStatus::Done {
            self.current = Some(Stage::Taxonomy);
            return self.store.load_stage(Stage::Taxonomy, "taxonomy.json");
        }
        let categories = self.classify()?;
        self.enter(Stage::Taxonomy);
        let taxonomy = if categories.is_empty() {
            log::warn!("no base categories; writing an empty taxonomy");
            Taxonomy::new(self.inputs.keywords.clone())
        } else {
            build_taxonomy(
                &categories,
                &self.inputs.keywords,
                &self.gateway,
                &self.inputs.prompts,
                Some(&mut self.store),
                &self.config.taxonomy,
            )?
        };
        let report = taxonomy.validate();
        for w in &report.warnings {
            log::warn!("taxonomy: {w}");
        }
        if !report.ok {
            return Err(Error::Validation(report.summary()));
        }
        self.store.save_stage(Stage::Taxonomy, "taxonomy.json", &taxonomy)?;
        self.store.save_stage(Stage::Taxonomy, "keywords.json", &taxonomy.keywords)?;
        self.store.complete_stage(Stage::Taxonomy)?;
        Ok(taxonomy)
    }

    /// Checks the corpus against the configured rules directory.
    pub fn rules(&mut self) -> Result<Vec<Violation>> {
        let (corpus, _) = self.ingest()?;
        if !self.enter(Stage::Rules) {
            return read_jsonl(&self.store.path("violations.jsonl"));
        }
        let violations = match &self.config.rules_dir {
            Some(dir) => {
                let rules = load_rules_dir(dir)?;
                for rule in &rules {
                    let src = dir.join(format!("{}.rule", rule.name));
                    if let Ok(text) = std::fs::read_to_string(&src) {
                        self.store.write_file(&format!("rules/{}.rule", rule.name), text.as_bytes())?;
                    }
                }
                let violations = check_corpus(&rules, &corpus.units);
                let mut per_rule: BTreeMap<String, usize> = rules.iter().map(|r| (r.name.clone(), 0)).collect();
                for v in &violations {
                    *per_rule.entry(v.rule_name.clone()).or_default() += 1;
                }
                let summary = RulesSummary { rules: rules.iter().map(|r| r.name.clone()).collect(), violations_per_rule: per_rule };
                self.store.save_stage(Stage::Rules, "rules/summary.json", &summary)?;
                violations
            }
            None => Vec::new(),
        };
        self.store.write_jsonl("violations.jsonl", &violations)?;
        self.store.complete_stage(Stage::Rules)?;
        Ok(violations)
    }

    /// Scores detection against the configured labels, or reports the
    /// given counts. Writes `metrics.json` when either is available.
    pub fn eval(&mut self, counts: Option<ConfusionCounts>) -> Result<Option<MetricsReport>> {
        let counts = match (counts, self.config.labels.clone()) {
            (Some(c), _) => Some(c),
            (None, Some(path)) => {
                let labels = load_labels(&path)?;
                let identified = self.identify()?;
                Some(score_detection(&identified, &labels)?)
            }
            (None, None) => None,
        };
        self.current = Some(Stage::Eval);
        if self.store.status(Stage::Eval) == StageStatus::Done {
            self.store.reset_from(Stage::Eval)?;
        }
        let report = counts.map(compute_metrics).transpose()?;
        if let Some(r) = &report {
            self.store.save_stage(Stage::Eval, "metrics.json", r)?;
        }
        self.store.complete_stage(Stage::Eval)?;
        Ok(report)
    }

    /// Every stage in order; returns the taxonomy.
    pub fn run_all(&mut self) -> Result<Taxonomy> {
        let taxonomy = self.taxonomy()?;
        self.rules()?;
        if self.store.status(Stage::Eval) != StageStatus::Done {
            self.eval(None)?;
        }
        self.current = None;
        Ok(taxonomy)
    }

    pub fn merged_instances(&self) -> Result<Vec<MergedInstance>> {
        self.store.load_stage(Stage::Classify, "merged-instances.json")
    }

    pub fn unresolved(&self) -> Result<Vec<UnresolvedSlice>> {
        self.store.load_stage(Stage::Cot, "unresolved.json")
    }

    pub fn growth(&self) -> Result<Vec<GrowthPoint>> {
        read_jsonl(&self.store.path("growth.jsonl"))
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Integrity(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_corpus(dir: &Path) {
        let files = [
            ("a.py", "import hashlib\nh = hashlib.md5(data)\n"),
            ("b.java", "Cipher c = Cipher.getInstance(\"AES/ECB/PKCS5Padding\");\n"),
            ("c.go", "package main\nfunc main() { println(1) }\n"),
        ];
        for (name, text) in files {
            std::fs::write(dir.join(name), text).unwrap();
        }
    }

    fn config(tmp: &Path) -> RunConfig {
        let corpus = tmp.join("corpus");
        std::fs::create_dir_all(&corpus).unwrap();
        write_corpus(&corpus);
        let mut c = RunConfig::new(corpus, BackendConfig::simulated());
        c.runs_dir = tmp.join("runs");
        c
    }

    #[test]
    fn full_run_writes_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let mut p = Pipeline::open(config(tmp.path()), Some("r")).unwrap();
        let tax = p.run_all().unwrap();
        assert!(tax.validate().ok);
        assert!(tax.base_nodes().next().is_some());
        for f in ["manifest.json", "corpus.json", "slices.json", "undecided.json", "categories.json", "taxonomy.json", "keywords.json", "growth.jsonl", "llm-log.jsonl", "violations.jsonl"] {
            assert!(p.run_dir().join(f).exists(), "{f}");
        }
        assert_eq!(p.store().resume_point(), None);
    }

    #[test]
    fn config_change_is_refused_on_resume() {
        let tmp = tempfile::tempdir().unwrap();
        let c = config(tmp.path());
        drop(Pipeline::open(c.clone(), Some("r")).unwrap());
        let mut changed = c;
        changed.token_budget = 100;
        assert!(matches!(Pipeline::open(changed, Some("r")), Err(Error::Config(_))));
    }

    #[test]
    fn toml_config_resolves_relative_paths() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(tmp.path().join("src")).unwrap();
        let path = tmp.path().join("camtax.toml");
        std::fs::write(&path, "corpus_root = \"src\"\n[backend]\nkind = \"scripted\"\nresponder = \"simulated\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.corpus_root, tmp.path().join("src"));
        assert_eq!(c.token_budget, 4095);
        std::fs::write(&path, "corpus_root = \"src\"\ntoken_budget = 0\n[backend]\nkind = \"scripted\"\nresponder = \"simulated\"\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn dry_run_counts_slices() {
        let tmp = tempfile::tempdir().unwrap();
        let plan = plan(&config(tmp.path())).unwrap();
        assert_eq!(plan[1].stage, Stage::Identify);
        assert_eq!(plan[1].min_requests, 3);
    }
}
