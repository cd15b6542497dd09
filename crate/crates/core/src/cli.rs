//! Command-line front end. [`run`] returns the process exit code.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::classification::CamCategory;
use crate::corpus::load_corpus;
use crate::error::{Error, Result};
use crate::evaluation::ConfusionCounts;
use crate::llm::{BackendConfig, BackendKind, Gateway};
use crate::pipeline::{plan, Inputs, Pipeline, RunConfig};
use crate::rules::{check_corpus, emit_rule, load_rule, load_rules_dir};
use crate::store::{read_stage_file, Stage};
use crate::taxonomy::{expand, Taxonomy};

#[derive(Debug, Parser)]
#[command(name = "camtax", version, about = "Crypto API misuse identification, classification and taxonomy building")]
pub struct Cli {
    /// Run configuration (TOML or JSON).
    #[arg(long, global = true, default_value = "camtax.toml")]
    pub config: PathBuf,
    /// Run to create or resume.
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    /// Override the configured backend.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendChoice>,
    /// Print the planned request count per stage and exit.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Send every slice through the chain-of-thought loop.
    #[arg(long, global = true)]
    pub force_cot: bool,
    /// More logging (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    /// Offline deterministic responder.
    Simulated,
    /// Replay the configured cassette.
    Replay,
    /// Live HTTP endpoint from the config.
    Live,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and slice the corpus.
    Ingest,
    /// Direct and chain-of-thought identification.
    Identify {
        /// Concurrent direct-loop requests.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Summarize and merge instances into categories.
    Classify,
    #[command(subcommand)]
    Taxonomy(TaxonomyCommand),
    #[command(subcommand)]
    Rules(RulesCommand),
    /// Detection metrics and growth series.
    Eval {
        /// JSON confusion counts `{"tp":..,"fp":..,"fn":..,"tn":..}` to report instead of labels.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Every stage in order.
    Run,
}

#[derive(Debug, Subcommand)]
pub enum TaxonomyCommand {
    /// Build the taxonomy from the run's categories.
    Build,
    /// Add base categories to an existing taxonomy.
    Expand(ExpandArgs),
    /// Check a taxonomy file's structure.
    Validate {
        /// Taxonomy file (plain or run artifact); defaults to the run's taxonomy.json.
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    /// JSON array of base categories to add.
    #[arg(long)]
    pub categories: PathBuf,
    /// Taxonomy to expand; defaults to the run's taxonomy.json.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Where to write the expanded taxonomy (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum RulesCommand {
    /// Render a rule skeleton under a category header.
    Emit {
        /// Category id or title from the run's categories.json.
        #[arg(long)]
        category: String,
        /// Rule skeleton file.
        #[arg(long)]
        skeleton: PathBuf,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check source code against rule files.
    Check {
        /// Rules directory or single rule file; defaults to the configured rules_dir.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Source tree; defaults to the configured corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let mut stage = None;
    match execute(&cli, &mut stage) {
        Ok(()) => 0,
        Err(e) => {
            match stage {
                Some(s) => eprintln!("camtax: stage {s} failed: {e}"),
                None => eprintln!("camtax: {e}"),
            }
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(choice) = cli.backend {
        let old = config.backend.clone();
        config.backend = match choice {
            BackendChoice::Simulated => BackendConfig::simulated(),
            BackendChoice::Replay => {
                let path = old.cassette.clone().ok_or_else(|| Error::Config("--backend replay needs backend.cassette".into()))?;
                BackendConfig { cassette: Some(path), ..BackendConfig::replay("") }
            }
            BackendChoice::Live => BackendConfig { kind: BackendKind::LiveHttp, ..old.clone() },
        };
        config.backend.max_retries = old.max_retries;
        config.backend.retry_backoff_ms = old.retry_backoff_ms;
        config.backend.max_in_flight = old.max_in_flight;
        config.backend.validate()?;
    }
    if cli.force_cot {
        config.identify.force_cot = true;
    }
    if let Command::Identify { parallel: Some(n) } = cli.command {
        if n == 0 {
            return Err(Error::Config("--parallel must be at least 1".into()));
        }
        config.identify.parallel = n;
    }
    Ok(config)
}

fn print_plan(config: &RunConfig) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for p in plan(config)? {
        let range = match p.max_requests {
            Some(max) if max == p.min_requests => format!("{max}"),
            Some(max) => format!("{}..={max}", p.min_requests),
            None => format!("{}+", p.min_requests),
        };
        let _ = writeln!(out, "{:<9} {:>9} requests  {}", p.stage.name(), range, p.note);
    }
    Ok(())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Reads a taxonomy from a plain JSON file or a run artifact.
fn read_taxonomy(path: &Path) -> Result<Taxonomy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    if value.get("payload").is_some() && value.get("sha256").is_some() {
        return read_stage_file::<Taxonomy>(path).map(|(_, t)| t);
    }
    Taxonomy::from_json(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn run_taxonomy_path(cli: &Cli, config: &RunConfig) -> Result<PathBuf> {
    let id = cli.run_id.as_deref().ok_or_else(|| Error::Input("give a taxonomy file or --run-id".into()))?;
    Ok(config.runs_dir.join(id).join("taxonomy.json"))
}

fn execute(cli: &Cli, stage: &mut Option<Stage>) -> Result<()> {
    // Commands that work on plain files without a config.
    if let Command::Taxonomy(TaxonomyCommand::Validate { file: Some(file) }) = &cli.command {
        return validate_file(file);
    }
    if let Command::Rules(RulesCommand::Check { rules: Some(rules), corpus: Some(corpus) }) = &cli.command {
        return check_files(rules, corpus);
    }

    let config = load_config(cli)?;
    if cli.dry_run {
        return print_plan(&config);
    }
    match &cli.command {
        Command::Taxonomy(TaxonomyCommand::Validate { file: None }) => {
            return validate_file(&run_taxonomy_path(cli, &config)?);
        }
        Command::Rules(RulesCommand::Check { rules, corpus }) if cli.run_id.is_none() => {
            let rules = rules.clone().or(config.rules_dir.clone()).ok_or_else(|| Error::Config("no rules directory".into()))?;
            return check_files(&rules, corpus.as_ref().unwrap_or(&config.corpus_root));
        }
        Command::Taxonomy(TaxonomyCommand::Expand(args)) => return expand_cmd(cli, &config, args),
        _ => {}
    }

    let mut pipeline = Pipeline::open(config, cli.run_id.as_deref())?;
    println!("run {}", pipeline.run_dir().display());
    let result = dispatch(cli, &mut pipeline);
    *stage = pipeline.current_stage();
    result
}

fn dispatch(cli: &Cli, p: &mut Pipeline) -> Result<()> {
    match &cli.command {
        Command::Ingest => {
            let (corpus, slices) = p.ingest()?;
            println!("{} programs, {} slices, {} skipped files", corpus.units.len(), slices.len(), corpus.skipped.len());
        }
        Command::Identify { .. } => {
            let r = p.identify()?;
            println!(
                "{} instances ({} via chain of thought), {} no-misuse slices, {} unresolved",
                r.all_instances().count(),
                r.cot.instances.len(),
                r.total_no_misuse(),
                r.cot.unresolved.len()
            );
        }
        Command::Classify => {
            let cats = p.classify()?;
            println!("{} base categories", cats.len());
        }
        Command::Taxonomy(TaxonomyCommand::Build) => {
            let t = p.taxonomy()?;
            let r = t.validate();
            println!("{} nodes, {} edges, depth {}", t.nodes.len(), t.edges.len(), r.depth);
        }
        Command::Rules(RulesCommand::Emit { category, skeleton, out }) => {
            let cats = p.classify()?;
            let cat = find_category(&cats, category)?;
            let rule = load_rule(skeleton)?;
            let text = emit_rule(cat, &rule)?;
            p.store().write_file(&format!("rules/{}.rule", rule.name), text.as_bytes())?;
            write_or_print(out.as_deref(), &text)?;
        }
        Command::Rules(RulesCommand::Check { .. }) => {
            let v = p.rules()?;
            println!("{} violations (see violations.jsonl)", v.len());
        }
        Command::Eval { counts } => {
            let counts = counts.as_deref().map(read_json::<ConfusionCounts>).transpose()?;
            match p.eval(counts)? {
                Some(report) => print!("{report}"),
                None => println!("no labels configured; growth series only"),
            }
        }
        Command::Run => {
            let t = p.run_all()?;
            println!("taxonomy: {} nodes, {} edges", t.nodes.len(), t.edges.len());
        }
        Command::Taxonomy(_) => unreachable!("handled before opening a run"),
    }
    Ok(())
}

fn find_category<'a>(cats: &'a [CamCategory], key: &str) -> Result<&'a CamCategory> {
    cats.iter()
        .find(|c| c.id == key)
        .or_else(|| cats.iter().find(|c| c.title.eq_ignore_ascii_case(key)))
        .ok_or_else(|| Error::Input(format!("no category with id or title `{key}`")))
}

fn validate_file(path: &Path) -> Result<()> {
    let taxonomy = read_taxonomy(path)?;
    let report = taxonomy.validate();
    for v in &report.violations {
        println!("violation: {}: {}", v.kind.name(), v.detail);
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    if !report.ok {
        return Err(Error::Validation(format!("{} violation(s)", report.violations.len())));
    }
    println!("ok: {} nodes, depth {}, per level {:?}", taxonomy.nodes.len(), report.depth, report.counts_per_level);
    Ok(())
}

fn check_files(rules_path: &Path, corpus_root: &Path) -> Result<()> {
    let rules = if rules_path.is_dir() { load_rules_dir(rules_path)? } else { vec![load_rule(rules_path)?] };
    let corpus = if corpus_root.is_file() {
        let text = std::fs::read_to_string(corpus_root).map_err(|e| Error::io(corpus_root, e))?;
        vec![crate::corpus::ProgramUnit::new(corpus_root.to_string_lossy(), text)]
    } else {
        load_corpus(corpus_root, &[])?.units
    };
    let mut out = std::io::stdout().lock();
    for v in check_corpus(&rules, &corpus) {
        let _ = writeln!(out, "{}", serde_json::to_string(&v).expect("violation serializes"));
    }
    Ok(())
}

fn expand_cmd(cli: &Cli, config: &RunConfig, args: &ExpandArgs) -> Result<()> {
    let tax_path = match &args.taxonomy {
        Some(p) => p.clone(),
        None => run_taxonomy_path(cli, config)?,
    };
    let taxonomy = read_taxonomy(&tax_path)?;
    let categories: Vec<CamCategory> = read_json(&args.categories)?;
    let inputs = Inputs::from_config(config)?;
    let gateway = Gateway::from_config(&config.backend)?;
    let expanded = expand(&taxonomy, &categories, &gateway, &inputs.prompts)?;
    write_or_print(args.out.as_deref(), &expanded.to_json())
}
