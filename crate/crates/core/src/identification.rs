//! Identification phase: the direct loop, `split_result`, and the
//! three-step chain-of-thought loop for slices the direct pass left
//! undecided.

use serde::{Deserialize, Serialize};

use crate::corpus::CodeSlice;
use crate::error::Result;
use crate::llm::Gateway;
use crate::prompts::{try_parse_identification, Answer, ParsedIdentification, PromptKind, PromptSet, Verdict};
use crate::store::{RunStore, Stage};

/// One reported misuse: `⟨abstract, detail, code⟩`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CamInstance {
    #[serde(rename = "abstract")]
    pub summary: String,
    pub detail: String,
    /// Identifier of the program the misuse was found in.
    pub code: String,
}

impl CamInstance {
    pub fn new(summary: impl Into<String>, detail: impl Into<String>, code: impl Into<String>) -> Self {
        CamInstance { summary: summary.into(), detail: detail.into(), code: code.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceOutcome {
    pub program_id: String,
    pub slice_index: usize,
    pub parsed: ParsedIdentification,
}

/// A slice the chain-of-thought loop could not resolve either.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedSlice {
    pub program_id: String,
    pub slice_index: usize,
    pub final_reply: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotResult {
    pub outcomes: Vec<SliceOutcome>,
    pub instances: Vec<CamInstance>,
    pub no_misuse_count: usize,
    pub unresolved: Vec<UnresolvedSlice>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentificationResult {
    /// Direct-loop outcome per slice, in slice order.
    pub outcomes: Vec<SliceOutcome>,
    /// Misuse instances from decided slices (no "No misuse" entries).
    pub instances: Vec<CamInstance>,
    pub undecided_slices: Vec<CodeSlice>,
    pub no_misuse_count: usize,
    #[serde(default)]
    pub cot: CotResult,
}

impl IdentificationResult {
    pub fn from_outcomes(slices: &[CodeSlice], outcomes: Vec<SliceOutcome>) -> Self {
        let (decided, undecided) = split_result(&outcomes);
        let mut result = IdentificationResult::default();
        for o in decided {
            match o.parsed.verdict {
                Verdict::Instances => result.instances.extend(o.parsed.instances.iter().cloned()),
                Verdict::NoMisuse => result.no_misuse_count += 1,
                Verdict::Undecided => unreachable!("split_result keeps undecided apart"),
            }
        }
        result.undecided_slices = undecided
            .iter()
            .filter_map(|o| {
                slices
                    .iter()
                    .find(|s| s.program_id == o.program_id && s.index == o.slice_index)
                    .cloned()
            })
            .collect();
        result.outcomes = outcomes;
        result
    }

    pub fn with_cot(mut self, cot: CotResult) -> Self {
        self.cot = cot;
        self
    }

    /// Direct and chain-of-thought instances, in that order.
    pub fn all_instances(&self) -> impl Iterator<Item = &CamInstance> {
        self.instances.iter().chain(self.cot.instances.iter())
    }

    /// Slices that produced at least one misuse instance.
    pub fn misuse_slice_count(&self) -> usize {
        self.outcomes
            .iter()
            .chain(self.cot.outcomes.iter())
            .filter(|o| o.parsed.verdict == Verdict::Instances)
            .count()
    }

    pub fn total_no_misuse(&self) -> usize {
        self.no_misuse_count + self.cot.no_misuse_count
    }

    /// Program ids with at least one reported misuse.
    pub fn flagged_programs(&self) -> std::collections::BTreeSet<&str> {
        self.all_instances().map(|i| i.code.as_str()).collect()
    }
}

/// Partitions outcomes into decided and undecided, preserving order.
pub fn split_result(outcomes: &[SliceOutcome]) -> (Vec<&SliceOutcome>, Vec<&SliceOutcome>) {
    outcomes.iter().partition(|o| o.parsed.verdict != Verdict::Undecided)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifyOptions {
    /// Slices per checkpoint.
    pub batch_size: usize,
    /// Concurrent direct-loop requests within a batch.
    pub parallel: usize,
    /// Skip the direct loop and send every slice through the chain of thought.
    pub force_cot: bool,
    /// Answer slices without crypto keywords locally as "No misuse".
    pub skip_irrelevant: bool,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions { batch_size: 10, parallel: 1, force_cot: false, skip_irrelevant: false }
    }
}

fn normalize(mut parsed: ParsedIdentification, slice: &CodeSlice) -> ParsedIdentification {
    for inst in &mut parsed.instances {
        inst.code = slice.program_id.clone();
    }
    parsed
}

fn outcome(slice: &CodeSlice, parsed: ParsedIdentification) -> SliceOutcome {
    SliceOutcome { program_id: slice.program_id.clone(), slice_index: slice.index, parsed: normalize(parsed, slice) }
}

fn identify_one(slice: &CodeSlice, gateway: &Gateway, prompts: &PromptSet, opts: &IdentifyOptions) -> Result<SliceOutcome> {
    if opts.skip_irrelevant && !slice.crypto_relevant {
        let parsed = ParsedIdentification::no_misuse(&slice.program_id, "Skipped: no cryptography-related keywords.");
        return Ok(outcome(slice, parsed));
    }
    let request = prompts.direct_identify(slice)?;
    let parsed = match prompts.ask(gateway, &request, |r| try_parse_identification(r, &prompts.hedges))? {
        Answer::Parsed { value, .. } => value,
        Answer::Failed { .. } => ParsedIdentification::undecided(),
    };
    Ok(outcome(slice, parsed))
}

fn identify_batch(
    batch: &[CodeSlice],
    gateway: &Gateway,
    prompts: &PromptSet,
    opts: &IdentifyOptions,
) -> Result<Vec<SliceOutcome>> {
    if opts.parallel <= 1 {
        return batch.iter().map(|s| identify_one(s, gateway, prompts, opts)).collect();
    }
    let mut out = Vec::with_capacity(batch.len());
    for chunk in batch.chunks(opts.parallel) {
        let results: Vec<Result<SliceOutcome>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|s| scope.spawn(move || identify_one(s, gateway, prompts, opts)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("identification worker panicked")).collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

/// Runs the direct identification prompt over every slice, one request
/// per slice. With a store, each batch is committed as it completes and
/// committed batches are not re-sent.
pub fn run_direct_loop(
    slices: &[CodeSlice],
    gateway: &Gateway,
    prompts: &PromptSet,
    mut store: Option<&mut RunStore>,
    opts: &IdentifyOptions,
) -> Result<IdentificationResult> {
    if opts.force_cot {
        let outcomes = slices
            .iter()
            .map(|s| SliceOutcome {
                program_id: s.program_id.clone(),
                slice_index: s.index,
                parsed: ParsedIdentification::undecided(),
            })
            .collect();
        return Ok(IdentificationResult::from_outcomes(slices, outcomes));
    }

    let batch_size = opts.batch_size.max(1);
    let mut outcomes: Vec<SliceOutcome> = Vec::with_capacity(slices.len());
    let start = match store.as_deref() {
        Some(st) => {
            let done = st.batches_done(Stage::Identify);
            for b in st.load_batches::<Vec<SliceOutcome>>(Stage::Identify)? {
                outcomes.extend(b);
            }
            done
        }
        None => 0,
    };
    for (index, batch) in slices.chunks(batch_size).enumerate().skip(start) {
        let batch_out = identify_batch(batch, gateway, prompts, opts)?;
        if let Some(st) = store.as_deref_mut() {
            st.save_batch(Stage::Identify, index, &batch_out)?;
        }
        outcomes.extend(batch_out);
    }
    Ok(IdentificationResult::from_outcomes(slices, outcomes))
}

fn cot_one(slice: &CodeSlice, gateway: &Gateway, prompts: &PromptSet) -> Result<(SliceOutcome, Option<String>)> {
    let elements_req = prompts.cot_elements(slice)?;
    let elements = gateway.send(&elements_req)?.content;
    let knowledge_req = prompts.cot_step(&elements_req, &elements, PromptKind::CotKnowledge, slice)?;
    let knowledge = gateway.send(&knowledge_req)?.content;
    let apply_req = prompts.cot_step(&knowledge_req, &knowledge, PromptKind::CotApply, slice)?;
    match prompts.ask(gateway, &apply_req, |r| try_parse_identification(r, &prompts.hedges))? {
        Answer::Parsed { value, reply } => {
            let unresolved = (value.verdict == Verdict::Undecided).then_some(reply);
            Ok((outcome(slice, value), unresolved))
        }
        Answer::Failed { reply, .. } => Ok((outcome(slice, ParsedIdentification::undecided()), Some(reply))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CotBatch {
    outcomes: Vec<SliceOutcome>,
    unresolved: Vec<UnresolvedSlice>,
}

/// Sends each undecided slice through the elements → knowledge → apply
/// conversation. Final replies that remain undecided are recorded as
/// unresolved and contribute no instances.
pub fn run_cot_loop(
    undecided: &[CodeSlice],
    gateway: &Gateway,
    prompts: &PromptSet,
    mut store: Option<&mut RunStore>,
    batch_size: usize,
) -> Result<CotResult> {
    let mut batches: Vec<CotBatch> = match store.as_deref() {
        Some(st) => st.load_batches(Stage::Cot)?,
        None => Vec::new(),
    };
    let start = batches.len();
    for (index, chunk) in undecided.chunks(batch_size.max(1)).enumerate().skip(start) {
        let mut batch = CotBatch { outcomes: Vec::new(), unresolved: Vec::new() };
        for slice in chunk {
            let (o, unresolved) = cot_one(slice, gateway, prompts)?;
            if let Some(final_reply) = unresolved {
                batch.unresolved.push(UnresolvedSlice {
                    program_id: slice.program_id.clone(),
                    slice_index: slice.index,
                    final_reply,
                });
            }
            batch.outcomes.push(o);
        }
        if let Some(st) = store.as_deref_mut() {
            st.save_batch(Stage::Cot, index, &batch)?;
        }
        batches.push(batch);
    }

    let mut result = CotResult::default();
    for b in batches {
        for o in &b.outcomes {
            match o.parsed.verdict {
                Verdict::Instances => result.instances.extend(o.parsed.instances.iter().cloned()),
                Verdict::NoMisuse => result.no_misuse_count += 1,
                Verdict::Undecided => {}
            }
        }
        result.outcomes.extend(b.outcomes);
        result.unresolved.extend(b.unresolved);
    }
    Ok(result)
}
