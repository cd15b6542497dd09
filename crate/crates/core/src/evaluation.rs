//! Detection metrics, miss and false-discovery rates, category growth
//! series and cross-taxonomy comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classification::GrowthPoint;
use crate::error::{Error, Result};
use crate::identification::IdentificationResult;

/// Hand-labelled ground truth for one program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub program_id: String,
    pub has_cam: bool,
    pub instance_count: usize,
    #[serde(default)]
    pub labeled_instances: Vec<String>,
}

impl GroundTruthLabel {
    pub fn positive(program_id: impl Into<String>, instances: Vec<String>) -> Self {
        GroundTruthLabel { program_id: program_id.into(), has_cam: true, instance_count: instances.len(), labeled_instances: instances }
    }

    pub fn negative(program_id: impl Into<String>) -> Self {
        GroundTruthLabel { program_id: program_id.into(), has_cam: false, instance_count: 0, labeled_instances: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.instance_count != self.labeled_instances.len() {
            return Err(Error::Input(format!(
                "label {}: instance_count {} but {} labelled instances",
                self.program_id,
                self.instance_count,
                self.labeled_instances.len()
            )));
        }
        if self.has_cam != (self.instance_count > 0) {
            return Err(Error::Input(format!("label {}: has_cam disagrees with instance_count", self.program_id)));
        }
        Ok(())
    }
}

/// Reads a JSON array of labels and validates each.
pub fn load_labels(path: &std::path::Path) -> Result<Vec<GroundTruthLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels: Vec<GroundTruthLabel> =
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    labels.iter().try_for_each(GroundTruthLabel::validate)?;
    Ok(labels)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// An exact ratio kept alongside its decimal value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn value(&self) -> Option<f64> {
        (self.den > 0).then(|| self.num as f64 / self.den as f64)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Undefined ratios (zero denominators) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Program-level miss rate, `fn / (tp + fn)`.
    pub fnr: Option<f64>,
    /// Program-level false discovery rate, `fp / (tp + fp)`.
    pub fdr: Option<f64>,
    pub fractions: BTreeMap<String, String>,
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("fnr", self.fnr),
            ("fdr", self.fdr),
        ];
        for (name, v) in rows {
            write!(f, "{name:<10} {}", show(v))?;
            match self.fractions.get(name) {
                Some(frac) => writeln!(f, " ({frac})")?,
                None => writeln!(f)?,
            }
        }
        Ok(())
    }
}

/// Harmonic mean of precision and recall; undefined when both are zero.
pub fn f1_from(precision: f64, recall: f64) -> Option<f64> {
    let sum = precision + recall;
    (sum > 0.0).then(|| 2.0 * precision * recall / sum)
}

pub fn compute_metrics(c: ConfusionCounts) -> Result<MetricsReport> {
    if c.total() == 0 {
        return Err(Error::Input("confusion counts are all zero".into()));
    }
    let fracs = [
        ("accuracy", Fraction { num: c.tp + c.tn, den: c.total() }),
        ("precision", Fraction { num: c.tp, den: c.tp + c.fp }),
        ("recall", Fraction { num: c.tp, den: c.tp + c.fn_ }),
        ("fnr", Fraction { num: c.fn_, den: c.tp + c.fn_ }),
        ("fdr", Fraction { num: c.fp, den: c.tp + c.fp }),
    ];
    let get = |name: &str| fracs.iter().find(|(n, _)| *n == name).and_then(|(_, f)| f.value());
    let (precision, recall) = (get("precision"), get("recall"));
    Ok(MetricsReport {
        counts: c,
        accuracy: get("accuracy"),
        precision,
        recall,
        f1: precision.zip(recall).and_then(|(p, r)| f1_from(p, r)),
        fnr: get("fnr"),
        fdr: get("fdr"),
        fractions: fracs.iter().map(|(n, f)| (n.to_string(), f.to_string())).collect(),
    })
}

/// Instance-level `(fnr, fdr)`.
pub fn compute_rates(missed: u64, labeled_total: u64, false_reports: u64, reported_total: u64) -> Result<(f64, f64)> {
    if labeled_total == 0 || reported_total == 0 {
        return Err(Error::Input("rate denominators must be positive".into()));
    }
    if missed > labeled_total || false_reports > reported_total {
        return Err(Error::Input("rate numerator exceeds its denominator".into()));
    }
    Ok((missed as f64 / labeled_total as f64, false_reports as f64 / reported_total as f64))
}

/// Checks the growth log and returns `(summaries_processed, category_count)` points.
pub fn growth_curve(log: &[GrowthPoint]) -> Result<Vec<(usize, usize)>> {
    for pair in log.windows(2) {
        if pair[1].category_count < pair[0].category_count {
            return Err(Error::Integrity(format!(
                "category count fell from {} to {} at {} summaries",
                pair[0].category_count, pair[1].category_count, pair[1].summaries_processed
            )));
        }
        if pair[1].summaries_processed < pair[0].summaries_processed {
            return Err(Error::Integrity("growth log is not in processing order".into()));
        }
    }
    Ok(log.iter().map(|p| (p.summaries_processed, p.category_count)).collect())
}

pub fn growth_csv(series: &[(usize, usize)]) -> String {
    let mut out = String::from("summaries_processed,category_count\n");
    for (s, c) in series {
        out.push_str(&format!("{s},{c}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyComparison {
    pub intersection: usize,
    pub theirs_minus_ours: usize,
    pub ours_minus_theirs: usize,
}

/// Counts shared categories through a one-to-one equivalence mapping of
/// `(our_id, their_id)` pairs.
pub fn compare_taxonomies(
    ours: &BTreeSet<String>,
    theirs: &BTreeSet<String>,
    mapping: &[(String, String)],
) -> Result<TaxonomyComparison> {
    let mut used_ours = BTreeSet::new();
    let mut used_theirs = BTreeSet::new();
    for (o, t) in mapping {
        if !ours.contains(o) {
            return Err(Error::Input(format!("mapping references unknown category `{o}` on our side")));
        }
        if !theirs.contains(t) {
            return Err(Error::Input(format!("mapping references unknown category `{t}` on their side")));
        }
        if !used_ours.insert(o) || !used_theirs.insert(t) {
            return Err(Error::Input(format!("mapping pair ({o}, {t}) reuses an id; pairs must be one-to-one")));
        }
    }
    let n = mapping.len();
    Ok(TaxonomyComparison { intersection: n, theirs_minus_ours: theirs.len() - n, ours_minus_theirs: ours.len() - n })
}

/// Program-level confusion counts: a program is predicted positive when
/// any instance was reported for it. Labelled programs without results
/// count as predicted negative.
pub fn score_detection(results: &IdentificationResult, labels: &[GroundTruthLabel]) -> Result<ConfusionCounts> {
    let by_id: BTreeMap<&str, &GroundTruthLabel> = labels.iter().map(|l| (l.program_id.as_str(), l)).collect();
    if by_id.len() != labels.len() {
        return Err(Error::Input("duplicate program ids in labels".into()));
    }
    let flagged = results.flagged_programs();
    let analysed = results.outcomes.iter().chain(&results.cot.outcomes).map(|o| o.program_id.as_str());
    if let Some(p) = flagged.iter().copied().chain(analysed).find(|p| !by_id.contains_key(p)) {
        return Err(Error::Input(format!("program `{p}` has no ground-truth label")));
    }
    let mut c = ConfusionCounts::default();
    for (id, label) in by_id {
        match (flagged.contains(id), label.has_cam) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}
