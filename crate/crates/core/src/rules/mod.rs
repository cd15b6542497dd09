//! Detection rules in a CrySL-like text format and a lexical checker.
//!
//! ```text
//! SPEC openssl_init
//! OBJECTS
//!   a: OPENSSL_init_crypto()
//!   b: OPENSSL_cleanse()
//!   c: OPENSSL_add_all_digests()
//! ORDER
//!   a*b
//! CONSTRAINTS
//! FORBIDDEN
//!   c
//! ```
//!
//! Two extension sections are accepted: `BLACKLIST` (one module per line)
//! and `LITERALS` (`string min=8 hints=key,secret` or `int hints=seed`).

mod pattern;
mod trace;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::classification::CamCategory;
use crate::corpus::ProgramUnit;
use crate::error::{Error, Result};

pub use pattern::{OrderPattern, PatternAst};
pub use trace::{extract_call_trace, trace_program, ApiCall, ApiCallTrace, Arg, Assignment, Literal};

/// An API an object label stands for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiObject {
    pub name: String,
    /// Match the whole dotted name instead of only the trailing identifier.
    pub qualified: bool,
}

impl ApiObject {
    pub fn matches(&self, call: &ApiCall) -> bool {
        if self.qualified {
            let full = &call.api_name;
            let n = self.name.len();
            full.len() >= n
                && full[full.len() - n..].eq_ignore_ascii_case(&self.name)
                && (full.len() == n || full.as_bytes()[full.len() - n - 1] == b'.')
        } else {
            let simple = self.name.rsplit('.').next().unwrap_or(&self.name);
            call.simple_name().eq_ignore_ascii_case(simple)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    InSet,
}

impl ConstraintOp {
    fn symbol(self) -> &'static str {
        match self {
            ConstraintOp::Eq => "==",
            ConstraintOp::Ne => "!=",
            ConstraintOp::Lt => "<",
            ConstraintOp::Le => "<=",
            ConstraintOp::Gt => ">",
            ConstraintOp::Ge => ">=",
            ConstraintOp::InSet => "in",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConstraintValue {
    Scalar(Literal),
    Set(Vec<Literal>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub label: String,
    pub arg_index: usize,
    pub op: ConstraintOp,
    pub value: ConstraintValue,
}

fn show_literal(l: &Literal) -> String {
    match l {
        Literal::Int(i) => i.to_string(),
        Literal::Str(s) => serde_json::to_string(s).expect("string serializes"),
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let value = match &self.value {
            ConstraintValue::Scalar(l) => show_literal(l),
            ConstraintValue::Set(items) => {
                format!("{{{}}}", items.iter().map(show_literal).collect::<Vec<_>>().join(", "))
            }
        };
        write!(f, "{}[{}] {} {}", self.label, self.arg_index, self.op.symbol(), value)
    }
}

impl Constraint {
    /// `Some(holds)` for comparable literals, `None` when the argument
    /// cannot be evaluated.
    pub fn evaluate(&self, arg: &Literal) -> Option<bool> {
        use ConstraintOp::*;
        match (&self.value, arg) {
            (ConstraintValue::Set(items), a) if self.op == InSet => {
                items.iter().any(|i| std::mem::discriminant(i) == std::mem::discriminant(a)).then(|| items.contains(a))
            }
            (ConstraintValue::Scalar(Literal::Int(want)), Literal::Int(got)) => Some(match self.op {
                Eq => got == want,
                Ne => got != want,
                Lt => got < want,
                Le => got <= want,
                Gt => got > want,
                Ge => got >= want,
                InSet => return None,
            }),
            (ConstraintValue::Scalar(Literal::Str(want)), Literal::Str(got)) => match self.op {
                Eq => Some(got == want),
                Ne => Some(got != want),
                _ => None,
            },
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiteralKind {
    HardcodedStringSecret,
    HardcodedIntSecret,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiteralCheck {
    pub kind: LiteralKind,
    pub min_length: Option<usize>,
    pub name_hints: Vec<String>,
}

impl LiteralCheck {
    pub fn flags(&self, a: &Assignment) -> bool {
        let id = a.identifier.to_ascii_lowercase();
        if !self.name_hints.iter().any(|h| id.contains(&h.to_ascii_lowercase())) {
            return false;
        }
        let min = self.min_length.unwrap_or(1);
        match (&a.literal, self.kind) {
            (Literal::Str(s), LiteralKind::HardcodedStringSecret) => s.chars().count() >= min,
            (Literal::Int(i), LiteralKind::HardcodedIntSecret) => i.unsigned_abs().to_string().len() >= min,
            _ => false,
        }
    }
}

impl fmt::Display for LiteralCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.kind {
            LiteralKind::HardcodedStringSecret => "string",
            LiteralKind::HardcodedIntSecret => "int",
        })?;
        if let Some(m) = self.min_length {
            write!(f, " min={m}")?;
        }
        write!(f, " hints={}", self.name_hints.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionRule {
    pub name: String,
    /// Declaration order is kept.
    pub objects: Vec<(String, ApiObject)>,
    pub order: Option<OrderPattern>,
    pub constraints: Vec<Constraint>,
    pub forbidden: BTreeSet<String>,
    pub blacklist_imports: Vec<String>,
    pub literal_checks: Vec<LiteralCheck>,
}

impl DetectionRule {
    pub fn object(&self, label: &str) -> Option<&ApiObject> {
        self.objects.iter().find(|(l, _)| l == label).map(|(_, o)| o)
    }

    fn labels(&self) -> BTreeSet<String> {
        self.objects.iter().map(|(l, _)| l.clone()).collect()
    }

    /// Checks label references and that the rule can flag something.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let declared = self.labels();
        let mut referenced: Vec<&str> = self.forbidden.iter().map(String::as_str).collect();
        referenced.extend(self.constraints.iter().map(|c| c.label.as_str()));
        if let Some(o) = &self.order {
            referenced.extend(o.labels());
        }
        if let Some(l) = referenced.into_iter().find(|l| !declared.contains(*l)) {
            return Err(format!("label `{l}` is not declared in OBJECTS"));
        }
        if self.order.is_none()
            && self.constraints.is_empty()
            && self.forbidden.is_empty()
            && self.blacklist_imports.is_empty()
            && self.literal_checks.is_empty()
        {
            return Err("rule has no ORDER, CONSTRAINTS, FORBIDDEN, BLACKLIST or LITERALS entries".into());
        }
        if let Some(c) = self.literal_checks.iter().find(|c| c.name_hints.is_empty()) {
            return Err(format!("literal check `{c}` has no name hints"));
        }
        Ok(())
    }

    fn label_of(&self, call: &ApiCall, among: &BTreeSet<&str>) -> Option<&str> {
        self.objects
            .iter()
            .find(|(l, o)| among.contains(l.as_str()) && o.matches(call))
            .map(|(l, _)| l.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    Forbidden,
    Order,
    Constraint,
    BlacklistImport,
    HardcodedLiteral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_name: String,
    pub program_id: String,
    pub kind: ViolationKind,
    pub evidence: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckOutcome {
    pub violations: Vec<Violation>,
    /// Constraint arguments that were not literals.
    pub unevaluable: Vec<String>,
}

const SECTIONS: &[&str] = &["OBJECTS", "ORDER", "CONSTRAINTS", "FORBIDDEN", "BLACKLIST", "LITERALS"];

static OBJECT_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(\w+)\s*:\s*(qualified\s+)?([A-Za-z_$][\w$]*(?:(?:\.|::|->)[A-Za-z_$][\w$]*)*)\s*(\([^)]*\))?\s*;?$")
        .unwrap()
});
static CONSTRAINT_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\w+)\s*\[\s*(\d+)\s*\]\s*(==|!=|<=|>=|<|>|in\b)\s*(.+?)\s*;?$").unwrap());
static LITERAL_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(string|int)((?:\s+(?:min=\d+|hints=\S+))*)$").unwrap());
static SCALAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"^\s*(-?\d+|"(?:[^"\\]|\\.)*")\s*(?:,|$)"#).unwrap());

fn parse_scalar(text: &str) -> Option<(Literal, usize)> {
    let caps = SCALAR.captures(text)?;
    let tok = &caps[1];
    let lit = if tok.starts_with('"') {
        Literal::Str(serde_json::from_str(tok).ok()?)
    } else {
        Literal::Int(tok.parse().ok()?)
    };
    Some((lit, caps.get(0).unwrap().end()))
}

fn parse_value(text: &str, op: ConstraintOp) -> std::result::Result<ConstraintValue, String> {
    let text = text.trim();
    if op == ConstraintOp::InSet {
        let inner = text
            .strip_prefix('{')
            .and_then(|t| t.strip_suffix('}'))
            .ok_or("`in` needs a set such as {96, 128}")?;
        let mut items = Vec::new();
        let mut rest = inner.trim();
        while !rest.is_empty() {
            let (lit, used) = parse_scalar(rest).ok_or_else(|| format!("bad set element in `{inner}`"))?;
            items.push(lit);
            rest = rest[used..].trim_start();
        }
        if items.is_empty() {
            return Err("empty set".into());
        }
        return Ok(ConstraintValue::Set(items));
    }
    match parse_scalar(text) {
        Some((lit, used)) if used == text.len() => Ok(ConstraintValue::Scalar(lit)),
        _ => Err(format!("bad constraint value `{text}`")),
    }
}

/// Parses rule text. The name comes from a `SPEC` line, else stays empty.
pub fn parse_rule(text: &str) -> Result<DetectionRule> {
    let mut rule = DetectionRule {
        name: String::new(),
        objects: Vec::new(),
        order: None,
        constraints: Vec::new(),
        forbidden: BTreeSet::new(),
        blacklist_imports: Vec::new(),
        literal_checks: Vec::new(),
    };
    let mut section: Option<&str> = None;
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut order_text: Option<(usize, String)> = None;
    let mut constraint_lines: Vec<(usize, &str)> = Vec::new();
    let mut forbidden_lines: Vec<(usize, &str)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let n = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with("//") || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix("SPEC ") {
            if section.is_some() || !rule.name.is_empty() {
                return Err(Error::parse_at(n, "SPEC must come first and only once"));
            }
            rule.name = name.trim().to_string();
            continue;
        }
        let word_like = line.len() >= 3 && line.chars().all(|c| c.is_ascii_uppercase() || c == '_');
        if let Some(s) = SECTIONS.iter().find(|s| **s == line) {
            if !seen.insert(s) {
                return Err(Error::parse_at(n, format!("duplicate section {s}")));
            }
            section = Some(s);
            continue;
        }
        if word_like && rule.object(line).is_none() {
            return Err(Error::parse_at(n, format!("unknown section header `{line}`")));
        }
        match section {
            None => return Err(Error::parse_at(n, "content before the first section")),
            Some("OBJECTS") => {
                let caps = OBJECT_LINE
                    .captures(line)
                    .ok_or_else(|| Error::parse_at(n, format!("expected `label: api_name()`, got `{line}`")))?;
                let label = caps[1].to_string();
                if rule.object(&label).is_some() {
                    return Err(Error::parse_at(n, format!("label `{label}` declared twice")));
                }
                let name = caps[3].replace("::", ".").replace("->", ".");
                rule.objects.push((label, ApiObject { name, qualified: caps.get(2).is_some() }));
            }
            Some("ORDER") => {
                let entry = order_text.get_or_insert((n, String::new()));
                entry.1.push(' ');
                entry.1.push_str(line);
            }
            Some("CONSTRAINTS") => constraint_lines.push((n, line)),
            Some("FORBIDDEN") => forbidden_lines.push((n, line)),
            Some("BLACKLIST") => rule.blacklist_imports.extend(
                line.split([',', ' ', '\t']).filter(|s| !s.is_empty()).map(str::to_string),
            ),
            Some("LITERALS") => {
                let caps = LITERAL_LINE
                    .captures(line)
                    .ok_or_else(|| Error::parse_at(n, format!("expected `string|int [min=N] hints=a,b`, got `{line}`")))?;
                let mut check = LiteralCheck {
                    kind: if &caps[1] == "string" {
                        LiteralKind::HardcodedStringSecret
                    } else {
                        LiteralKind::HardcodedIntSecret
                    },
                    min_length: None,
                    name_hints: Vec::new(),
                };
                for opt in caps[2].split_whitespace() {
                    if let Some(m) = opt.strip_prefix("min=") {
                        check.min_length = Some(m.parse().map_err(|_| Error::parse_at(n, "bad min"))?);
                    } else if let Some(h) = opt.strip_prefix("hints=") {
                        check.name_hints.extend(h.split(',').filter(|s| !s.is_empty()).map(str::to_string));
                    }
                }
                if check.name_hints.is_empty() {
                    return Err(Error::parse_at(n, "literal check needs hints=..."));
                }
                rule.literal_checks.push(check);
            }
            Some(other) => unreachable!("section {other}"),
        }
    }

    let declared = rule.labels();
    for (n, line) in forbidden_lines {
        for label in line.split([',', ' ', '\t']).filter(|s| !s.is_empty()) {
            let label = label.trim_end_matches(';');
            if !declared.contains(label) {
                return Err(Error::parse_at(n, format!("FORBIDDEN references undeclared label `{label}`")));
            }
            rule.forbidden.insert(label.to_string());
        }
    }
    for (n, line) in constraint_lines {
        let caps = CONSTRAINT_LINE
            .captures(line)
            .ok_or_else(|| Error::parse_at(n, format!("expected `label[index] op value`, got `{line}`")))?;
        let label = caps[1].to_string();
        if !declared.contains(&label) {
            return Err(Error::parse_at(n, format!("constraint references undeclared label `{label}`")));
        }
        let op = match &caps[3] {
            "==" => ConstraintOp::Eq,
            "!=" => ConstraintOp::Ne,
            "<" => ConstraintOp::Lt,
            "<=" => ConstraintOp::Le,
            ">" => ConstraintOp::Gt,
            ">=" => ConstraintOp::Ge,
            _ => ConstraintOp::InSet,
        };
        let value = parse_value(&caps[4], op).map_err(|e| Error::parse_at(n, e))?;
        let arg_index = caps[2].parse().map_err(|_| Error::parse_at(n, "bad argument index"))?;
        rule.constraints.push(Constraint { label, arg_index, op, value });
    }
    if let Some((n, text)) = order_text {
        rule.order = Some(OrderPattern::parse(&text, &declared).map_err(|e| Error::parse_at(n, e))?);
    }
    rule.validate().map_err(Error::parse)?;
    Ok(rule)
}

/// Reads a rule file; a rule without `SPEC` is named after the file stem.
pub fn load_rule(path: &Path) -> Result<DetectionRule> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rule = parse_rule(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse { line, message: format!("{}: {message}", path.display()) },
        other => other,
    })?;
    if rule.name.is_empty() {
        rule.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(rule)
}

/// Every `*.rule` / `*.crysl` file in `dir`, sorted by file name.
pub fn load_rules_dir(dir: &Path) -> Result<Vec<DetectionRule>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "rule" || x == "crysl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_rule(p)).collect()
}

fn call_text(call: &ApiCall) -> String {
    let args: Vec<String> = call
        .args
        .iter()
        .map(|a| match a.literal() {
            Some(l) => show_literal(&l),
            None => "…".to_string(),
        })
        .collect();
    format!("{}({}) at line {}", call.api_name, args.join(", "), call.line)
}

/// Checks one trace, also returning constraint arguments that could not
/// be evaluated.
pub fn check_with_log(rule: &DetectionRule, trace: &ApiCallTrace) -> CheckOutcome {
    let mut out = CheckOutcome::default();
    let mut push = |kind, evidence: String| {
        out.violations.push(Violation {
            rule_name: rule.name.clone(),
            program_id: trace.program_id.clone(),
            kind,
            evidence,
        })
    };

    let forbidden: BTreeSet<&str> = rule.forbidden.iter().map(String::as_str).collect();
    for call in &trace.calls {
        if let Some(label) = rule.label_of(call, &forbidden) {
            push(ViolationKind::Forbidden, format!("forbidden call {} (label {label})", call_text(call)));
        }
    }

    if let Some(order) = &rule.order {
        let labels = order.labels();
        let projected: Vec<&str> = trace.calls.iter().filter_map(|c| rule.label_of(c, &labels)).collect();
        if !projected.is_empty() && !order.matches(&projected) {
            push(
                ViolationKind::Order,
                format!("call sequence `{}` does not match ORDER {order}", projected.join(" ")),
            );
        }
    }

    let mut unevaluable = Vec::new();
    for c in &rule.constraints {
        let obj = rule.object(&c.label).expect("validated label");
        for call in trace.calls.iter().filter(|call| obj.matches(call)) {
            let verdict = call.args.get(c.arg_index).and_then(Arg::literal).map(|lit| (c.evaluate(&lit), lit));
            match verdict {
                Some((Some(false), lit)) => push(
                    ViolationKind::Constraint,
                    format!("{}: argument {} = {} violates {c}", call_text(call), c.arg_index, show_literal(&lit)),
                ),
                Some((Some(true), _)) => {}
                _ => unevaluable.push(format!("{}: {} not evaluable", call_text(call), c)),
            }
        }
    }

    for import in &trace.imports {
        let hit = rule.blacklist_imports.iter().find(|b| {
            import == *b || import.starts_with(&format!("{b}.")) || import.starts_with(&format!("{b}/"))
        });
        if let Some(b) = hit {
            push(ViolationKind::BlacklistImport, format!("imports `{import}` (blacklisted `{b}`)"));
        }
    }

    for a in &trace.assignments {
        if rule.literal_checks.iter().any(|c| c.flags(a)) {
            let shown = match &a.literal {
                Literal::Str(s) if s.chars().count() > 24 => format!("{:?}…", s.chars().take(24).collect::<String>()),
                other => show_literal(other),
            };
            push(ViolationKind::HardcodedLiteral, format!("`{}` = {shown} at line {}", a.identifier, a.line));
        }
    }
    out.unevaluable = unevaluable;
    out
}

pub fn check(rule: &DetectionRule, trace: &ApiCallTrace) -> Vec<Violation> {
    check_with_log(rule, trace).violations
}

/// Checks every program against every rule. Programs run in parallel;
/// results are ordered by program id, then rule name.
pub fn check_corpus(rules: &[DetectionRule], units: &[ProgramUnit]) -> Vec<Violation> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(units.len().max(1));
    let chunk = units.len().div_ceil(workers).max(1);
    let mut all: Vec<Violation> = std::thread::scope(|scope| {
        let handles: Vec<_> = units
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .flat_map(|u| {
                            let trace = trace_program(u);
                            rules.iter().flat_map(move |r| check(r, &trace)).collect::<Vec<_>>()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("rule worker panicked")).collect()
    });
    all.sort_by(|a, b| (&a.program_id, &a.rule_name).cmp(&(&b.program_id, &b.rule_name)));
    all
}

/// Renders `skeleton` as rule text headed by the category's title and
/// explanation.
pub fn emit_rule(category: &CamCategory, skeleton: &DetectionRule) -> Result<String> {
    skeleton.validate().map_err(Error::Validation)?;
    let mut out = String::new();
    out.push_str(&format!("// {}\n", category.title.trim()));
    for line in category.explanation.lines() {
        out.push_str(format!("// {line}").trim_end());
        out.push('\n');
    }
    if !skeleton.name.is_empty() {
        out.push_str(&format!("SPEC {}\n", skeleton.name));
    }
    out.push_str("OBJECTS\n");
    for (label, obj) in &skeleton.objects {
        let q = if obj.qualified { "qualified " } else { "" };
        out.push_str(&format!("  {label}: {q}{}()\n", obj.name));
    }
    out.push_str("ORDER\n");
    if let Some(o) = &skeleton.order {
        out.push_str(&format!("  {o}\n"));
    }
    out.push_str("CONSTRAINTS\n");
    for c in &skeleton.constraints {
        out.push_str(&format!("  {c}\n"));
    }
    out.push_str("FORBIDDEN\n");
    for f in &skeleton.forbidden {
        out.push_str(&format!("  {f}\n"));
    }
    if !skeleton.blacklist_imports.is_empty() {
        out.push_str("BLACKLIST\n");
        for b in &skeleton.blacklist_imports {
            out.push_str(&format!("  {b}\n"));
        }
    }
    if !skeleton.literal_checks.is_empty() {
        out.push_str("LITERALS\n");
        for l in &skeleton.literal_checks {
            out.push_str(&format!("  {l}\n"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language;

    pub(crate) const FIG_RULE: &str = "OBJECTS\n  a: OPENSSL_init_crypto()\n  b: OPENSSL_cleanse()\n  c: OPENSSL_add_all_digests()\nORDER\n  a*b\nCONSTRAINTS\nFORBIDDEN\n  c\n";

    fn c_trace(src: &str) -> ApiCallTrace {
        ApiCallTrace { program_id: "p.c".into(), ..extract_call_trace(src, Language::CCpp) }
    }

    #[test]
    fn parses_the_openssl_rule() {
        let r = parse_rule(FIG_RULE).unwrap();
        let objs: Vec<(&str, &str)> = r.objects.iter().map(|(l, o)| (l.as_str(), o.name.as_str())).collect();
        assert_eq!(objs, [("a", "OPENSSL_init_crypto"), ("b", "OPENSSL_cleanse"), ("c", "OPENSSL_add_all_digests")]);
        assert_eq!(r.order.as_ref().unwrap().to_string(), "a*b");
        assert!(r.constraints.is_empty());
        assert_eq!(r.forbidden, BTreeSet::from(["c".to_string()]));
    }

    #[test]
    fn forbidden_only_rule_has_no_order() {
        let r = parse_rule("OBJECTS\n  x: CRYPTO_set_id_callback()\nFORBIDDEN\n  x\n").unwrap();
        assert!(r.order.is_none());
    }

    #[test]
    fn parse_errors_carry_lines() {
        let e = parse_rule("OBJECTS\n  a: f()\nORDER\n  a z\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: Some(4), .. }), "{e}");
        let e = parse_rule("OBJECTS\n  a: f()\nEVENTS\n  a\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: Some(3), .. }), "{e}");
        let e = parse_rule("OBJECTS\n  a: f()\nFORBIDDEN\n  q\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: Some(4), .. }), "{e}");
        let e = parse_rule("OBJECTS\n  a: f()\nORDER\n  (a\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: Some(4), .. }), "{e}");
        assert!(parse_rule("OBJECTS\n  a: f()\n").is_err(), "nothing to check");
    }

    #[test]
    fn openssl_rule_verdicts() {
        let r = parse_rule(FIG_RULE).unwrap();
        let v = check(&r, &c_trace("OPENSSL_add_all_digests();"));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::Forbidden);
        assert!(check(&r, &c_trace("OPENSSL_init_crypto(0, NULL);\nOPENSSL_cleanse(p, n);")).is_empty());
        let v = check(&r, &c_trace("OPENSSL_init_crypto(0, NULL);"));
        assert_eq!(v.iter().map(|v| v.kind).collect::<Vec<_>>(), [ViolationKind::Order]);
        // Unrelated code: inapplicable.
        assert!(check(&r, &c_trace("printf(\"hi\");")).is_empty());
    }

    #[test]
    fn constraints() {
        let r = parse_rule("OBJECTS\n  a: pbkdf2_hmac()\nCONSTRAINTS\n  a[3] >= 10000\n").unwrap();
        let py = |s: &str| extract_call_trace(s, Language::Python);
        let v = check(&r, &py("hashlib.pbkdf2_hmac('sha256', pw, salt, 1000)"));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::Constraint);
        assert!(check(&r, &py("hashlib.pbkdf2_hmac('sha256', pw, salt, 600000)")).is_empty());
        let out = check_with_log(&r, &py("hashlib.pbkdf2_hmac('sha256', pw, salt, n)"));
        assert!(out.violations.is_empty());
        assert_eq!(out.unevaluable.len(), 1);

        let r = parse_rule("OBJECTS\n  k: SecretKeySpec()\nCONSTRAINTS\n  k[1] in {\"AES\", \"HmacSHA256\"}\n").unwrap();
        let java = |s: &str| extract_call_trace(s, Language::Java);
        assert_eq!(check(&r, &java("new SecretKeySpec(raw, \"RC5\");")).len(), 1);
        assert!(check(&r, &java("new SecretKeySpec(raw, \"AES\");")).is_empty());
    }

    #[test]
    fn blacklist_and_literals() {
        let r = parse_rule("BLACKLIST\n  pyaes\nLITERALS\n  string min=8 hints=key,token\n").unwrap();
        let t = extract_call_trace("import pyaes\nAPI_TOKEN = 'abcdefgh12'\nname = 'not a secret'\n", Language::Python);
        let kinds: Vec<_> = check(&r, &t).into_iter().map(|v| v.kind).collect();
        assert_eq!(kinds, [ViolationKind::BlacklistImport, ViolationKind::HardcodedLiteral]);
    }

    #[test]
    fn qualified_objects() {
        let r = parse_rule("OBJECTS\n  m: qualified hashlib.md5()\nFORBIDDEN\n  m\n").unwrap();
        let py = |s: &str| extract_call_trace(s, Language::Python);
        assert_eq!(check(&r, &py("hashlib.md5(b'x')")).len(), 1);
        assert!(check(&r, &py("other.md5(b'x')")).is_empty());
        let r = parse_rule("OBJECTS\n  m: hashlib.md5()\nFORBIDDEN\n  m\n").unwrap();
        assert_eq!(check(&r, &py("other.md5(b'x')")).len(), 1);
    }

    #[test]
    fn emit_round_trips() {
        let cat = CamCategory::base("Insecure OpenSSL initialization", "Use OPENSSL_init_crypto.\nWipe with OPENSSL_cleanse.", vec!["x".into()]);
        let mut r = parse_rule(FIG_RULE).unwrap();
        r.name = "openssl_init".into();
        let text = emit_rule(&cat, &r).unwrap();
        assert!(text.starts_with("// Insecure OpenSSL initialization\n"));
        assert_eq!(parse_rule(&text).unwrap(), r);
    }

    #[test]
    fn emit_forbidden_only_and_invalid() {
        let cat = CamCategory::base("Insecure Nonce Reuse", "Nonces repeat.", vec!["x".into()]);
        let r = parse_rule("OBJECTS\n  n: nonce_fixed()\nFORBIDDEN\n  n\n").unwrap();
        let text = emit_rule(&cat, &r).unwrap();
        assert!(text.contains("Insecure Nonce Reuse"));
        assert_eq!(text.matches("FORBIDDEN").count(), 1);
        let mut bad = r.clone();
        bad.forbidden.insert("zz".into());
        assert!(matches!(emit_rule(&cat, &bad), Err(Error::Validation(_))));
    }

    #[test]
    fn corpus_results_are_ordered() {
        let r = parse_rule(FIG_RULE).unwrap();
        let units = vec![
            ProgramUnit::new("b.c", "OPENSSL_add_all_digests();"),
            ProgramUnit::new("a.c", "OPENSSL_init_crypto(0, NULL);"),
        ];
        let v = check_corpus(&[r], &units);
        assert_eq!(v.iter().map(|v| v.program_id.as_str()).collect::<Vec<_>>(), ["a.c", "b.c"]);
    }
}
