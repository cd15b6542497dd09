//! Lexical extraction of API calls, imports and literal assignments.
//! No parsing: call-shaped tokens `name(` are read in source order.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Language, ProgramUnit};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Literal {
    Int(i64),
    Str(String),
}

/// One positional argument; anything but a bare literal is `Other`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Arg {
    Int(i64),
    Str(String),
    Other,
}

impl Arg {
    pub fn literal(&self) -> Option<Literal> {
        match self {
            Arg::Int(i) => Some(Literal::Int(*i)),
            Arg::Str(s) => Some(Literal::Str(s.clone())),
            Arg::Other => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCall {
    /// Dotted name as written, e.g. `hashlib.pbkdf2_hmac`; `::` and `->` become `.`.
    pub api_name: String,
    pub args: Vec<Arg>,
    pub line: usize,
}

impl ApiCall {
    pub fn simple_name(&self) -> &str {
        self.api_name.rsplit('.').next().unwrap_or(&self.api_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub identifier: String,
    pub literal: Literal,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCallTrace {
    pub program_id: String,
    pub calls: Vec<ApiCall>,
    pub imports: Vec<String>,
    pub assignments: Vec<Assignment>,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Ident(String),
    Num(String),
    Str(String),
    Punct(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    kind: Kind,
    line: usize,
}

const PUNCT2: &[&str] = &[
    "::", "->", "==", "!=", "<=", ">=", ":=", "=>", "&&", "||", "+=", "-=", "*=", "/=", "<<", ">>", "++", "--",
];
const PUNCT1: &str = "(){}[];,.=<>+-*/%&|^!~?:@#$";

fn punct1(c: char) -> Option<&'static str> {
    let i = PUNCT1.find(c)?;
    Some(&PUNCT1[i..i + c.len_utf8()])
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    lang: Language,
    out: Vec<Token>,
}

impl<'a> Lexer<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn bump(&mut self, n: usize) {
        self.line += self.src[self.pos..self.pos + n].matches('\n').count();
        self.pos += n;
    }

    fn skip_to(&mut self, needle: &str) {
        let n = self.rest().find(needle).map_or(self.rest().len(), |i| i + needle.len());
        self.bump(n);
    }

    fn python_like(&self) -> bool {
        self.lang == Language::Python
    }

    fn c_like(&self) -> bool {
        !self.python_like()
    }

    fn at_line_start(&self) -> bool {
        self.src[..self.pos].rsplit('\n').next().is_none_or(|l| l.trim().is_empty())
    }

    fn string(&mut self, quote: &str, raw: bool) {
        let line = self.line;
        self.bump(quote.len());
        let mut value = String::new();
        loop {
            let rest = self.rest();
            if rest.is_empty() {
                break;
            }
            if rest.starts_with(quote) {
                self.bump(quote.len());
                break;
            }
            let c = rest.chars().next().unwrap();
            if c == '\n' && quote.len() == 1 && quote != "`" {
                break; // unterminated single-line literal
            }
            if c == '\\' && !raw {
                let mut it = rest.chars();
                it.next();
                match it.next() {
                    Some(e) => {
                        value.push(match e {
                            'n' => '\n',
                            't' => '\t',
                            'r' => '\r',
                            '0' => '\0',
                            other => other,
                        });
                        self.bump(1 + e.len_utf8());
                    }
                    None => self.bump(1),
                }
                continue;
            }
            value.push(c);
            self.bump(c.len_utf8());
        }
        self.out.push(Token { kind: Kind::Str(value), line });
    }

    fn run(mut self) -> Vec<Token> {
        while let Some(c) = self.rest().chars().next() {
            let rest = self.rest();
            if c.is_whitespace() {
                self.bump(c.len_utf8());
            } else if self.c_like() && rest.starts_with("//") {
                self.skip_to("\n");
            } else if self.c_like() && rest.starts_with("/*") {
                self.skip_to("*/");
            } else if c == '#' && (self.python_like() || self.at_line_start()) {
                // Python comment or preprocessor line; imports are read separately.
                self.skip_to("\n");
            } else if self.python_like() && (rest.starts_with("\"\"\"") || rest.starts_with("'''")) {
                let q = &rest[..3];
                self.string(q, false);
            } else if c == '"' || c == '\'' {
                self.string(&rest[..1], false);
            } else if c == '`' && self.lang == Language::Go {
                self.string("`", true);
            } else if c.is_ascii_digit() {
                let n = rest.find(|d: char| !(d.is_ascii_alphanumeric() || d == '_' || d == '.')).unwrap_or(rest.len());
                self.out.push(Token { kind: Kind::Num(rest[..n].to_string()), line: self.line });
                self.bump(n);
            } else if c.is_alphabetic() || c == '_' || c == '$' {
                let n = rest.find(|d: char| !(d.is_alphanumeric() || d == '_' || d == '$')).unwrap_or(rest.len());
                let word = &rest[..n];
                let next = rest[n..].chars().next();
                let prefix = word.len() <= 2 && word.chars().all(|p| "rbufRBUF".contains(p));
                if self.python_like() && prefix && matches!(next, Some('"') | Some('\'')) {
                    let raw = word.to_ascii_lowercase().contains('r');
                    self.bump(n);
                    let rest = self.rest();
                    let q = if rest.starts_with("\"\"\"") || rest.starts_with("'''") { &rest[..3] } else { &rest[..1] };
                    self.string(q, raw);
                } else {
                    self.out.push(Token { kind: Kind::Ident(word.to_string()), line: self.line });
                    self.bump(n);
                }
            } else if let Some(p) = PUNCT2.iter().find(|p| rest.starts_with(**p)) {
                self.out.push(Token { kind: Kind::Punct(p), line: self.line });
                self.bump(2);
            } else {
                if let Some(p) = punct1(c) {
                    self.out.push(Token { kind: Kind::Punct(p), line: self.line });
                }
                self.bump(c.len_utf8());
            }
        }
        self.out
    }
}

fn parse_int(text: &str) -> Option<i64> {
    let t = text.replace('_', "");
    let t = t.trim_end_matches(['l', 'L', 'u', 'U']);
    if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        return i64::from_str_radix(hex, 16).ok();
    }
    t.parse().ok()
}

const NOT_CALLS: &[&str] = &[
    "if", "for", "while", "switch", "catch", "return", "sizeof", "elif", "with", "except", "lambda", "defined",
    "alignof", "decltype", "typeid", "and", "or", "not", "in", "is", "assert", "until", "foreach", "typeof",
    "synchronized", "import",
];
/// Go type conversions look like calls.
const GO_CONVERSIONS: &[&str] = &[
    "byte", "rune", "string", "int", "int8", "int16", "int32", "int64", "uint", "uint8", "uint16", "uint32",
    "uint64", "uintptr", "float32", "float64",
];
const DECL_KEYWORDS: &[&str] = &["def", "func", "fn", "function", "class", "struct", "interface", "macro_rules"];
/// Identifiers that may precede a call expression.
const EXPR_KEYWORDS: &[&str] = &[
    "return", "new", "else", "throw", "case", "await", "yield", "and", "or", "not", "in", "is", "defer", "go", "do",
    "print", "assert", "raise", "from", "import", "delete", "typeof", "void",
];

fn is_sep(k: &Kind) -> bool {
    matches!(k, Kind::Punct(".") | Kind::Punct("::") | Kind::Punct("->"))
}

fn ident(k: &Kind) -> Option<&str> {
    match k {
        Kind::Ident(s) => Some(s),
        _ => None,
    }
}

fn matching_close(tokens: &[Token], open: usize) -> usize {
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        match t.kind {
            Kind::Punct("(") | Kind::Punct("[") | Kind::Punct("{") => depth += 1,
            Kind::Punct(")") | Kind::Punct("]") | Kind::Punct("}") => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return i;
                }
            }
            _ => {}
        }
    }
    tokens.len()
}

fn literal_of(tokens: &[Token]) -> Option<Literal> {
    match tokens {
        [Token { kind: Kind::Num(n), .. }] => parse_int(n).map(Literal::Int),
        [Token { kind: Kind::Punct("-"), .. }, Token { kind: Kind::Num(n), .. }] => parse_int(n).map(|v| Literal::Int(-v)),
        [] => None,
        strs if strs.iter().all(|t| matches!(t.kind, Kind::Str(_))) => Some(Literal::Str(
            strs.iter()
                .map(|t| match &t.kind {
                    Kind::Str(s) => s.as_str(),
                    _ => "",
                })
                .collect(),
        )),
        _ => None,
    }
}

fn parse_args(tokens: &[Token]) -> Vec<Arg> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let mut args = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for i in 0..=tokens.len() {
        let at_end = i == tokens.len();
        if !at_end {
            match tokens[i].kind {
                Kind::Punct("(") | Kind::Punct("[") | Kind::Punct("{") => depth += 1,
                Kind::Punct(")") | Kind::Punct("]") | Kind::Punct("}") => depth = depth.saturating_sub(1),
                _ => {}
            }
        }
        if at_end || (depth == 0 && tokens[i].kind == Kind::Punct(",")) {
            let mut part = &tokens[start..i];
            // Keyword argument `name=literal` keeps its literal.
            if let [Token { kind: Kind::Ident(_), .. }, Token { kind: Kind::Punct("="), .. }, rest @ ..] = part {
                part = rest;
            }
            args.push(match literal_of(part) {
                Some(Literal::Int(v)) => Arg::Int(v),
                Some(Literal::Str(s)) => Arg::Str(s),
                None => Arg::Other,
            });
            start = i + 1;
        }
    }
    args
}

fn extract_calls(tokens: &[Token], lang: Language) -> Vec<ApiCall> {
    let mut calls = Vec::new();
    let mut go_decl_pending = false;
    for i in 0..tokens.len() {
        if lang == Language::Go && ident(&tokens[i].kind) == Some("func") {
            go_decl_pending = true;
            continue;
        }
        if go_decl_pending && tokens[i].kind == Kind::Punct("{") {
            go_decl_pending = false;
        }
        let Some(name) = ident(&tokens[i].kind) else { continue };
        if tokens.get(i + 1).map(|t| &t.kind) != Some(&Kind::Punct("(")) || NOT_CALLS.contains(&name) {
            continue;
        }
        // Walk back over `a.b::c->` qualifiers.
        let mut first = i;
        while first >= 2 && is_sep(&tokens[first - 1].kind) && ident(&tokens[first - 2].kind).is_some() {
            first -= 2;
        }
        let qualified: Vec<&str> = (first..=i).step_by(2).filter_map(|k| ident(&tokens[k].kind)).collect();
        let prev = first.checked_sub(1).map(|k| &tokens[k].kind);
        let close = matching_close(tokens, i + 1);
        let after = tokens.get(close + 1).map(|t| &t.kind);

        if prev.and_then(ident).is_some_and(|p| DECL_KEYWORDS.contains(&p)) {
            continue;
        }
        if go_decl_pending {
            go_decl_pending = false;
            continue;
        }
        if lang == Language::Go && qualified.len() == 1 && GO_CONVERSIONS.contains(&name) {
            continue;
        }
        let prev_is_type = match prev {
            Some(Kind::Ident(p)) => !EXPR_KEYWORDS.contains(&p.as_str()),
            Some(Kind::Punct(">")) | Some(Kind::Punct("]")) => true,
            _ => false,
        };
        let ends_decl = matches!(after, Some(Kind::Punct("{")) | Some(Kind::Punct(";")))
            || after.and_then(ident) == Some("throws");
        if lang != Language::Python && prev_is_type && ends_decl && qualified.len() == 1 {
            continue;
        }
        calls.push(ApiCall {
            api_name: qualified.join("."),
            args: parse_args(&tokens[(i + 2).min(close)..close.min(tokens.len())]),
            line: tokens[i].line,
        });
    }
    calls
}

/// End of a literal initializer: the literal optionally followed by a
/// method chain such as `.getBytes()`, then a terminator or a new line.
fn initializer_ends(tokens: &[Token], mut k: usize, line: usize) -> bool {
    while tokens.get(k).map(|t| &t.kind) == Some(&Kind::Punct(".")) {
        if tokens.get(k + 2).map(|t| &t.kind) != Some(&Kind::Punct("(")) {
            return false;
        }
        k = matching_close(tokens, k + 2) + 1;
    }
    match tokens.get(k) {
        None => true,
        Some(t) => {
            matches!(t.kind, Kind::Punct(";") | Kind::Punct(",") | Kind::Punct(")") | Kind::Punct("}")) || t.line > line
        }
    }
}

fn extract_assignments(tokens: &[Token]) -> Vec<Assignment> {
    let mut out = Vec::new();
    for i in 0..tokens.len() {
        let Some(name) = ident(&tokens[i].kind) else { continue };
        // Keyword arguments are not assignments.
        if i > 0 && matches!(tokens[i - 1].kind, Kind::Punct("(") | Kind::Punct(",")) {
            continue;
        }
        let mut k = i + 1;
        // C arrays: `key[] = "..."` / `key[16] = ...`
        if tokens.get(k).map(|t| &t.kind) == Some(&Kind::Punct("[")) {
            k = matching_close(tokens, k) + 1;
        }
        if !matches!(tokens.get(k).map(|t| &t.kind), Some(Kind::Punct("=")) | Some(Kind::Punct(":="))) {
            continue;
        }
        k += 1;
        // Go `[]byte("...")` conversion.
        let mut closing = 0;
        if matches!(
            tokens.get(k..k + 4).map(|s| s.iter().map(|t| &t.kind).collect::<Vec<_>>()).as_deref(),
            Some([Kind::Punct("["), Kind::Punct("]"), Kind::Ident(_), Kind::Punct("(")])
        ) {
            k += 4;
            closing = 1;
        }
        let mut end = k;
        while end < tokens.len() && matches!(tokens[end].kind, Kind::Str(_)) {
            end += 1;
        }
        if end == k {
            end = match tokens.get(k).map(|t| &t.kind) {
                Some(Kind::Num(_)) => k + 1,
                Some(Kind::Punct("-")) if matches!(tokens.get(k + 1).map(|t| &t.kind), Some(Kind::Num(_))) => k + 2,
                _ => continue,
            };
        }
        let Some(literal) = literal_of(&tokens[k..end]) else { continue };
        if closing == 1 && tokens.get(end).map(|t| &t.kind) != Some(&Kind::Punct(")")) {
            continue;
        }
        if !initializer_ends(tokens, end + closing, tokens[end - 1].line) {
            continue;
        }
        out.push(Assignment { identifier: name.to_string(), literal, line: tokens[i].line });
    }
    out
}

static PY_IMPORT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^\s*import\s+([^\n#]+)").unwrap());
static PY_FROM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^\s*from\s+([\w.]+)\s+import\b").unwrap());
static JAVA_IMPORT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*import\s+(?:static\s+)?([\w.*]+)\s*;").unwrap());
static C_INCLUDE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"(?m)^\s*#\s*include\s*[<"]([^>"]+)[>"]"#).unwrap());
static C_DEFINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?m)^\s*#\s*define\s+(\w+)\s+("(?:[^"\\\n]|\\.)*"|-?\d+)\s*$"#).unwrap());
static GO_IMPORT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?m)^\s*import\s+(?:[\w.]+\s+)?"([^"]+)""#).unwrap());
static GO_IMPORT_BLOCK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)import\s*\(([^)]*)\)").unwrap());
static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#""([^"]+)""#).unwrap());

fn extract_imports(source: &str, lang: Language) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut push = |s: &str| {
        let s = s.trim().to_string();
        if !s.is_empty() && !out.contains(&s) {
            out.push(s);
        }
    };
    let all = lang == Language::Unknown;
    if all || lang == Language::Python {
        for c in PY_IMPORT.captures_iter(source) {
            for part in c[1].split(',') {
                push(part.split_whitespace().next().unwrap_or(""));
            }
        }
        for c in PY_FROM.captures_iter(source) {
            push(&c[1]);
        }
    }
    if all || lang == Language::Java {
        for c in JAVA_IMPORT.captures_iter(source) {
            push(&c[1]);
        }
    }
    if all || lang == Language::CCpp {
        for c in C_INCLUDE.captures_iter(source) {
            push(&c[1]);
        }
    }
    if all || lang == Language::Go {
        for c in GO_IMPORT.captures_iter(source) {
            push(&c[1]);
        }
        for block in GO_IMPORT_BLOCK.captures_iter(source) {
            for q in QUOTED.captures_iter(&block[1]) {
                push(&q[1]);
            }
        }
    }
    out
}

fn extract_defines(source: &str) -> Vec<Assignment> {
    C_DEFINE
        .captures_iter(source)
        .filter_map(|c| {
            let line = source[..c.get(1).unwrap().start()].matches('\n').count() + 1;
            let tokens = Lexer { src: &c[2], pos: 0, line, lang: Language::CCpp, out: Vec::new() }.run();
            literal_of(&tokens).map(|literal| Assignment { identifier: c[1].to_string(), literal, line })
        })
        .collect()
}

/// Best-effort lexical trace of `source`.
pub fn extract_call_trace(source: &str, language: Language) -> ApiCallTrace {
    let tokens = Lexer { src: source, pos: 0, line: 1, lang: language, out: Vec::new() }.run();
    let mut assignments = extract_assignments(&tokens);
    if matches!(language, Language::CCpp | Language::Unknown) {
        assignments.extend(extract_defines(source));
        assignments.sort_by_key(|a| a.line);
    }
    ApiCallTrace {
        program_id: String::new(),
        calls: extract_calls(&tokens, language),
        imports: extract_imports(source, language),
        assignments,
    }
}

pub fn trace_program(unit: &ProgramUnit) -> ApiCallTrace {
    ApiCallTrace { program_id: unit.id.clone(), ..extract_call_trace(&unit.source, unit.language) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(t: &ApiCallTrace) -> Vec<&str> {
        t.calls.iter().map(|c| c.api_name.as_str()).collect()
    }

    #[test]
    fn single_call() {
        let t = extract_call_trace("OPENSSL_add_all_digests();", Language::CCpp);
        assert_eq!(t.calls.len(), 1);
        assert_eq!(t.calls[0].api_name, "OPENSSL_add_all_digests");
        assert!(t.calls[0].args.is_empty());
    }

    #[test]
    fn order_is_preserved_and_declarations_skipped() {
        let src = r#"
#include <openssl/crypto.h>
int main(void) {
    OPENSSL_init_crypto(0, NULL);
    /* OPENSSL_add_all_digests(); */
    if (buf) OPENSSL_cleanse(buf, sizeof(buf));
    return 0;
}
"#;
        let t = extract_call_trace(src, Language::CCpp);
        assert_eq!(names(&t), ["OPENSSL_init_crypto", "OPENSSL_cleanse"]);
        assert_eq!(t.imports, ["openssl/crypto.h"]);
        assert_eq!(t.calls[0].args, [Arg::Int(0), Arg::Other]);
        assert_eq!(t.calls[0].line, 4);
    }

    #[test]
    fn empty_source() {
        assert_eq!(extract_call_trace("", Language::Python), ApiCallTrace::default());
    }

    #[test]
    fn python_literals_and_imports() {
        let src = "import hashlib, os\nfrom pyaes import AESModeOfOperationCTR\n# hashlib.md5(x)\n\
                   SECRET_KEY = b'0123456789abcdef'\nk = hashlib.pbkdf2_hmac('sha256', pw, salt, 1_000)\n\
                   def derive(pw):\n    return hashlib.pbkdf2_hmac('sha256', pw, salt, iterations=600000)\n";
        let t = extract_call_trace(src, Language::Python);
        assert_eq!(t.imports, ["hashlib", "os", "pyaes"]);
        assert_eq!(names(&t), ["hashlib.pbkdf2_hmac", "hashlib.pbkdf2_hmac"]);
        assert_eq!(t.calls[0].args, [Arg::Str("sha256".into()), Arg::Other, Arg::Other, Arg::Int(1000)]);
        assert_eq!(t.calls[1].args[3], Arg::Int(600000));
        assert_eq!(t.assignments.len(), 1);
        assert_eq!(t.assignments[0].identifier, "SECRET_KEY");
        assert_eq!(t.assignments[0].literal, Literal::Str("0123456789abcdef".into()));
    }

    #[test]
    fn java_calls() {
        let src = r#"
import javax.crypto.spec.GCMParameterSpec;
public class A {
    private static final String KEY = "hunter2hunter2";
    public byte[] enc(byte[] iv) throws Exception {
        GCMParameterSpec spec = new GCMParameterSpec(64, iv);
        Cipher c = Cipher.getInstance("AES/GCM/NoPadding");
        String s = "x".concat("y");
        return c.doFinal(iv);
    }
}
"#;
        let t = extract_call_trace(src, Language::Java);
        assert_eq!(names(&t), ["GCMParameterSpec", "Cipher.getInstance", "concat", "c.doFinal"]);
        assert_eq!(t.calls[0].args, [Arg::Int(64), Arg::Other]);
        assert_eq!(t.imports, ["javax.crypto.spec.GCMParameterSpec"]);
        assert_eq!(t.assignments.iter().map(|a| a.identifier.as_str()).collect::<Vec<_>>(), ["KEY", "s"]);
    }

    #[test]
    fn go_functions_are_not_calls() {
        let src = "package main\nimport (\n\t\"crypto/md5\"\n\t\"fmt\"\n)\nfunc (s *S) Sum(b []byte) []byte {\n\tkey := []byte(\"abcdefgh\")\n\treturn md5.Sum(b)\n}\nfunc main() { fmt.Println(1) }\n";
        let t = extract_call_trace(src, Language::Go);
        assert_eq!(names(&t), ["md5.Sum", "fmt.Println"]);
        assert_eq!(t.imports, ["crypto/md5", "fmt"]);
        assert_eq!(t.assignments[0].identifier, "key");
    }

    #[test]
    fn c_defines_and_arrays() {
        let src = "#define AES_KEY \"0123456789\"\nunsigned char iv[] = \"abcdefabcdef\";\nint seed = 42;\n";
        let t = extract_call_trace(src, Language::CCpp);
        let ids: Vec<_> = t.assignments.iter().map(|a| a.identifier.as_str()).collect();
        assert_eq!(ids, ["AES_KEY", "iv", "seed"]);
        assert_eq!(t.assignments[2].literal, Literal::Int(42));
    }

    #[test]
    fn strings_hide_calls() {
        let t = extract_call_trace("log(\"call foo(1)\"); x = 'bar()'", Language::Python);
        assert_eq!(names(&t), ["log"]);
    }
}
