//! ORDER patterns: regular expressions over object labels, matched against
//! whole label sequences with a Thompson NFA.

use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternAst {
    Label(String),
    Seq(Vec<PatternAst>),
    Alt(Vec<PatternAst>),
    Star(Box<PatternAst>),
    Plus(Box<PatternAst>),
    Opt(Box<PatternAst>),
}

#[derive(Debug, Clone)]
pub struct OrderPattern {
    ast: PatternAst,
    nfa: Nfa,
    /// Every declared label is one character, so labels print run together.
    compact: bool,
}

impl PartialEq for OrderPattern {
    fn eq(&self, other: &Self) -> bool {
        self.ast == other.ast
    }
}

impl Eq for OrderPattern {}

impl OrderPattern {
    /// Parses `source` using `labels` to split runs such as `ab` into
    /// declared labels (longest declared label first).
    pub fn parse(source: &str, labels: &BTreeSet<String>) -> Result<Self, String> {
        let tokens = tokenize(source, labels)?;
        let mut p = Parser { tokens, pos: 0 };
        let ast = p.alt()?;
        if let Some(t) = p.tokens.get(p.pos) {
            return Err(format!("unexpected `{t}` in order pattern"));
        }
        let mut pattern = Self::from_ast(ast);
        pattern.compact = labels.iter().all(|l| l.chars().count() == 1);
        Ok(pattern)
    }

    pub fn from_ast(ast: PatternAst) -> Self {
        let nfa = Nfa::compile(&ast);
        OrderPattern { ast, nfa, compact: false }
    }

    pub fn ast(&self) -> &PatternAst {
        &self.ast
    }

    /// Labels the pattern mentions.
    pub fn labels(&self) -> BTreeSet<&str> {
        fn walk<'a>(a: &'a PatternAst, out: &mut BTreeSet<&'a str>) {
            match a {
                PatternAst::Label(l) => {
                    out.insert(l);
                }
                PatternAst::Seq(v) | PatternAst::Alt(v) => v.iter().for_each(|x| walk(x, out)),
                PatternAst::Star(x) | PatternAst::Plus(x) | PatternAst::Opt(x) => walk(x, out),
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.ast, &mut out);
        out
    }

    /// Whole-sequence membership.
    pub fn matches<S: AsRef<str>>(&self, trace: &[S]) -> bool {
        self.nfa.accepts(trace)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Label(String),
    Sym(char),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Label(l) => f.write_str(l),
            Tok::Sym(c) => write!(f, "{c}"),
        }
    }
}

fn split_run(run: &str, labels: &BTreeSet<String>) -> Result<Vec<String>, String> {
    if labels.contains(run) {
        return Ok(vec![run.to_string()]);
    }
    let mut out = Vec::new();
    let mut rest = run;
    while !rest.is_empty() {
        let best = labels.iter().filter(|l| rest.starts_with(l.as_str())).max_by_key(|l| l.len());
        match best {
            Some(l) => {
                out.push(l.clone());
                rest = &rest[l.len()..];
            }
            None => return Err(format!("undeclared label `{run}` in order pattern")),
        }
    }
    Ok(out)
}

fn tokenize(source: &str, labels: &BTreeSet<String>) -> Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let mut chars = source.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            c if c.is_whitespace() || c == ',' => {}
            '(' | ')' | '|' | '*' | '+' | '?' => out.push(Tok::Sym(c)),
            c if c.is_alphanumeric() || c == '_' => {
                let mut end = i + c.len_utf8();
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_alphanumeric() || d == '_' {
                        end = j + d.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.extend(split_run(&source[i..end], labels)?.into_iter().map(Tok::Label));
            }
            other => return Err(format!("unexpected character `{other}` in order pattern")),
        }
    }
    if out.is_empty() {
        return Err("empty order pattern".into());
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn alt(&mut self) -> Result<PatternAst, String> {
        let mut arms = vec![self.seq()?];
        while self.peek() == Some(&Tok::Sym('|')) {
            self.pos += 1;
            arms.push(self.seq()?);
        }
        Ok(if arms.len() == 1 { arms.pop().unwrap() } else { PatternAst::Alt(arms) })
    }

    fn seq(&mut self) -> Result<PatternAst, String> {
        let mut items = Vec::new();
        while let Some(t) = self.peek() {
            if matches!(t, Tok::Sym('|') | Tok::Sym(')')) {
                break;
            }
            items.push(self.postfix()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { PatternAst::Seq(items) })
    }

    fn postfix(&mut self) -> Result<PatternAst, String> {
        let mut atom = self.atom()?;
        while let Some(Tok::Sym(q @ ('*' | '+' | '?'))) = self.peek() {
            atom = match q {
                '*' => PatternAst::Star(Box::new(atom)),
                '+' => PatternAst::Plus(Box::new(atom)),
                _ => PatternAst::Opt(Box::new(atom)),
            };
            self.pos += 1;
        }
        Ok(atom)
    }

    fn atom(&mut self) -> Result<PatternAst, String> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Label(l)) => {
                self.pos += 1;
                Ok(PatternAst::Label(l))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let inner = self.alt()?;
                if self.peek() != Some(&Tok::Sym(')')) {
                    return Err("unbalanced `(` in order pattern".into());
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(t) => Err(format!("unexpected `{t}` in order pattern")),
            None => Err("order pattern ends early".into()),
        }
    }
}

fn render(a: &PatternAst, compact: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match a {
        PatternAst::Label(l) => f.write_str(l),
        PatternAst::Seq(items) => {
            for (k, item) in items.iter().enumerate() {
                if k > 0 && !compact {
                    f.write_str(" ")?;
                }
                let wrap = matches!(item, PatternAst::Alt(_) | PatternAst::Seq(_));
                if wrap {
                    f.write_str("(")?;
                    render(item, compact, f)?;
                    f.write_str(")")?;
                } else {
                    render(item, compact, f)?;
                }
            }
            Ok(())
        }
        PatternAst::Alt(arms) => {
            for (k, arm) in arms.iter().enumerate() {
                if k > 0 {
                    f.write_str("|")?;
                }
                render(arm, compact, f)?;
            }
            Ok(())
        }
        PatternAst::Star(x) | PatternAst::Plus(x) | PatternAst::Opt(x) => {
            let q = match a {
                PatternAst::Star(_) => '*',
                PatternAst::Plus(_) => '+',
                _ => '?',
            };
            if matches!(**x, PatternAst::Seq(_) | PatternAst::Alt(_)) {
                f.write_str("(")?;
                render(x, compact, f)?;
                write!(f, "){q}")
            } else {
                render(x, compact, f)?;
                write!(f, "{q}")
            }
        }
    }
}

impl fmt::Display for PatternAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        render(self, false, f)
    }
}

impl fmt::Display for OrderPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        render(&self.ast, self.compact, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum State {
    Match,
    Label(String, usize),
    Split(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Nfa {
    states: Vec<State>,
    start: usize,
}

impl Nfa {
    fn compile(ast: &PatternAst) -> Self {
        let mut nfa = Nfa { states: vec![State::Match], start: 0 };
        nfa.start = nfa.build(ast, 0);
        nfa
    }

    fn push(&mut self, s: State) -> usize {
        self.states.push(s);
        self.states.len() - 1
    }

    /// Compiles `ast` so that it continues to state `next`; returns its entry.
    fn build(&mut self, ast: &PatternAst, next: usize) -> usize {
        match ast {
            PatternAst::Label(l) => self.push(State::Label(l.clone(), next)),
            PatternAst::Seq(items) => items.iter().rev().fold(next, |n, item| self.build(item, n)),
            PatternAst::Alt(arms) => {
                let starts = arms.iter().map(|a| self.build(a, next)).collect();
                self.push(State::Split(starts))
            }
            PatternAst::Star(x) => {
                let s = self.push(State::Split(Vec::new()));
                let body = self.build(x, s);
                self.states[s] = State::Split(vec![body, next]);
                s
            }
            PatternAst::Plus(x) => {
                let s = self.push(State::Split(Vec::new()));
                let body = self.build(x, s);
                self.states[s] = State::Split(vec![body, next]);
                body
            }
            PatternAst::Opt(x) => {
                let body = self.build(x, next);
                self.push(State::Split(vec![body, next]))
            }
        }
    }

    fn close(&self, set: &mut BTreeSet<usize>, s: usize) {
        if !set.insert(s) {
            return;
        }
        if let State::Split(outs) = &self.states[s] {
            for &o in outs {
                self.close(set, o);
            }
        }
    }

    fn accepts<S: AsRef<str>>(&self, trace: &[S]) -> bool {
        let mut current = BTreeSet::new();
        self.close(&mut current, self.start);
        for sym in trace {
            let mut next = BTreeSet::new();
            for &s in &current {
                if let State::Label(l, to) = &self.states[s] {
                    if l == sym.as_ref() {
                        self.close(&mut next, *to);
                    }
                }
            }
            if next.is_empty() {
                return false;
            }
            current = next;
        }
        current.contains(&0)
    }
}
