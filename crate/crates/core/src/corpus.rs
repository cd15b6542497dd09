//! Source program loading and token-bounded slicing.
//!
//! Programs are sliced into contiguous, line-aligned chunks whose estimated
//! token count stays within the configured budget. Slices of one program
//! concatenate back to the original source byte-for-byte.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

/// Token budget used when none is configured.
pub const DEFAULT_TOKEN_BUDGET: usize = 4095;

const BYTES_PER_TOKEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    CCpp,
    Java,
    Python,
    Go,
    Unknown,
}

impl Language {
    pub fn from_path(path: &str) -> Self {
        let ext = Path::new(path)
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("c" | "cc" | "cpp" | "cxx" | "h" | "hh" | "hpp" | "hxx") => Language::CCpp,
            Some("java") => Language::Java,
            Some("py") => Language::Python,
            Some("go") => Language::Go,
            _ => Language::Unknown,
        }
    }

    /// Fence tag used when embedding code in a prompt.
    pub fn fence_tag(self) -> &'static str {
        match self {
            Language::CCpp => "cpp",
            Language::Java => "java",
            Language::Python => "python",
            Language::Go => "go",
            Language::Unknown => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramUnit {
    /// Path relative to the corpus root, `/`-separated.
    pub id: String,
    pub language: Language,
    pub source: String,
    pub byte_len: usize,
}

impl ProgramUnit {
    pub fn new(id: impl Into<String>, source: impl Into<String>) -> Self {
        let id = id.into();
        let source = source.into();
        ProgramUnit {
            language: Language::from_path(&id),
            byte_len: source.len(),
            id,
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSlice {
    pub program_id: String,
    pub index: usize,
    pub text: String,
    pub est_tokens: usize,
    pub crypto_relevant: bool,
}

impl CodeSlice {
    /// Stable key of the form `<program_id>#<index>`.
    pub fn key(&self) -> String {
        format!("{}#{}", self.program_id, self.index)
    }
}

/// Case-insensitive keywords marking code as cryptography-related.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CryptoKeywordSet {
    keywords: Vec<String>,
    folded: Vec<String>,
}

impl CryptoKeywordSet {
    pub fn new<I, S>(keywords: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = BTreeSet::new();
        let mut kept = Vec::new();
        let mut folded = Vec::new();
        for kw in keywords {
            let kw: String = kw.into();
            let trimmed = kw.trim();
            if trimmed.is_empty() {
                continue;
            }
            let lower = trimmed.to_lowercase();
            if seen.insert(lower.clone()) {
                kept.push(trimmed.to_string());
                folded.push(lower);
            }
        }
        if kept.is_empty() {
            return Err(Error::Input("crypto keyword set must not be empty".into()));
        }
        Ok(CryptoKeywordSet {
            keywords: kept,
            folded,
        })
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn with_keyword(&self, keyword: &str) -> Result<Self> {
        let mut all = self.keywords.clone();
        all.push(keyword.to_string());
        Self::new(all)
    }
}

impl Default for CryptoKeywordSet {
    fn default() -> Self {
        Self::new([
            "crypto",
            "javax.crypto",
            "OpenSSL",
            "Cipher",
            "hashlib",
            "hmac",
            "pbkdf2",
        ])
        .expect("default keyword set is non-empty")
    }
}

impl TryFrom<Vec<String>> for CryptoKeywordSet {
    type Error = Error;

    fn try_from(value: Vec<String>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<CryptoKeywordSet> for Vec<String> {
    fn from(value: CryptoKeywordSet) -> Self {
        value.keywords
    }
}

/// A file under the corpus root that could not be loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub units: Vec<ProgramUnit>,
    pub skipped: Vec<SkippedFile>,
}

fn extension_matches(path: &Path, extensions: &[String]) -> bool {
    if extensions.is_empty() {
        return true;
    }
    let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
        return false;
    };
    extensions
        .iter()
        .any(|want| want.trim_start_matches('.').eq_ignore_ascii_case(ext))
}

/// Loads every file under `root` whose extension is listed (all files when
/// `extensions` is empty), ordered by relative path.
pub fn load_corpus(root: &Path, extensions: &[String]) -> Result<Corpus> {
    let meta = std::fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !meta.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotADirectory, "corpus root is not a directory"),
        ));
    }

    let mut corpus = Corpus::default();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() || !extension_matches(entry.path(), extensions) {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root");
        let id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let bytes = std::fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        match String::from_utf8(bytes) {
            Ok(source) => corpus.units.push(ProgramUnit::new(id, source)),
            Err(_) => {
                log::warn!("skipping non-UTF-8 file {id}");
                corpus.skipped.push(SkippedFile {
                    id,
                    reason: "not valid UTF-8".into(),
                });
            }
        }
    }
    corpus.units.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(corpus)
}

/// Token estimate: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(BYTES_PER_TOKEN)
}

/// Budget reduced by a 10% safety margin, never below one token.
pub fn with_safety_margin(budget: usize) -> usize {
    (budget - budget / 10).max(1)
}

pub fn is_crypto_relevant(text: &str, keywords: &CryptoKeywordSet) -> bool {
    let lower = text.to_lowercase();
    keywords.folded.iter().any(|kw| lower.contains(kw.as_str()))
}

fn floor_char_boundary(s: &str, max: usize) -> usize {
    if max >= s.len() {
        return s.len();
    }
    let mut idx = max;
    while !s.is_char_boundary(idx) {
        idx -= 1;
    }
    idx
}

/// Splits a program into contiguous slices of at most `budget` estimated
/// tokens. Cuts fall on line boundaries unless a single line is longer
/// than the budget, in which case that line is cut at the byte limit.
pub fn slice_program(unit: &ProgramUnit, budget: usize, keywords: &CryptoKeywordSet) -> Vec<CodeSlice> {
    assert!(budget > 0, "token budget must be positive");
    let max_bytes = budget.saturating_mul(BYTES_PER_TOKEN);
    let source = unit.source.as_str();

    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut start = 0usize;
    let mut end = 0usize;

    for line in source.split_inclusive('\n') {
        let line_start = end;
        let line_end = line_start + line.len();
        if line_end - start <= max_bytes {
            end = line_end;
            continue;
        }
        if end > start {
            bounds.push((start, end));
            start = end;
        }
        // The line alone may still exceed the budget.
        while line_end - start > max_bytes {
            let cut = start + floor_char_boundary(&source[start..line_end], max_bytes);
            let cut = if cut == start {
                // A single char wider than the budget; take it whole.
                start + source[start..].chars().next().map_or(1, char::len_utf8)
            } else {
                cut
            };
            bounds.push((start, cut));
            start = cut;
        }
        end = line_end;
    }
    if end > start {
        bounds.push((start, end));
    }

    bounds
        .into_iter()
        .enumerate()
        .map(|(index, (s, e))| {
            let text = source[s..e].to_string();
            CodeSlice {
                program_id: unit.id.clone(),
                index,
                est_tokens: estimate_tokens(&text),
                crypto_relevant: is_crypto_relevant(&text, keywords),
                text,
            }
        })
        .collect()
}

/// Slices every unit of a corpus, preserving corpus order.
pub fn slice_corpus(units: &[ProgramUnit], budget: usize, keywords: &CryptoKeywordSet) -> Vec<CodeSlice> {
    units
        .iter()
        .flat_map(|u| slice_program(u, budget, keywords))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kw() -> CryptoKeywordSet {
        CryptoKeywordSet::default()
    }

    #[test]
    fn token_estimate_examples() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
        // ceil(16380 / 4) = 4095
        assert_eq!(estimate_tokens(&"x".repeat(16_380)), 4095);
        assert_eq!(estimate_tokens(&"x".repeat(16_381)), 4096);
    }

    #[test]
    fn safety_margin() {
        assert_eq!(with_safety_margin(4095), 3686);
        assert_eq!(with_safety_margin(1), 1);
    }

    #[test]
    fn relevance_examples() {
        assert!(is_crypto_relevant("import javax.crypto.Cipher;", &kw()));
        assert!(!is_crypto_relevant("int main(){return 0;}", &kw()));
        assert!(is_crypto_relevant("#include <openssl/evp.h>", &kw()));
    }

    #[test]
    fn keyword_set_dedups_case_insensitively() {
        let set = CryptoKeywordSet::new(["Crypto", "crypto", "OpenSSL", " openssl "]).unwrap();
        assert_eq!(set.keywords(), ["Crypto", "OpenSSL"]);
        assert!(CryptoKeywordSet::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn language_inference() {
        assert_eq!(Language::from_path("a/b.cpp"), Language::CCpp);
        assert_eq!(Language::from_path("x.H"), Language::CCpp);
        assert_eq!(Language::from_path("X.java"), Language::Java);
        assert_eq!(Language::from_path("m.py"), Language::Python);
        assert_eq!(Language::from_path("m.go"), Language::Go);
        assert_eq!(Language::from_path("README"), Language::Unknown);
    }

    #[test]
    fn small_source_is_one_slice() {
        let unit = ProgramUnit::new("a.py", "x".repeat(400));
        let slices = slice_program(&unit, DEFAULT_TOKEN_BUDGET, &kw());
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].text, unit.source);
        assert_eq!(slices[0].est_tokens, 100);
    }

    #[test]
    fn empty_source_has_no_slices() {
        let unit = ProgramUnit::new("a.py", "");
        assert!(slice_program(&unit, 10, &kw()).is_empty());
    }

    #[test]
    fn large_source_splits_on_lines() {
        // 9,000 tokens = 36,000 bytes: 900 lines of 40 bytes.
        let line = format!("{}\n", "y".repeat(39));
        let unit = ProgramUnit::new("big.c", line.repeat(900));
        assert_eq!(estimate_tokens(&unit.source), 9000);
        let slices = slice_program(&unit, 4000, &kw());
        assert!(slices.len() >= 3);
        for s in &slices {
            assert!(estimate_tokens(&s.text) <= 4000);
            assert!(s.text.ends_with('\n'));
        }
        let joined: String = slices.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(joined, unit.source);
    }

    #[test]
    fn oversized_line_is_hard_split() {
        let unit = ProgramUnit::new("long.py", format!("a\n{}\nb\n", "z".repeat(25)));
        let slices = slice_program(&unit, 2, &kw());
        assert!(slices.iter().all(|s| s.est_tokens <= 2));
        let joined: String = slices.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(joined, unit.source);
    }

    #[test]
    fn multibyte_chars_are_never_split() {
        let unit = ProgramUnit::new("u.py", "é".repeat(50));
        let slices = slice_program(&unit, 1, &kw());
        let joined: String = slices.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(joined, unit.source);
        assert!(slices.iter().all(|s| s.est_tokens <= 1));
    }

    #[test]
    fn relevance_is_per_slice() {
        let src = format!("{}\nimport hashlib\n", "p".repeat(20));
        let unit = ProgramUnit::new("r.py", src);
        let slices = slice_program(&unit, 6, &kw());
        assert_eq!(slices.len(), 2);
        assert!(!slices[0].crypto_relevant);
        assert!(slices[1].crypto_relevant);
    }

    #[test]
    fn load_corpus_orders_and_skips_binary() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_corpus(dir.path(), &[]).unwrap().units.is_empty());

        std::fs::write(dir.path().join("b.java"), "class B {}").unwrap();
        std::fs::write(dir.path().join("a.py"), "print(1)").unwrap();
        std::fs::write(dir.path().join("c.txt"), "notes").unwrap();
        std::fs::write(dir.path().join("bad.py"), [0xff, 0xfe, 0x00]).unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/m.go"), "package m").unwrap();

        let exts = vec!["py".to_string(), ".java".to_string(), "go".into()];
        let corpus = load_corpus(dir.path(), &exts).unwrap();
        let ids: Vec<_> = corpus.units.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, ["a.py", "b.java", "sub/m.go"]);
        assert_eq!(corpus.skipped.len(), 1);
        assert_eq!(corpus.skipped[0].id, "bad.py");
        assert_eq!(corpus.units[2].language, Language::Go);
    }

    #[test]
    fn missing_root_is_io_error() {
        let err = load_corpus(Path::new("/definitely/not/here"), &[]).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
