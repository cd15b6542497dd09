//! Deterministic offline stand-in for a chat model. It answers every
//! pipeline prompt from a fixed catalog of misuse patterns so the whole
//! workflow can run, and be recorded to a cassette, without network access.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde_json::{json, Value};

use super::{BackendFailure, ChatBackend, ChatRequest, Role};
use crate::corpus::{is_crypto_relevant, CryptoKeywordSet};
use crate::prompts::{PromptKind, NO_MISUSE};

/// Keyword proposed for categories outside the seed root causes.
pub const GENERATED_KEYWORD: &str = "Compromising Library Lifecycle Safety";

struct Group {
    title: &'static str,
    explanation: &'static str,
    /// Index into the seed keyword list; `None` uses [`GENERATED_KEYWORD`].
    keyword: Option<usize>,
}

const GROUPS: &[Group] = &[
    Group { title: "Improper Certificate Validation", explanation: "Peers are accepted without validating their certificate chain.", keyword: Some(0) },
    Group { title: "Weak Cipher Configuration", explanation: "Ciphers, modes or parameters that leak plaintext structure.", keyword: Some(1) },
    Group { title: "Predictable Initialization Vectors", explanation: "IVs or nonces that repeat across encryptions.", keyword: Some(1) },
    Group { title: "Insecure Randomness Sources", explanation: "Secrets drawn from generators that are not cryptographically secure.", keyword: Some(2) },
    Group { title: "Exposed Key Material", explanation: "Keys that ship with or leak from the program.", keyword: Some(3) },
    Group { title: "Weak Key Derivation and Key Sizes", explanation: "Keys that are too short or too cheap to brute-force.", keyword: Some(3) },
    Group { title: "Weak Hash Functions", explanation: "Digests with practical collision attacks.", keyword: Some(4) },
    Group { title: "Unsafe Integrity Verification", explanation: "Checks of MACs or digests that leak timing or skip verification.", keyword: Some(4) },
    Group { title: "Improper Hostname Verification", explanation: "Connections that never check who is on the other end.", keyword: Some(6) },
    Group { title: "Library Lifecycle Errors", explanation: "Crypto libraries initialized, threaded or chosen incorrectly.", keyword: None },
];

const OTHER_GROUP: Group = Group {
    title: "Other Cryptographic Misuse",
    explanation: "Misuses without a closer structural match.",
    keyword: None,
};

struct Pattern {
    summary: &'static str,
    title: &'static str,
    explanation: &'static str,
    group: usize,
    /// Found by the direct prompt; otherwise only after chain-of-thought.
    direct: bool,
    /// Only counts in code that also mentions cryptography.
    needs_context: bool,
    regexes: &'static [&'static str],
    /// Flag only when the first capture is numerically below this.
    below: Option<u64>,
    /// Suppressed when this also matches.
    unless: Option<&'static str>,
}

const PATTERNS: &[Pattern] = &[
    Pattern {
        summary: "Use of MD5 for hashing",
        title: "Weak Hash Function",
        explanation: "MD5 digests are collision-broken and must not protect integrity or passwords, e.g. MessageDigest.getInstance(\"MD5\").",
        group: 6,
        direct: true,
        needs_context: false,
        regexes: &[r#"MessageDigest\.getInstance\(\s*"MD5"|hashlib\.md5\(|EVP_md5\(|\bMD5_Init\(|md5\.New\(|\bMD5\(\s*\w"#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "Use of SHA-1 for hashing",
        title: "Weak Hash Function",
        explanation: "SHA-1 has practical collisions and must not be used for signatures or integrity, e.g. hashlib.sha1(data).",
        group: 6,
        direct: true,
        needs_context: false,
        regexes: &[r#"MessageDigest\.getInstance\(\s*"SHA-?1"|hashlib\.sha1\(|EVP_sha1\(|\bSHA1_Init\(|sha1\.New\("#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "Use of obsolete symmetric cipher",
        title: "Obsolete Symmetric Cipher",
        explanation: "DES, 3DES, RC4 and Blowfish offer too little security margin, e.g. Cipher.getInstance(\"DES\").",
        group: 1,
        direct: true,
        needs_context: false,
        regexes: &[r#"getInstance\(\s*"(DES|DESede|RC4|ARCFOUR|Blowfish)\b|EVP_(des|rc4|bf)_\w*\(|\b(DES|DES3|ARC4|Blowfish)\.new\(|\b(des|rc4)\.New\w*Cipher\("#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "Use of ECB mode for encryption",
        title: "ECB Mode Encryption",
        explanation: "ECB encrypts equal blocks to equal ciphertext and leaks plaintext patterns, e.g. AES/ECB/PKCS5Padding.",
        group: 1,
        direct: true,
        needs_context: false,
        regexes: &[r#""AES/ECB|getInstance\(\s*"AES"\s*\)|MODE_ECB|EVP_aes_\d+_ecb\(|modes\.ECB\("#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "Static initialization vector",
        title: "Static Initialization Vector",
        explanation: "A constant IV makes CBC and CTR encryption deterministic, e.g. new IvParameterSpec(new byte[16]).",
        group: 2,
        direct: true,
        needs_context: false,
        regexes: &[r#"IvParameterSpec\(\s*(new byte\[\d*\]|"[^"]*"\.getBytes)|\b(iv|IV|nonce)\s*=\s*b["']|unsigned char iv\[\]\s*=\s*"|\biv\s*:=\s*\[\]byte\(""#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "Hard-coded encryption key",
        title: "Hard-coded Cryptographic Key",
        explanation: "Keys embedded in source are recoverable by anyone with the binary, e.g. new SecretKeySpec(\"secret\".getBytes(), \"AES\").",
        group: 4,
        direct: true,
        needs_context: false,
        regexes: &[r#"SecretKeySpec\(\s*"|\b(key|KEY|secret_key|SECRET_KEY)\s*(=|:=)\s*(b|\[\]byte\()?["'][^"'\n]{6,}["']|unsigned char key\[\]\s*=\s*""#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "Insufficient PBKDF2 iteration count",
        title: "Low Key-Derivation Work Factor",
        explanation: "PBKDF2 with fewer than 10000 iterations is cheap to brute-force, e.g. pbkdf2_hmac('sha256', pw, salt, 1000).",
        group: 5,
        direct: true,
        needs_context: false,
        regexes: &[
            r#"pbkdf2_hmac\(\s*[^,]+,\s*[^,]+,\s*[^,]+,\s*(\d+)"#,
            r#"PBEKeySpec\(\s*[^,]+,\s*[^,]+,\s*(\d+)"#,
            r#"pbkdf2\.Key\(\s*[^,]+,\s*[^,]+,\s*(\d+)"#,
        ],
        below: Some(10_000),
        unless: None,
    },
    Pattern {
        summary: "Certificate validation disabled",
        title: "Disabled Certificate Validation",
        explanation: "Trust managers or contexts that accept any certificate enable man-in-the-middle attacks, e.g. verify=False.",
        group: 0,
        direct: true,
        needs_context: false,
        regexes: &[r#"checkServerTrusted\([^)]*\)\s*(throws [\w.]+\s*)?\{\s*\}|verify\s*=\s*False|InsecureSkipVerify:\s*true|SSL_VERIFY_NONE|CERT_NONE"#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "Hostname verification disabled",
        title: "Disabled Hostname Verification",
        explanation: "Accepting any hostname lets a valid certificate for another domain impersonate the server, e.g. NoopHostnameVerifier.",
        group: 8,
        direct: true,
        needs_context: false,
        regexes: &[r#"ALLOW_ALL_HOSTNAME_VERIFIER|NoopHostnameVerifier|check_hostname\s*=\s*False|setHostnameVerifier\(\s*\(\s*\w+\s*,\s*\w+\s*\)\s*->\s*true"#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "OpenSSL initialized without cleanup",
        title: "Missing OpenSSL Cleanup",
        explanation: "Tables loaded by OpenSSL_add_all_digests must be released with EVP_cleanup.",
        group: 9,
        direct: true,
        needs_context: false,
        regexes: &[r#"OpenSSL_add_all_(digests|algorithms|ciphers)\("#],
        below: None,
        unless: Some(r"EVP_cleanup\("),
    },
    Pattern {
        summary: "Non-constant-time MAC comparison",
        title: "Timing-Unsafe MAC Comparison",
        explanation: "Comparing MACs with memcmp or == leaks how many bytes matched, e.g. memcmp(mac, expected, 32).",
        group: 7,
        direct: false,
        needs_context: false,
        regexes: &[r#"(?i)memcmp\([^;]*(mac|tag|digest)|(hex)?digest\(\)\s*==|Arrays\.equals\([^;]*(mac|tag|digest)"#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "Insufficient RSA key size",
        title: "Short RSA Key",
        explanation: "RSA moduli below 2048 bits are within reach of factoring, e.g. generator.initialize(1024).",
        group: 5,
        direct: false,
        needs_context: false,
        regexes: &[r#"initialize\(\s*(512|1024)\s*\)|RSA_generate_key(_ex)?\([^,]*,\s*(512|1024)\b|key_size\s*=\s*(512|1024)\b|rsa\.GenerateKey\([^,]+,\s*(512|1024)\)"#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "Short GCM authentication tag",
        title: "Truncated GCM Tag",
        explanation: "GCM tags shorter than 96 bits make forgeries practical, e.g. new GCMParameterSpec(64, iv).",
        group: 1,
        direct: false,
        needs_context: false,
        regexes: &[r#"GCMParameterSpec\(\s*(\d+)"#],
        below: Some(96),
        unless: None,
    },
    Pattern {
        summary: "Use of deprecated OpenSSL threading API",
        title: "Deprecated OpenSSL Threading Callbacks",
        explanation: "CRYPTO_set_id_callback and CRYPTO_set_locking_callback are no-ops in current OpenSSL.",
        group: 9,
        direct: false,
        needs_context: false,
        regexes: &[r#"CRYPTO_set_(id|locking)_callback\("#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "Use of unmaintained pure-Python AES library",
        title: "Unmaintained Crypto Library",
        explanation: "pyaes is unmaintained and not constant-time; use a vetted library such as cryptography.",
        group: 9,
        direct: false,
        needs_context: false,
        regexes: &[r#"(?m)^\s*(import pyaes|from pyaes\b)"#],
        below: None,
        unless: None,
    },
    Pattern {
        summary: "Non-cryptographic random number generator",
        title: "Insecure Random Number Generator",
        explanation: "General-purpose generators such as java.util.Random or random.random are predictable and unsuitable for keys, IVs or tokens.",
        group: 3,
        direct: false,
        needs_context: true,
        regexes: &[r#"java\.util\.Random\b|new Random\(|\brandom\.(random|randint|choice|getrandbits)\(|\bsrand\(|\brand\(\)|"math/rand""#],
        below: None,
        unless: None,
    },
];

struct Compiled {
    pattern: &'static Pattern,
    regexes: Vec<Regex>,
    unless: Option<Regex>,
}

static CATALOG: LazyLock<Vec<Compiled>> = LazyLock::new(|| {
    PATTERNS
        .iter()
        .map(|p| Compiled {
            pattern: p,
            regexes: p.regexes.iter().map(|r| Regex::new(r).expect("catalog regex")).collect(),
            unless: p.unless.map(|r| Regex::new(r).expect("catalog regex")),
        })
        .collect()
});

static CODE_PROMPT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)Code identifier: ([^\n]*)\nCode:\n```[^\n]*\n(.*)\n```").unwrap());
static JSON_BLOCK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```json\n(.*?)\n```").unwrap());
static CRYPTO_KEYWORDS: LazyLock<CryptoKeywordSet> = LazyLock::new(CryptoKeywordSet::default);

struct Finding {
    pattern: &'static Pattern,
    line: usize,
    snippet: String,
}

impl Compiled {
    fn find(&self, code: &str, relevant: bool) -> Option<Finding> {
        if self.pattern.needs_context && !relevant {
            return None;
        }
        if self.unless.as_ref().is_some_and(|u| u.is_match(code)) {
            return None;
        }
        for re in &self.regexes {
            for caps in re.captures_iter(code) {
                let whole = caps.get(0).expect("match");
                if let Some(limit) = self.pattern.below {
                    let value = caps.iter().skip(1).flatten().find_map(|m| m.as_str().parse::<u64>().ok());
                    if value.is_none_or(|v| v >= limit) {
                        continue;
                    }
                }
                let line = code[..whole.start()].matches('\n').count() + 1;
                let snippet: String = whole.as_str().trim().chars().take(60).collect();
                return Some(Finding { pattern: self.pattern, line, snippet });
            }
        }
        None
    }
}

fn findings(code: &str, include_indirect: bool) -> Vec<Finding> {
    let relevant = is_crypto_relevant(code, &CRYPTO_KEYWORDS);
    CATALOG
        .iter()
        .filter(|c| include_indirect || c.pattern.direct)
        .filter_map(|c| c.find(code, relevant))
        .collect()
}

fn fenced(value: &Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(value).expect("json"))
}

fn triplets(code_id: &str, found: &[Finding]) -> String {
    let items: Vec<Value> = found
        .iter()
        .map(|f| {
            json!({
                "abstract": f.pattern.summary,
                "detail": format!("Line {}: `{}`. {}", f.line, f.snippet, f.pattern.explanation),
                "code": code_id,
            })
        })
        .collect();
    fenced(&Value::Array(items))
}

fn no_misuse(code_id: &str) -> String {
    fenced(&json!([{
        "abstract": NO_MISUSE,
        "detail": "No cryptographic API misuse was found in this code.",
        "code": code_id,
    }]))
}

fn json_blocks(text: &str) -> Vec<Value> {
    JSON_BLOCK.captures_iter(text).filter_map(|c| serde_json::from_str(&c[1]).ok()).collect()
}

fn str_field<'a>(v: &'a Value, name: &str) -> &'a str {
    v.get(name).and_then(Value::as_str).unwrap_or_default()
}

fn group_for_title(title: &str) -> &'static Group {
    PATTERNS.iter().find(|p| p.title == title).map_or(&OTHER_GROUP, |p| &GROUPS[p.group])
}

fn normalized(title: &str) -> String {
    title.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

/// The simulated model.
#[derive(Debug, Default, Clone, Copy)]
pub struct SimulatedBackend;

impl SimulatedBackend {
    pub fn new() -> Self {
        SimulatedBackend
    }

    fn respond(&self, request: &ChatRequest) -> Result<String, String> {
        let kind = PromptKind::from_tag(&request.tag).ok_or_else(|| format!("unknown prompt tag `{}`", request.tag))?;
        let first_user = request
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .ok_or("request has no user message")?;
        match kind {
            PromptKind::DirectIdentify => {
                let (id, code) = code_of(first_user)?;
                let found = findings(code, false);
                if !found.is_empty() {
                    return Ok(triplets(id, &found));
                }
                let suspicious = is_crypto_relevant(code, &CRYPTO_KEYWORDS) || !findings(code, true).is_empty();
                Ok(if suspicious {
                    format!(
                        "I cannot determine whether {id} misuses the cryptographic API without a closer look \
                         at how its cryptographic objects are configured."
                    )
                } else {
                    no_misuse(id)
                })
            }
            PromptKind::CotElements => {
                let (id, code) = code_of(first_user)?;
                let lines: Vec<&str> = code
                    .lines()
                    .map(str::trim)
                    .filter(|l| is_crypto_relevant(l, &CRYPTO_KEYWORDS) || CATALOG.iter().any(|c| c.regexes.iter().any(|r| r.is_match(l))))
                    .take(8)
                    .collect();
                Ok(if lines.is_empty() {
                    format!("{id} contains no cryptographic API calls.")
                } else {
                    format!("Cryptography-related elements in {id}:\n- {}", lines.join("\n- "))
                })
            }
            PromptKind::CotKnowledge => Ok("Secure use requires vetted algorithms, sufficient key sizes and work \
                factors, fresh random IVs, constant-time verification, full certificate and hostname checks, and \
                correct library initialization and cleanup."
                .to_string()),
            PromptKind::CotApply => {
                let (id, code) = code_of(first_user)?;
                let found = findings(code, true);
                Ok(if found.is_empty() { no_misuse(id) } else { triplets(id, &found) })
            }
            PromptKind::SummarizeGroup => {
                let items = block(first_user, 0)?;
                let mut groups: Vec<(String, Vec<u64>)> = Vec::new();
                for it in items.as_array().ok_or("instances are not a list")? {
                    let summary = str_field(it, "abstract").to_string();
                    let id = it.get("id").and_then(Value::as_u64).ok_or("instance without id")?;
                    match groups.iter_mut().find(|(s, _)| *s == summary) {
                        Some((_, members)) => members.push(id),
                        None => groups.push((summary, vec![id])),
                    }
                }
                Ok(fenced(&Value::Array(
                    groups.into_iter().map(|(s, m)| json!({"abstract": s, "members": m})).collect(),
                )))
            }
            PromptKind::SummarizeCategory => {
                let items = block(first_user, 0)?;
                let cats: Vec<Value> = items
                    .as_array()
                    .ok_or("merged instances are not a list")?
                    .iter()
                    .map(|it| {
                        let summary = str_field(it, "abstract");
                        match PATTERNS.iter().find(|p| p.summary == summary) {
                            Some(p) => json!({"title": p.title, "explanation": p.explanation}),
                            None => json!({"title": summary, "explanation": format!("Code that exhibits: {summary}.")}),
                        }
                    })
                    .collect();
                Ok(fenced(&Value::Array(cats)))
            }
            PromptKind::MergeCategories => {
                let existing = block(first_user, 0)?;
                let incoming = block(first_user, 1)?;
                let existing: Vec<String> =
                    existing.as_array().ok_or("not a list")?.iter().map(|c| normalized(str_field(c, "title"))).collect();
                let decisions: Vec<Value> = incoming
                    .as_array()
                    .ok_or("not a list")?
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let dup = existing.iter().position(|t| *t == normalized(str_field(c, "title")));
                        json!({"incoming": i, "duplicate_of": dup})
                    })
                    .collect();
                Ok(fenced(&Value::Array(decisions)))
            }
            PromptKind::ConstructTaxonomy => {
                let keywords = block(first_user, 0)?;
                let cats = block(first_user, 1)?;
                Ok(fenced(&place(&keywords, &Value::Array(Vec::new()), &cats)))
            }
            PromptKind::ExpandTaxonomy => {
                let keywords = block(first_user, 0)?;
                let existing = block(first_user, 1)?;
                let cats = block(first_user, 2)?;
                Ok(fenced(&place(&keywords, &existing, &cats)))
            }
        }
    }
}

fn code_of(prompt: &str) -> Result<(&str, &str), String> {
    let caps = CODE_PROMPT.captures(prompt).ok_or("prompt carries no code block")?;
    Ok((caps.get(1).unwrap().as_str().trim(), caps.get(2).unwrap().as_str()))
}

fn block(prompt: &str, index: usize) -> Result<Value, String> {
    json_blocks(prompt).into_iter().nth(index).ok_or_else(|| format!("prompt lacks JSON block {index}"))
}

/// Places each category under `keyword → group` abstract nodes, reusing
/// existing abstract nodes by title.
fn place(keywords: &Value, existing: &Value, categories: &Value) -> Value {
    let seed: Vec<&str> = keywords.as_array().map(|a| a.iter().filter_map(Value::as_str).collect()).unwrap_or_default();
    let mut by_title: BTreeMap<String, String> = existing
        .as_array()
        .into_iter()
        .flatten()
        .map(|n| (str_field(n, "title").to_string(), str_field(n, "id").to_string()))
        .collect();
    let mut nodes = Vec::new();
    let mut edges: Vec<Value> = Vec::new();
    let mut new_keywords: BTreeSet<&str> = BTreeSet::new();
    let seed_set = crate::taxonomy::KeywordSet::seed();
    let seed_phrases = seed_set.phrases();

    let mut ensure = |title: &str, explanation: String, parent: Option<String>, nodes: &mut Vec<Value>, edges: &mut Vec<Value>| -> String {
        if let Some(id) = by_title.get(title) {
            return id.clone();
        }
        let label = format!("n{}", by_title.len() + 1);
        nodes.push(json!({"id": label, "title": title, "explanation": explanation}));
        if let Some(p) = parent {
            edges.push(json!([p, label]));
        }
        by_title.insert(title.to_string(), label.clone());
        label
    };

    for cat in categories.as_array().into_iter().flatten() {
        let group = group_for_title(str_field(cat, "title"));
        let keyword = match group.keyword {
            Some(i) => seed_phrases.get(i).copied().unwrap_or(GENERATED_KEYWORD),
            None => GENERATED_KEYWORD,
        };
        if !seed.contains(&keyword) {
            new_keywords.insert(keyword);
        }
        let root = ensure(keyword, format!("Misuses whose root cause is: {keyword}."), None, &mut nodes, &mut edges);
        let mid = ensure(group.title, group.explanation.to_string(), Some(root), &mut nodes, &mut edges);
        edges.push(json!([mid, str_field(cat, "id")]));
    }
    json!({"new_nodes": nodes, "new_edges": edges, "new_keywords": new_keywords.into_iter().collect::<Vec<_>>()})
}

impl ChatBackend for SimulatedBackend {
    fn id(&self) -> String {
        "simulated".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendFailure> {
        self.respond(request).map_err(|m| BackendFailure::Fatal(crate::error::Error::Backend(format!("simulated: {m}"))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{estimate_tokens, CodeSlice};
    use crate::prompts::{parse_identification, HedgePhrases, PromptSet, Verdict};

    fn slice(id: &str, text: &str) -> CodeSlice {
        CodeSlice { program_id: id.into(), index: 0, text: text.into(), est_tokens: estimate_tokens(text), crypto_relevant: true }
    }

    fn ask(req: &ChatRequest) -> String {
        SimulatedBackend.complete(req).unwrap()
    }

    #[test]
    fn direct_finds_catalog_patterns() {
        let p = PromptSet::builtin();
        let reply = ask(&p.direct_identify(&slice("A.java", "Cipher c = Cipher.getInstance(\"DES\");\n")).unwrap());
        let parsed = parse_identification(&reply, &HedgePhrases::builtin());
        assert_eq!(parsed.verdict, Verdict::Instances);
        assert_eq!(parsed.instances[0].summary, "Use of obsolete symmetric cipher");
        assert_eq!(parsed.instances[0].code, "A.java");
    }

    #[test]
    fn pbkdf2_threshold() {
        let p = PromptSet::builtin();
        let low = ask(&p.direct_identify(&slice("k.py", "hashlib.pbkdf2_hmac('sha256', pw, salt, 1000)\n")).unwrap());
        assert!(low.contains("Insufficient PBKDF2"));
        let ok = ask(&p.direct_identify(&slice("k.py", "hashlib.pbkdf2_hmac('sha256', pw, salt, 600000)\n")).unwrap());
        assert!(!ok.contains("Insufficient PBKDF2"));
    }

    #[test]
    fn hedges_on_subtle_code_and_clears_plain_code() {
        let p = PromptSet::builtin();
        let hedged = ask(&p.direct_identify(&slice("m.c", "if (memcmp(mac, expected, 32) == 0) ok(); // hmac\n")).unwrap());
        assert_eq!(parse_identification(&hedged, &HedgePhrases::builtin()).verdict, Verdict::Undecided);
        let plain = ask(&p.direct_identify(&slice("m.go", "fmt.Println(\"hi\")\n")).unwrap());
        assert_eq!(parse_identification(&plain, &HedgePhrases::builtin()).verdict, Verdict::NoMisuse);
    }

    #[test]
    fn openssl_cleanup_suppresses() {
        let p = PromptSet::builtin();
        let both = "OpenSSL_add_all_digests();\nEVP_cleanup();\n";
        let reply = ask(&p.direct_identify(&slice("o.c", both)).unwrap());
        assert!(!reply.contains("without cleanup"));
    }

    #[test]
    fn grouping_is_by_exact_abstract() {
        use crate::identification::CamInstance;
        let insts = [
            CamInstance::new("Use of MD5 for hashing", "d", "a"),
            CamInstance::new("Use of ECB mode for encryption", "d", "b"),
            CamInstance::new("Use of MD5 for hashing", "d", "c"),
        ];
        let reply = ask(&PromptSet::builtin().summarize_group(&insts).unwrap());
        let groups = crate::prompts::parse_groups(&reply).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].members, [0, 2]);
    }

    #[test]
    fn merges_same_titles() {
        use crate::classification::CamCategory;
        let a = CamCategory::base("Weak Hash Function", "MD5", vec!["a".into()]);
        let b = CamCategory::base("Weak hash function", "SHA-1", vec!["b".into()]);
        let c = CamCategory::base("ECB Mode Encryption", "ECB", vec!["c".into()]);
        let reply = ask(&PromptSet::builtin().merge_categories(&[&a], &[&b, &c]).unwrap());
        let d = crate::prompts::parse_merge_decisions(&reply).unwrap();
        assert_eq!(d[0].duplicate_of, Some(0));
        assert_eq!(d[1].duplicate_of, None);
    }
}
