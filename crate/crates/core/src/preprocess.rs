//! Tweet normalization and tokenization.
//!
//! The rule set, applied in order:
//!
//! 1. URLs, e-mail addresses and numbers are removed; `@handle` becomes `<user>`.
//! 2. Emoji listed in the emoticon table are replaced wherever they occur;
//!    ASCII emoticons are replaced when they form a whole whitespace token.
//! 3. The remainder is lowercased and split on whitespace, then on any
//!    character that is not a letter. The punctuation marks `. , ? ; ' "`
//!    survive as tokens of their own; everything else is a separator.
//!
//! Output sequences are capped at [`DEFAULT_MAX_LEN`] tokens.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_LEN: usize = 50;
pub const USER_TOKEN: &str = "<user>";
pub const PAD_TOKEN: &str = "<pad>";

const RETAINED_PUNCTUATION: [char; 6] = ['.', ',', '?', ';', '\'', '"'];
const DEFAULT_EMOTICONS: &str = include_str!("../data/emoticons.tsv");

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S*").unwrap());
static EMAIL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+").unwrap());
static HANDLE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@\w+").unwrap());
static NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d+(?:[.,:/]\d+)*").unwrap());

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PreprocessError {
    #[error("emoticon table line {line}: {reason}")]
    Table { line: usize, reason: String },
    #[error("reading emoticon table: {0}")]
    Io(String),
}

/// Normalized tokens of one tweet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub original_id: String,
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn new(original_id: impl Into<String>, tokens: Vec<String>) -> Self {
        Self { original_id: original_id.into(), tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Emoticon → sentiment token mapping.
#[derive(Debug, Clone, Default)]
pub struct EmoticonTable {
    whole_token: HashMap<String, String>,
    emoji: HashMap<char, String>,
}

impl EmoticonTable {
    /// Parses the tab-separated `emoticon<TAB><token>` format. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(src: &str) -> Result<Self, PreprocessError> {
        let mut table = Self::default();
        for (i, raw) in src.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| PreprocessError::Table { line: i + 1, reason: reason.into() };
            let (emoticon, replacement) = line.split_once('\t').ok_or_else(|| err("missing tab"))?;
            let emoticon = emoticon.trim();
            let replacement = replacement.trim();
            if emoticon.is_empty() || emoticon.chars().any(char::is_whitespace) {
                return Err(err("emoticon must be a single non-empty token"));
            }
            if !is_special_token(replacement) {
                return Err(err("replacement must look like <word>"));
            }
            table.insert(emoticon, replacement);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let src = std::fs::read_to_string(path).map_err(|e| PreprocessError::Io(e.to_string()))?;
        Self::parse(&src)
    }

    pub fn insert(&mut self, emoticon: &str, replacement: &str) {
        let mut chars = emoticon.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if !c.is_ascii() => {
                self.emoji.insert(c, replacement.to_string());
            }
            _ => {
                self.whole_token.insert(emoticon.to_string(), replacement.to_string());
            }
        }
    }

    pub fn len(&self) -> usize {
        self.whole_token.len() + self.emoji.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn replacements(&self) -> impl Iterator<Item = &String> {
        self.whole_token.values().chain(self.emoji.values())
    }
}

fn is_special_token(s: &str) -> bool {
    s.len() > 2
        && s.starts_with('<')
        && s.ends_with('>')
        && s[1..s.len() - 1].chars().all(|c| c.is_ascii_lowercase())
}

#[derive(Debug, Clone)]
pub struct Normalizer {
    emoticons: EmoticonTable,
    special: HashSet<String>,
    max_len: usize,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::new(EmoticonTable::parse(DEFAULT_EMOTICONS).expect("bundled emoticon table"))
    }
}

impl Normalizer {
    pub fn new(emoticons: EmoticonTable) -> Self {
        let mut special: HashSet<String> = emoticons.replacements().cloned().collect();
        special.insert(USER_TOKEN.to_string());
        Self { emoticons, special, max_len: DEFAULT_MAX_LEN }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len.max(1);
        self
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn normalize(&self, text: &str) -> Vec<String> {
        let text = URL_RE.replace_all(text, " ");
        let text = EMAIL_RE.replace_all(&text, " ");
        let text = HANDLE_RE.replace_all(&text, " <user> ");
        let text = NUMBER_RE.replace_all(&text, " ");

        let mut spaced = String::with_capacity(text.len());
        for c in text.chars() {
            match self.emoticons.emoji.get(&c) {
                Some(tok) => {
                    spaced.push(' ');
                    spaced.push_str(tok);
                    spaced.push(' ');
                }
                None => spaced.push(c),
            }
        }

        let mut out = Vec::new();
        for word in spaced.split_whitespace() {
            if out.len() >= self.max_len {
                break;
            }
            if let Some(rep) = self.emoticons.whole_token.get(word) {
                out.push(rep.clone());
            } else if self.special.contains(word) {
                out.push(word.to_string());
            } else {
                split_word(word, &mut out);
            }
        }
        out.truncate(self.max_len);
        out
    }

    pub fn sequence(&self, id: &str, text: &str) -> TokenSequence {
        TokenSequence::new(id, self.normalize(text))
    }
}

fn split_word(word: &str, out: &mut Vec<String>) {
    let mut cur = String::new();
    for c in word.chars().flat_map(char::to_lowercase) {
        if c.is_alphabetic() && !c.is_numeric() {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if RETAINED_PUNCTUATION.contains(&c) {
                out.push(c.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
}

/// Pads with [`PAD_TOKEN`] or truncates so the result has exactly `max_len`
/// entries. Truncation keeps the leading tokens.
pub fn pad_or_truncate(seq: &TokenSequence, max_len: usize) -> Vec<String> {
    let mut out: Vec<String> = seq.tokens.iter().take(max_len).cloned().collect();
    out.resize(max_len, PAD_TOKEN.to_string());
    out
}
