use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BatchEntry, Corpus, CorpusError, Lang, Tweet, UnlabeledPool};
use crate::preprocess::Normalizer;

/// A corpus line that could not be turned into a [`Tweet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ParsedCorpus {
    pub tweets: Vec<Tweet>,
    pub errors: Vec<LineError>,
    /// Valid lines dropped because their language tag did not match.
    pub skipped_lang: usize,
}

#[derive(Debug)]
pub struct Ingested {
    pub corpus: Corpus,
    pub pool: UnlabeledPool,
    pub errors: Vec<LineError>,
    pub skipped_lang: usize,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct RawTweet {
    id: String,
    text: String,
    lang: String,
    account: String,
    created_at: i64,
}

/// Parses one corpus record: a JSON object with `id`, `text`, `lang`,
/// `account` and `created_at` (UTC seconds).
pub fn parse_tweet_line(line: &str) -> Result<Tweet, String> {
    let raw: RawTweet = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if raw.id.is_empty() {
        return Err("empty id".into());
    }
    if raw.text.is_empty() {
        return Err("empty text".into());
    }
    Ok(Tweet {
        id: raw.id,
        text: raw.text,
        lang: raw.lang.parse().unwrap_or_else(|never| match never {}),
        account: raw.account,
        created_at: raw.created_at,
    })
}

/// Reads line-delimited records. Malformed lines are collected with their
/// 1-based line number; a repeated id aborts the whole read.
pub fn parse_corpus<R: BufRead>(reader: R, lang: Option<&Lang>) -> Result<ParsedCorpus, CorpusError> {
    let mut out = ParsedCorpus::default();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = match line {
            Ok(l) => l,
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                out.errors.push(LineError { line: i + 1, reason: "invalid UTF-8".into() });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if line.trim().is_empty() {
            continue;
        }
        match parse_tweet_line(&line) {
            Ok(t) => {
                if lang.is_some_and(|l| *l != t.lang) {
                    out.skipped_lang += 1;
                    continue;
                }
                if !ids.insert(t.id.clone()) {
                    return Err(CorpusError::DuplicateId(t.id));
                }
                out.tweets.push(t);
            }
            Err(reason) => out.errors.push(LineError { line: i + 1, reason }),
        }
    }
    Ok(out)
}

pub fn ingest(path: &Path, lang: Lang, normalizer: &Normalizer) -> Result<Ingested, CorpusError> {
    let file = std::fs::File::open(path)?;
    let parsed = parse_corpus(std::io::BufReader::new(file), Some(&lang))?;
    let mut warnings = Vec::new();
    if parsed.tweets.is_empty() {
        let msg = format!("{} yielded no {lang} tweets", path.display());
        tracing::warn!("{msg}");
        warnings.push(msg);
    }
    if !parsed.errors.is_empty() {
        tracing::warn!(count = parsed.errors.len(), "malformed corpus lines skipped");
    }
    let corpus = Corpus::new(parsed.tweets, normalizer)?;
    let pool = UnlabeledPool::from_corpus(lang, &corpus);
    Ok(Ingested { corpus, pool, errors: parsed.errors, skipped_lang: parsed.skipped_lang, warnings })
}

#[derive(Serialize)]
struct TweetOut<'a> {
    id: &'a str,
    text: &'a str,
    lang: &'a str,
    account: &'a str,
    created_at: i64,
}

pub fn write_corpus(tweets: &[Tweet]) -> String {
    let mut out = String::new();
    for t in tweets {
        let rec = TweetOut {
            id: &t.id,
            text: &t.text,
            lang: t.lang.as_str(),
            account: &t.account,
            created_at: t.created_at,
        };
        out.push_str(&serde_json::to_string(&rec).expect("tweet serializes"));
        out.push('\n');
    }
    out
}

/// `id,label` with a header row and labels in {0,1}.
pub fn write_label_csv(rows: &[(String, bool)]) -> String {
    let mut out = String::from("id,label\n");
    for (id, y) in rows {
        out.push_str(id);
        out.push(',');
        out.push(if *y { '1' } else { '0' });
        out.push('\n');
    }
    out
}

pub fn parse_label_csv(src: &str) -> Result<Vec<(String, bool)>, CorpusError> {
    let mut lines = src.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "id,label" => {}
        _ => return Err(CorpusError::Parse { line: 1, reason: "expected header `id,label`".into() }),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: &str| CorpusError::Parse { line: i + 1, reason: reason.into() };
        let (id, label) = line.rsplit_once(',').ok_or_else(|| err("missing comma"))?;
        if id.is_empty() {
            return Err(err("empty id"));
        }
        let y = match label.trim() {
            "0" => false,
            "1" => true,
            _ => return Err(err("label must be 0 or 1")),
        };
        rows.push((id.to_string(), y));
    }
    Ok(rows)
}

pub fn write_batch_records(entries: &[BatchEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("batch entry serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_batch_records(src: &str) -> Result<Vec<BatchEntry>, CorpusError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: BatchEntry =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse { line: i + 1, reason: e.to_string() })?;
        if !ids.insert(e.tweet_id.clone()) {
            return Err(CorpusError::DuplicateId(e.tweet_id));
        }
        out.push(e);
    }
    Ok(out)
}
