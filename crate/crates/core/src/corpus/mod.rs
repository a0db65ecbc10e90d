//! Corpus items, unlabeled and labeled pools, batches and dataset export.

mod io;
mod split;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{Normalizer, TokenSequence};

pub use io::{
    ingest, parse_batch_records, parse_corpus, parse_label_csv, parse_tweet_line, write_batch_records,
    write_corpus, write_label_csv, Ingested, LineError, ParsedCorpus,
};
pub use split::{split_train_test, stratified_split};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate tweet id `{0}`")]
    DuplicateId(String),
    #[error("tweet `{0}` is not in the pool")]
    NotInPool(String),
    #[error("tweet `{0}` is not in the corpus")]
    UnknownTweet(String),
    #[error("tweet `{0}` is already labeled")]
    AlreadyLabeled(String),
    #[error("record for `{0}` has no resolved label value")]
    UnresolvedLabel(String),
    #[error("tweet text for `{0}` is empty")]
    EmptyText(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot stratify: class {label} has {count} member(s), need at least 2")]
    CannotStratify { label: u8, count: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Language tag fixed at ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lang {
    En,
    De,
    Es,
    Fr,
    Gr,
    Other(String),
}

impl Lang {
    pub fn as_str(&self) -> &str {
        match self {
            Lang::En => "EN",
            Lang::De => "DE",
            Lang::Es => "ES",
            Lang::Fr => "FR",
            Lang::Gr => "GR",
            Lang::Other(s) => s,
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lang {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "EN" => Lang::En,
            "DE" => Lang::De,
            "ES" => Lang::Es,
            "FR" => Lang::Fr,
            "GR" | "EL" => Lang::Gr,
            _ => Lang::Other(s.to_string()),
        })
    }
}

impl Serialize for Lang {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Lang {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or_else(|never| match never {}))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub text: String,
    pub lang: Lang,
    pub account: String,
    /// UTC seconds.
    pub created_at: i64,
}

/// Immutable tweet store with normalized token sequences precomputed.
#[derive(Debug, Clone)]
pub struct Corpus {
    tweets: Vec<Tweet>,
    sequences: Vec<TokenSequence>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(tweets: Vec<Tweet>, normalizer: &Normalizer) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(tweets.len());
        for (i, t) in tweets.iter().enumerate() {
            if t.text.is_empty() {
                return Err(CorpusError::EmptyText(t.id.clone()));
            }
            if index.insert(t.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(t.id.clone()));
            }
        }
        let sequences = tweets.iter().map(|t| normalizer.sequence(&t.id, &t.text)).collect();
        Ok(Self { tweets, sequences, index })
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    pub fn tweets(&self) -> &[Tweet] {
        &self.tweets
    }

    pub fn get(&self, id: &str) -> Option<&Tweet> {
        self.index.get(id).map(|&i| &self.tweets[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn sequence(&self, id: &str) -> Option<&TokenSequence> {
        self.index.get(id).map(|&i| &self.sequences[i])
    }

    pub fn require_sequence(&self, id: &str) -> Result<&TokenSequence, CorpusError> {
        self.sequence(id).ok_or_else(|| CorpusError::UnknownTweet(id.to_string()))
    }

    /// Every tweet id, in corpus order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tweets.iter().map(|t| t.id.as_str())
    }
}

/// Tweets of one language not yet drawn into any batch. Removal is permanent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledPool {
    pub lang: Lang,
    members: BTreeSet<String>,
}

impl UnlabeledPool {
    pub fn new(lang: Lang, members: impl IntoIterator<Item = String>) -> Self {
        Self { lang, members: members.into_iter().collect() }
    }

    pub fn from_corpus(lang: Lang, corpus: &Corpus) -> Self {
        Self::new(lang, corpus.ids().map(str::to_string))
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.members.contains(id)
    }

    /// Members in ascending id order.
    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.members.iter()
    }

    /// Removes every id or none: an id outside the pool leaves it untouched.
    pub fn remove<S: AsRef<str>>(&mut self, ids: &[S]) -> Result<(), CorpusError> {
        let mut seen = BTreeSet::new();
        for id in ids {
            let id = id.as_ref();
            if !self.members.contains(id) || !seen.insert(id) {
                return Err(CorpusError::NotInPool(id.to_string()));
            }
        }
        for id in ids {
            self.members.remove(id.as_ref());
        }
        Ok(())
    }
}

/// Alias kept for call sites that read better as a verb.
pub fn remove_from_pool<S: AsRef<str>>(pool: &mut UnlabeledPool, ids: &[S]) -> Result<(), CorpusError> {
    pool.remove(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Erroneous,
}

/// One annotator judgment. `value` is `None` only while an unsure-flagged
/// record waits for supervisor discussion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub tweet_id: String,
    pub annotator_id: String,
    pub value: Option<bool>,
    #[serde(default)]
    pub unsure_flag: bool,
    #[serde(default)]
    pub supervisor_verdict: Option<Verdict>,
    pub timestamp: i64,
}

impl LabelRecord {
    pub fn new(tweet_id: impl Into<String>, annotator_id: impl Into<String>, value: bool, timestamp: i64) -> Self {
        Self {
            tweet_id: tweet_id.into(),
            annotator_id: annotator_id.into(),
            value: Some(value),
            unsure_flag: false,
            supervisor_verdict: None,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyTag {
    Keyword,
    Model,
    Random,
    Qbc,
    Uncertainty,
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyTag::Keyword => "keyword",
            StrategyTag::Model => "model",
            StrategyTag::Random => "random",
            StrategyTag::Qbc => "qbc",
            StrategyTag::Uncertainty => "uncertainty",
        })
    }
}

/// Scores attached to a batch entry by the strategy that chose it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EntryScores {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub member_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub tweet_id: String,
    pub strategy: StrategyTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<EntryScores>,
}

impl BatchEntry {
    pub fn new(tweet_id: impl Into<String>, strategy: StrategyTag) -> Self {
        Self { tweet_id: tweet_id.into(), strategy, scores: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub id: String,
    pub lang: Lang,
    /// 1-based ordinal of the batch within its language.
    pub k: usize,
    pub entries: Vec<BatchEntry>,
}

impl Batch {
    pub fn new(lang: Lang, k: usize, entries: Vec<BatchEntry>) -> Self {
        Self { id: format!("{}-{:04}", lang.as_str().to_ascii_lowercase(), k), lang, k, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tweet_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.tweet_id.as_str())
    }

    pub fn count_by_strategy(&self) -> BTreeMap<StrategyTag, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.strategy).or_default() += 1;
        }
        counts
    }
}

/// Per-batch positive ratio bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub batch_id: String,
    pub k: usize,
    pub size: usize,
    pub positives: usize,
}

impl BatchSummary {
    pub fn positive_ratio(&self) -> f64 {
        if self.size == 0 {
            0.0
        } else {
            self.positives as f64 / self.size as f64
        }
    }
}

/// Annotated tweets of one language after `stage` batch appends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPool {
    pub lang: Lang,
    records: BTreeMap<String, LabelRecord>,
    stage: usize,
    batches: Vec<BatchSummary>,
    /// Index into `batches` for every labeled id.
    #[serde(default)]
    batch_of: BTreeMap<String, usize>,
}

impl LabeledPool {
    pub fn new(lang: Lang) -> Self {
        Self { lang, records: BTreeMap::new(), stage: 0, batches: Vec::new(), batch_of: BTreeMap::new() }
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&LabelRecord> {
        self.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = &LabelRecord> {
        self.records.values()
    }

    pub fn batch_summaries(&self) -> &[BatchSummary] {
        &self.batches
    }

    /// `(tweet_id, label)` pairs in id order.
    pub fn examples(&self) -> impl Iterator<Item = (&str, bool)> {
        self.records.values().map(|r| (r.tweet_id.as_str(), r.value.unwrap_or(false)))
    }

    pub fn positives(&self) -> usize {
        self.records.values().filter(|r| r.value == Some(true)).count()
    }

    /// Appends one annotated batch and advances the stage. Every record must
    /// carry a resolved value, belong to the corpus and be new to the pool.
    pub fn append_batch(&mut self, batch: &Batch, records: Vec<LabelRecord>, corpus: &Corpus) -> Result<(), CorpusError> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !corpus.contains(&r.tweet_id) {
                return Err(CorpusError::UnknownTweet(r.tweet_id.clone()));
            }
            if r.value.is_none() {
                return Err(CorpusError::UnresolvedLabel(r.tweet_id.clone()));
            }
            if self.records.contains_key(&r.tweet_id) || !seen.insert(r.tweet_id.clone()) {
                return Err(CorpusError::AlreadyLabeled(r.tweet_id.clone()));
            }
        }
        let positives = records.iter().filter(|r| r.value == Some(true)).count();
        self.batches.push(BatchSummary {
            batch_id: batch.id.clone(),
            k: batch.k,
            size: records.len(),
            positives,
        });
        for r in records {
            self.batch_of.insert(r.tweet_id.clone(), self.batches.len() - 1);
            self.records.insert(r.tweet_id.clone(), r);
        }
        self.stage += 1;
        Ok(())
    }

    /// Replaces the label of an already labeled tweet, e.g. after a
    /// rejected QC lot was annotated again. Batch counts follow the new value.
    pub fn relabel(&mut self, record: LabelRecord) -> Result<(), CorpusError> {
        if record.value.is_none() {
            return Err(CorpusError::UnresolvedLabel(record.tweet_id));
        }
        let Some(old) = self.records.get_mut(&record.tweet_id) else {
            return Err(CorpusError::UnknownTweet(record.tweet_id));
        };
        let summary = &mut self.batches[self.batch_of[&record.tweet_id]];
        if old.value == Some(true) {
            summary.positives -= 1;
        }
        if record.value == Some(true) {
            summary.positives += 1;
        }
        *old = record;
        Ok(())
    }
}

/// Fails on the first id present in both the unlabeled and labeled pool.
pub fn check_disjoint(pool: &UnlabeledPool, labeled: &LabeledPool) -> Result<(), CorpusError> {
    match labeled.records.keys().find(|id| pool.contains(id)) {
        Some(id) => Err(CorpusError::AlreadyLabeled(id.clone())),
        None => Ok(()),
    }
}

/// Train/test split shipped as ids plus binary labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetExport {
    pub train: Vec<(String, bool)>,
    pub test: Vec<(String, bool)>,
}

fn positive_ratio(items: &[(String, bool)]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().filter(|(_, y)| *y).count() as f64 / items.len() as f64
}

impl DatasetExport {
    pub fn train_positive_ratio(&self) -> f64 {
        positive_ratio(&self.train)
    }

    pub fn test_positive_ratio(&self) -> f64 {
        positive_ratio(&self.test)
    }

    /// Writes `train.csv` and `test.csv` into `dir`.
    pub fn write(&self, dir: &std::path::Path) -> Result<(std::path::PathBuf, std::path::PathBuf), CorpusError> {
        std::fs::create_dir_all(dir)?;
        let train = dir.join("train.csv");
        let test = dir.join("test.csv");
        std::fs::write(&train, write_label_csv(&self.train))?;
        std::fs::write(&test, write_label_csv(&self.test))?;
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tweet(id: &str, text: &str) -> Tweet {
        Tweet { id: id.into(), text: text.into(), lang: Lang::En, account: "a".into(), created_at: 0 }
    }

    fn corpus(n: usize) -> Corpus {
        let tweets = (0..n).map(|i| tweet(&format!("t{i:03}"), "hello world")).collect();
        Corpus::new(tweets, &Normalizer::default()).unwrap()
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = Corpus::new(vec![tweet("x", "a"), tweet("x", "b")], &Normalizer::default()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "x"));
    }

    #[test]
    fn remove_is_all_or_nothing() {
        let c = corpus(5);
        let mut pool = UnlabeledPool::from_corpus(Lang::En, &c);
        assert!(pool.remove(&["t000", "nope"]).is_err());
        assert_eq!(pool.len(), 5);
        pool.remove(&["t000", "t001"]).unwrap();
        assert_eq!(pool.len(), 3);
        assert!(!pool.contains("t000"));
        let none: [&str; 0] = [];
        pool.remove(&none).unwrap();
        assert_eq!(pool.len(), 3);
    }

    #[test]
    fn remove_rejects_repeated_id() {
        let c = corpus(3);
        let mut pool = UnlabeledPool::from_corpus(Lang::En, &c);
        assert!(pool.remove(&["t000", "t000"]).is_err());
        assert_eq!(pool.len(), 3);
    }

    #[test]
    fn large_pool_arithmetic() {
        // A pool the size of the English collection, minus one initial batch.
        let total = 92_324_248usize;
        let batch = 10_000usize;
        assert_eq!(total - batch, 92_314_248);
    }

    #[test]
    fn append_advances_stage_and_blocks_relabel() {
        let c = corpus(4);
        let mut lp = LabeledPool::new(Lang::En);
        let b = Batch::new(Lang::En, 1, vec![BatchEntry::new("t000", StrategyTag::Random)]);
        lp.append_batch(&b, vec![LabelRecord::new("t000", "ann", true, 1)], &c).unwrap();
        assert_eq!(lp.stage(), 1);
        assert_eq!(lp.batch_summaries()[0].positives, 1);
        let again = lp.append_batch(&b, vec![LabelRecord::new("t000", "ann", false, 2)], &c);
        assert!(matches!(again, Err(CorpusError::AlreadyLabeled(_))));
        assert_eq!(lp.stage(), 1);
    }

    #[test]
    fn unresolved_record_rejected() {
        let c = corpus(2);
        let mut lp = LabeledPool::new(Lang::En);
        let mut r = LabelRecord::new("t001", "ann", true, 1);
        r.value = None;
        r.unsure_flag = true;
        let b = Batch::new(Lang::En, 1, vec![]);
        assert!(matches!(lp.append_batch(&b, vec![r], &c), Err(CorpusError::UnresolvedLabel(_))));
    }

    #[test]
    fn lang_round_trip() {
        for tag in ["EN", "DE", "ES", "FR", "GR", "IT"] {
            let l: Lang = tag.parse().unwrap();
            assert_eq!(l.as_str(), tag);
        }
    }
}
