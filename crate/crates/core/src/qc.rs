//! Lot-based acceptance sampling of annotator output: every 1,000 finished
//! labels form a lot, a supervisor checks 80 of them, and the lot is
//! accepted when at most 7 are wrong.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use thiserror::Error;

use crate::corpus::{LabelRecord, Verdict};

pub const LOT_SIZE: usize = 1000;
pub const SAMPLE_SIZE: usize = 80;
pub const ACCEPT_MAX: usize = 7;

#[derive(Debug, Error)]
pub enum QcError {
    #[error("lot `{lot}` holds {have} of {need} records")]
    LotNotClosed { lot: String, have: usize, need: usize },
    #[error("unknown lot `{0}`")]
    UnknownLot(String),
    #[error("record `{0}` is not in the sample")]
    NotSampled(String),
    #[error("{0} sampled records lack a verdict")]
    MissingVerdicts(usize),
    #[error("lot `{0}` was already decided")]
    AlreadyDecided(String),
    #[error("lot `{0}` has not been sampled")]
    NotSampledYet(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("audit log line {line}: {reason}")]
    Audit { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Single sampling plan: lot size, sample size and acceptance number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcPlan {
    pub lot_size: usize,
    pub sample_size: usize,
    pub accept_max: usize,
}

impl Default for QcPlan {
    fn default() -> Self {
        Self { lot_size: LOT_SIZE, sample_size: SAMPLE_SIZE, accept_max: ACCEPT_MAX }
    }
}

impl QcPlan {
    pub fn validate(&self) -> Result<(), QcError> {
        if self.sample_size == 0 || self.sample_size > self.lot_size {
            return Err(QcError::InvalidPlan(format!("sample {} of lot {}", self.sample_size, self.lot_size)));
        }
        if self.accept_max >= self.sample_size {
            return Err(QcError::InvalidPlan("acceptance number must be below the sample size".into()));
        }
        Ok(())
    }

    pub fn decide_count(&self, erroneous: usize) -> Decision {
        if erroneous <= self.accept_max {
            Decision::Accepted
        } else {
            Decision::Rejected
        }
    }

    /// Probability of accepting a lot whose records are each wrong with
    /// probability `error_rate`.
    pub fn acceptance_probability(&self, error_rate: f64) -> f64 {
        match Binomial::new(error_rate.clamp(0.0, 1.0), self.sample_size as u64) {
            Ok(b) => b.cdf(self.accept_max as u64),
            Err(_) => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LotStatus {
    Open,
    Closed,
    Sampled,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lot {
    pub lot_id: String,
    pub annotator_id: String,
    /// Records in completion order.
    pub records: Vec<LabelRecord>,
    pub status: LotStatus,
}

impl Lot {
    pub fn new(lot_id: impl Into<String>, annotator_id: impl Into<String>) -> Self {
        Self { lot_id: lot_id.into(), annotator_id: annotator_id.into(), records: Vec::new(), status: LotStatus::Open }
    }

    pub fn is_closed(&self, plan: &QcPlan) -> bool {
        self.records.len() == plan.lot_size
    }

    pub fn tweet_ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.tweet_id.as_str())
    }
}

/// The records a supervisor reviews, and their verdicts so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcSample {
    pub lot_id: String,
    pub seed: u64,
    pub tweet_ids: Vec<String>,
    pub verdicts: BTreeMap<String, Verdict>,
    /// Sampled records that went through the unsure discussion; a verdict
    /// on them never counts as an error.
    pub exempt: BTreeSet<String>,
}

impl QcSample {
    pub fn set_verdict(&mut self, tweet_id: &str, verdict: Verdict) -> Result<(), QcError> {
        if !self.tweet_ids.iter().any(|t| t == tweet_id) {
            return Err(QcError::NotSampled(tweet_id.into()));
        }
        self.verdicts.insert(tweet_id.into(), verdict);
        Ok(())
    }

    pub fn missing(&self) -> usize {
        self.tweet_ids.iter().filter(|t| !self.verdicts.contains_key(*t)).count()
    }

    pub fn erroneous(&self) -> usize {
        self.verdicts.iter().filter(|(id, v)| **v == Verdict::Erroneous && !self.exempt.contains(*id)).count()
    }
}

/// Uniform sample of `plan.sample_size` records of a closed lot.
pub fn draw_sample(lot: &Lot, plan: &QcPlan, seed: u64) -> Result<QcSample, QcError> {
    plan.validate()?;
    if !lot.is_closed(plan) {
        return Err(QcError::LotNotClosed { lot: lot.lot_id.clone(), have: lot.records.len(), need: plan.lot_size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, lot.records.len(), plan.sample_size);
    let mut tweet_ids = Vec::with_capacity(plan.sample_size);
    let mut exempt = BTreeSet::new();
    for i in picked {
        let r = &lot.records[i];
        if r.unsure_flag {
            exempt.insert(r.tweet_id.clone());
        }
        tweet_ids.push(r.tweet_id.clone());
    }
    Ok(QcSample { lot_id: lot.lot_id.clone(), seed, tweet_ids, verdicts: BTreeMap::new(), exempt })
}

/// Accept when at most `accept_max` sampled records are erroneous.
pub fn decide(sample: &QcSample, plan: &QcPlan) -> Result<Decision, QcError> {
    match sample.missing() {
        0 => Ok(plan.decide_count(sample.erroneous())),
        n => Err(QcError::MissingVerdicts(n)),
    }
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub lot_id: String,
    pub annotator_id: String,
    pub seed: u64,
    pub verdicts: BTreeMap<String, Verdict>,
    pub erroneous: usize,
    pub decision: Decision,
    pub timestamp: i64,
}

pub fn append_audit(path: &Path, entry: &AuditEntry) -> Result<(), QcError> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(entry).map_err(|e| QcError::Audit { line: 0, reason: e.to_string() })?;
    writeln!(f, "{line}")?;
    f.sync_data()?;
    Ok(())
}

pub fn parse_audit_log(src: &str) -> Result<Vec<AuditEntry>, QcError> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| QcError::Audit { line: i + 1, reason: e.to_string() }))
        .collect()
}

/// Outcome of recording a supervisor decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Review {
    pub decision: Decision,
    pub erroneous: usize,
    /// Tweets sent back to the annotator; empty on acceptance.
    pub requeued: Vec<String>,
    pub audit: AuditEntry,
}

/// Groups each annotator's finished labels into lots and runs the review
/// workflow. One open lot per annotator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LotTracker {
    pub plan: QcPlan,
    lots: BTreeMap<String, Lot>,
    open: BTreeMap<String, String>,
    samples: BTreeMap<String, QcSample>,
    counters: BTreeMap<String, usize>,
    /// Tweets each annotator must label again, oldest first.
    requeue: BTreeMap<String, VecDeque<String>>,
}

impl LotTracker {
    pub fn new(plan: QcPlan) -> Result<Self, QcError> {
        plan.validate()?;
        Ok(Self { plan, ..Self::default() })
    }

    /// Adds a finished label to the annotator's open lot. Returns the lot id
    /// when this record closes it.
    pub fn record(&mut self, record: LabelRecord) -> Option<String> {
        let ann = record.annotator_id.clone();
        if let Some(q) = self.requeue.get_mut(&ann) {
            q.retain(|t| *t != record.tweet_id);
        }
        let lot_id = match self.open.get(&ann) {
            Some(id) => id.clone(),
            None => {
                let n = self.counters.entry(ann.clone()).or_insert(0);
                *n += 1;
                let id = format!("{ann}-lot{:04}", *n);
                self.lots.insert(id.clone(), Lot::new(id.clone(), ann.clone()));
                self.open.insert(ann.clone(), id.clone());
                id
            }
        };
        let lot = self.lots.get_mut(&lot_id).expect("open lot exists");
        lot.records.push(record);
        if lot.is_closed(&self.plan) {
            lot.status = LotStatus::Closed;
            self.open.remove(&ann);
            Some(lot_id)
        } else {
            None
        }
    }

    pub fn lot(&self, lot_id: &str) -> Option<&Lot> {
        self.lots.get(lot_id)
    }

    pub fn lots(&self) -> impl Iterator<Item = &Lot> {
        self.lots.values()
    }

    pub fn sample(&self, lot_id: &str) -> Option<&QcSample> {
        self.samples.get(lot_id)
    }

    /// Draws the review sample once; later calls return the same sample.
    pub fn review_sample(&mut self, lot_id: &str, seed: u64) -> Result<&QcSample, QcError> {
        let lot = self.lots.get_mut(lot_id).ok_or_else(|| QcError::UnknownLot(lot_id.into()))?;
        if !self.samples.contains_key(lot_id) {
            let s = draw_sample(lot, &self.plan, seed)?;
            lot.status = LotStatus::Sampled;
            self.samples.insert(lot_id.into(), s);
        }
        Ok(&self.samples[lot_id])
    }

    /// Applies a full set of verdicts and decides the lot.
    pub fn submit_verdicts(
        &mut self,
        lot_id: &str,
        verdicts: &BTreeMap<String, Verdict>,
        timestamp: i64,
    ) -> Result<Review, QcError> {
        let lot = self.lots.get(lot_id).ok_or_else(|| QcError::UnknownLot(lot_id.into()))?;
        if matches!(lot.status, LotStatus::Accepted | LotStatus::Rejected) {
            return Err(QcError::AlreadyDecided(lot_id.into()));
        }
        let mut sample = self.samples.get(lot_id).cloned().ok_or_else(|| QcError::NotSampledYet(lot_id.into()))?;
        for (id, v) in verdicts {
            sample.set_verdict(id, *v)?;
        }
        let decision = decide(&sample, &self.plan)?;
        let lot = self.lots.get_mut(lot_id).expect("checked");
        let requeued: Vec<String> = match decision {
            Decision::Accepted => {
                lot.status = LotStatus::Accepted;
                Vec::new()
            }
            Decision::Rejected => {
                lot.status = LotStatus::Rejected;
                let q = self.requeue.entry(lot.annotator_id.clone()).or_default();
                let mut added = Vec::new();
                for id in lot.tweet_ids() {
                    if !q.iter().any(|t| t == id) {
                        q.push_back(id.to_string());
                        added.push(id.to_string());
                    }
                }
                added
            }
        };
        let audit = AuditEntry {
            lot_id: lot_id.into(),
            annotator_id: lot.annotator_id.clone(),
            seed: sample.seed,
            verdicts: sample.verdicts.clone(),
            erroneous: sample.erroneous(),
            decision,
            timestamp,
        };
        let erroneous = sample.erroneous();
        self.samples.insert(lot_id.into(), sample);
        Ok(Review { decision, erroneous, requeued, audit })
    }

    pub fn requeued(&self, annotator_id: &str) -> Vec<String> {
        self.requeue.get(annotator_id).map(|q| q.iter().cloned().collect()).unwrap_or_default()
    }

    /// Lots waiting for a supervisor.
    pub fn awaiting_review(&self) -> Vec<&str> {
        self.lots
            .values()
            .filter(|l| matches!(l.status, LotStatus::Closed | LotStatus::Sampled))
            .map(|l| l.lot_id.as_str())
            .collect()
    }
}

/// Fraction of `lots` simulated lots accepted when each record is wrong
/// independently with probability `error_rate`.
pub fn simulate_acceptance(error_rate: f64, lots: usize, plan: &QcPlan, seed: u64) -> Result<f64, QcError> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0usize;
    for _ in 0..lots {
        let wrong: Vec<bool> = (0..plan.lot_size).map(|_| rng.random_bool(error_rate)).collect();
        let picked = index::sample(&mut rng, plan.lot_size, plan.sample_size);
        let errors = picked.iter().filter(|&i| wrong[i]).count();
        if plan.decide_count(errors) == Decision::Accepted {
            accepted += 1;
        }
    }
    Ok(accepted as f64 / lots.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_lot(n: usize) -> Lot {
        let mut lot = Lot::new("a-lot0001", "a");
        lot.records = (0..n).map(|i| LabelRecord::new(format!("t{i:04}"), "a", i % 2 == 0, i as i64)).collect();
        lot
    }

    #[test]
    fn sample_size_and_determinism() {
        let plan = QcPlan::default();
        let lot = closed_lot(1000);
        let a = draw_sample(&lot, &plan, 1).unwrap();
        let b = draw_sample(&lot, &plan, 1).unwrap();
        let c = draw_sample(&lot, &plan, 2).unwrap();
        assert_eq!(a.tweet_ids.len(), 80);
        assert_eq!(a, b);
        assert_ne!(a.tweet_ids, c.tweet_ids);
        let unique: BTreeSet<_> = a.tweet_ids.iter().collect();
        assert_eq!(unique.len(), 80);
    }

    #[test]
    fn short_lot_rejected() {
        assert!(matches!(draw_sample(&closed_lot(999), &QcPlan::default(), 0), Err(QcError::LotNotClosed { .. })));
    }

    #[test]
    fn boundary() {
        let plan = QcPlan::default();
        assert_eq!(plan.decide_count(0), Decision::Accepted);
        assert_eq!(plan.decide_count(7), Decision::Accepted);
        assert_eq!(plan.decide_count(8), Decision::Rejected);
    }

    #[test]
    fn missing_verdicts() {
        let plan = QcPlan::default();
        let mut s = draw_sample(&closed_lot(1000), &plan, 0).unwrap();
        let first = s.tweet_ids[0].clone();
        s.set_verdict(&first, Verdict::Correct).unwrap();
        assert!(matches!(decide(&s, &plan), Err(QcError::MissingVerdicts(79))));
        assert!(matches!(s.set_verdict("nope", Verdict::Correct), Err(QcError::NotSampled(_))));
    }

    #[test]
    fn unsure_records_never_count() {
        let plan = QcPlan::default();
        let mut lot = closed_lot(1000);
        for r in &mut lot.records {
            r.unsure_flag = true;
        }
        let mut s = draw_sample(&lot, &plan, 0).unwrap();
        for id in s.tweet_ids.clone() {
            s.set_verdict(&id, Verdict::Erroneous).unwrap();
        }
        assert_eq!(decide(&s, &plan).unwrap(), Decision::Accepted);
    }

    #[test]
    fn tracker_rejects_and_requeues_once() {
        let plan = QcPlan { lot_size: 10, sample_size: 4, accept_max: 1 };
        let mut t = LotTracker::new(plan).unwrap();
        let mut closed = None;
        for i in 0..10 {
            closed = t.record(LabelRecord::new(format!("t{i}"), "ann", true, i));
        }
        let lot = closed.unwrap();
        assert_eq!(t.awaiting_review(), vec![lot.as_str()]);
        let ids = t.review_sample(&lot, 3).unwrap().tweet_ids.clone();
        let verdicts: BTreeMap<String, Verdict> = ids.iter().map(|i| (i.clone(), Verdict::Erroneous)).collect();
        let r = t.submit_verdicts(&lot, &verdicts, 99).unwrap();
        assert_eq!(r.decision, Decision::Rejected);
        assert_eq!(r.requeued.len(), 10);
        assert_eq!(t.requeued("ann").len(), 10);
        assert!(matches!(t.submit_verdicts(&lot, &verdicts, 100), Err(QcError::AlreadyDecided(_))));
        // Relabeling drains the queue.
        t.record(LabelRecord::new("t3", "ann", false, 200));
        assert_eq!(t.requeued("ann").len(), 9);
        assert!(!t.requeued("ann").contains(&"t3".to_string()));
    }

    #[test]
    fn audit_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("audit.jsonl");
        let e = AuditEntry {
            lot_id: "a-lot0001".into(),
            annotator_id: "a".into(),
            seed: 4,
            verdicts: BTreeMap::from([("t1".to_string(), Verdict::Correct)]),
            erroneous: 0,
            decision: Decision::Accepted,
            timestamp: 5,
        };
        append_audit(&p, &e).unwrap();
        append_audit(&p, &e).unwrap();
        let back = parse_audit_log(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(back, vec![e.clone(), e]);
    }

    #[test]
    fn invalid_plan() {
        assert!(LotTracker::new(QcPlan { lot_size: 10, sample_size: 20, accept_max: 1 }).is_err());
        assert!(LotTracker::new(QcPlan { lot_size: 10, sample_size: 5, accept_max: 5 }).is_err());
    }
}
