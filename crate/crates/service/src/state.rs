//! Service state as a pure function of the event sequence.

use std::collections::{BTreeMap, BTreeSet};

use annopipe::corpus::{Batch, Corpus, LabelRecord, LabeledPool, Lang, UnlabeledPool, Verdict};
use annopipe::qc::{AuditEntry, LotStatus, LotTracker, QcPlan, Review};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Pending,
    Labeled,
    Requeued,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub tweet_id: String,
    pub batch_id: String,
    pub assigned: Option<String>,
    pub state: TaskState,
}

/// Free-text instructions left for an annotator when a lot is rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub annotator_id: String,
    pub lot_id: String,
    pub text: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnnotatorCounts {
    pub labeled: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    BatchOpened { batch: Batch },
    Assigned { annotator_id: String, tweet_ids: Vec<String> },
    Labeled { record: LabelRecord },
    Resolved { tweet_id: String, value: bool, note: Option<String>, timestamp: i64 },
    LotSampled { lot_id: String, seed: u64 },
    LotReviewed { lot_id: String, verdicts: BTreeMap<String, Verdict>, note: Option<String>, timestamp: i64 },
}

/// Side results of applying one event.
#[derive(Debug, Default)]
pub struct Outcome {
    pub closed_lot: Option<String>,
    pub review: Option<Review>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub lang: Lang,
    pub pool: UnlabeledPool,
    pub batches: Vec<Batch>,
    pub tasks: BTreeMap<String, Task>,
    /// Current label of every labeled task. Labels of a rejected lot are
    /// dropped here when their tasks are requeued.
    pub labels: BTreeMap<String, LabelRecord>,
    /// Unsure-flagged tweets waiting for the supervisor.
    pub discussion: BTreeSet<String>,
    pub lots: LotTracker,
    pub audit: Vec<AuditEntry>,
    pub notes: Vec<Note>,
    pub annotators: BTreeMap<String, AnnotatorCounts>,
}

pub const DEFAULT_NOTE: &str = "Lot rejected. Re-read the definition and relabel the returned tweets carefully.";

impl PipelineState {
    pub fn new(pool: UnlabeledPool, plan: QcPlan) -> Result<Self, ServiceError> {
        Ok(Self {
            lang: pool.lang.clone(),
            pool,
            batches: Vec::new(),
            tasks: BTreeMap::new(),
            labels: BTreeMap::new(),
            discussion: BTreeSet::new(),
            lots: LotTracker::new(plan)?,
            audit: Vec::new(),
            notes: Vec::new(),
            annotators: BTreeMap::new(),
        })
    }

    /// Labeled with a resolved value and not under discussion.
    pub fn is_final(&self, tweet_id: &str) -> bool {
        self.tasks.get(tweet_id).is_some_and(|t| t.state == TaskState::Labeled)
            && !self.discussion.contains(tweet_id)
            && self.labels.get(tweet_id).is_some_and(|r| r.value.is_some())
    }

    /// Tasks without a final label, over all batches.
    pub fn remaining(&self) -> usize {
        self.tasks.keys().filter(|id| !self.is_final(id)).count()
    }

    /// Task ids in batch order.
    pub fn task_order(&self) -> impl Iterator<Item = &str> {
        self.batches.iter().flat_map(|b| b.tweet_ids())
    }

    /// Every batch with its final labels, in order. Fails when a label is
    /// missing or unresolved.
    pub fn labeled_pool(&self, corpus: &Corpus) -> Result<LabeledPool, ServiceError> {
        let mut pool = LabeledPool::new(self.lang.clone());
        for b in &self.batches {
            let records = b
                .tweet_ids()
                .map(|id| match self.labels.get(id) {
                    Some(r) if self.is_final(id) => Ok(r.clone()),
                    _ => Err(ServiceError::Incomplete { remaining: self.remaining() }),
                })
                .collect::<Result<Vec<_>, _>>()?;
            pool.append_batch(b, records, corpus)?;
        }
        Ok(pool)
    }

    pub fn open_lot(&self, annotator_id: &str) -> Option<(&str, usize)> {
        self.lots
            .lots()
            .find(|l| l.annotator_id == annotator_id && l.status == LotStatus::Open)
            .map(|l| (l.lot_id.as_str(), l.records.len()))
    }

    /// Fails exactly when `apply` would.
    pub fn check(&self, event: &Event) -> Result<(), ServiceError> {
        match event {
            Event::BatchOpened { batch } => {
                if self.batches.iter().any(|b| b.id == batch.id) {
                    return Err(ServiceError::BadRequest(format!("batch `{}` already exists", batch.id)));
                }
                if batch.is_empty() {
                    return Err(ServiceError::BadRequest("empty batch".into()));
                }
                let mut seen = BTreeSet::new();
                for id in batch.tweet_ids() {
                    if !self.pool.contains(id) || !seen.insert(id) {
                        return Err(ServiceError::BadRequest(format!("`{id}` is not in the unlabeled pool")));
                    }
                }
            }
            Event::Assigned { annotator_id, tweet_ids } => {
                if annotator_id.is_empty() {
                    return Err(ServiceError::BadRequest("annotator id is empty".into()));
                }
                for id in tweet_ids {
                    let t = self.tasks.get(id).ok_or_else(|| ServiceError::UnknownTweet(id.clone()))?;
                    if t.state == TaskState::Labeled || t.assigned.as_ref().is_some_and(|a| a != annotator_id) {
                        return Err(ServiceError::NotAssigned { tweet_id: id.clone(), annotator_id: annotator_id.clone() });
                    }
                }
            }
            Event::Labeled { record } => {
                let t = self.tasks.get(&record.tweet_id).ok_or_else(|| ServiceError::UnknownTweet(record.tweet_id.clone()))?;
                if t.assigned.as_deref() != Some(record.annotator_id.as_str()) {
                    return Err(ServiceError::NotAssigned {
                        tweet_id: record.tweet_id.clone(),
                        annotator_id: record.annotator_id.clone(),
                    });
                }
                if t.state == TaskState::Labeled {
                    return Err(ServiceError::AlreadyLabeled(record.tweet_id.clone()));
                }
                if record.value.is_none() && !record.unsure_flag {
                    return Err(ServiceError::BadRequest("a label needs a value unless flagged unsure".into()));
                }
            }
            Event::Resolved { tweet_id, .. } => {
                if !self.discussion.contains(tweet_id) {
                    return Err(ServiceError::NotInDiscussion(tweet_id.clone()));
                }
            }
            Event::LotSampled { lot_id, .. } => {
                let lot = self.lots.lot(lot_id).ok_or_else(|| ServiceError::UnknownLot(lot_id.clone()))?;
                if lot.status == LotStatus::Open {
                    let plan = self.lots.plan;
                    return Err(ServiceError::LotOpen { lot_id: lot_id.clone(), have: lot.records.len(), need: plan.lot_size });
                }
                if self.lots.sample(lot_id).is_some() {
                    return Err(ServiceError::BadRequest(format!("lot `{lot_id}` is already sampled")));
                }
            }
            Event::LotReviewed { lot_id, verdicts, .. } => {
                let lot = self.lots.lot(lot_id).ok_or_else(|| ServiceError::UnknownLot(lot_id.clone()))?;
                if matches!(lot.status, LotStatus::Accepted | LotStatus::Rejected) {
                    return Err(ServiceError::Qc(annopipe::qc::QcError::AlreadyDecided(lot_id.clone())));
                }
                let sample =
                    self.lots.sample(lot_id).ok_or_else(|| ServiceError::Qc(annopipe::qc::QcError::NotSampledYet(lot_id.clone())))?;
                if let Some(id) = verdicts.keys().find(|id| !sample.tweet_ids.contains(id)) {
                    return Err(ServiceError::Qc(annopipe::qc::QcError::NotSampled(id.clone())));
                }
                let missing = sample.tweet_ids.iter().filter(|id| !verdicts.contains_key(*id) && !sample.verdicts.contains_key(*id)).count();
                if missing > 0 {
                    return Err(ServiceError::Qc(annopipe::qc::QcError::MissingVerdicts(missing)));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, event: &Event) -> Result<Outcome, ServiceError> {
        self.check(event)?;
        let mut out = Outcome::default();
        match event {
            Event::BatchOpened { batch } => {
                let ids: Vec<&str> = batch.tweet_ids().collect();
                self.pool.remove(&ids)?;
                for id in ids {
                    self.tasks.insert(
                        id.to_string(),
                        Task { tweet_id: id.to_string(), batch_id: batch.id.clone(), assigned: None, state: TaskState::Pending },
                    );
                }
                self.batches.push(batch.clone());
            }
            Event::Assigned { annotator_id, tweet_ids } => {
                for id in tweet_ids {
                    self.tasks.get_mut(id).expect("checked").assigned = Some(annotator_id.clone());
                }
            }
            Event::Labeled { record } => {
                self.tasks.get_mut(&record.tweet_id).expect("checked").state = TaskState::Labeled;
                let counts = self.annotators.entry(record.annotator_id.clone()).or_default();
                counts.labeled += 1;
                if record.value == Some(true) {
                    counts.positives += 1;
                }
                if record.unsure_flag {
                    self.discussion.insert(record.tweet_id.clone());
                }
                self.labels.insert(record.tweet_id.clone(), record.clone());
                out.closed_lot = self.lots.record(record.clone());
            }
            Event::Resolved { tweet_id, value, .. } => {
                self.discussion.remove(tweet_id);
                if let Some(r) = self.labels.get_mut(tweet_id) {
                    r.value = Some(*value);
                }
            }
            Event::LotSampled { lot_id, seed } => {
                self.lots.review_sample(lot_id, *seed)?;
            }
            Event::LotReviewed { lot_id, verdicts, note, timestamp } => {
                let review = self.lots.submit_verdicts(lot_id, verdicts, *timestamp)?;
                for id in &review.requeued {
                    let task = self.tasks.get_mut(id).expect("lot records are tasks");
                    task.state = TaskState::Requeued;
                    task.assigned = Some(review.audit.annotator_id.clone());
                    self.labels.remove(id);
                    self.discussion.remove(id);
                }
                if !review.requeued.is_empty() {
                    self.notes.push(Note {
                        annotator_id: review.audit.annotator_id.clone(),
                        lot_id: lot_id.clone(),
                        text: note.clone().unwrap_or_else(|| DEFAULT_NOTE.to_string()),
                        timestamp: *timestamp,
                    });
                }
                self.audit.push(review.audit.clone());
                out.review = Some(review);
            }
        }
        Ok(out)
    }
}
