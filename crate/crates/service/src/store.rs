//! Commands and queries over the journaled state.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use annopipe::classify::feature_hash;
use annopipe::corpus::{ingest, parse_batch_records, stratified_split, Batch, Corpus, LabelRecord, LabeledPool, StrategyTag, UnlabeledPool, Verdict};
use annopipe::preprocess::Normalizer;
use annopipe::qc::{Decision, LotStatus};
use annopipe::sampling::{select_batch, ActiveLoopConfig, SamplingWarning};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::journal::{read_snapshot, write_snapshot, Journal};
use crate::state::{Event, Note, Outcome, PipelineState, TaskState};
use crate::ServiceError;

pub const WAITING: &str = "waiting for batch";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub tweet_id: String,
    pub text: String,
    pub lang: String,
    pub batch_id: String,
    pub assigned_annotator: Option<String>,
    pub state: TaskState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskList {
    pub status: String,
    pub tasks: Vec<AnnotationTask>,
    pub notes: Vec<Note>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub annotator_id: String,
    pub tweet_id: String,
    pub value: Option<bool>,
    pub unsure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub tweet_id: String,
    pub lot_id: Option<String>,
    pub lot_progress: usize,
    pub lot_size: usize,
    /// Set when this label closed a lot.
    pub lot_closed: Option<String>,
    pub discussion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscussionItem {
    pub tweet_id: String,
    pub text: String,
    pub annotator_id: String,
    pub value: Option<bool>,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotInfo {
    pub lot_id: String,
    pub annotator_id: String,
    pub status: LotStatus,
    pub records: usize,
    pub lot_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleItem {
    pub tweet_id: String,
    pub text: String,
    pub value: Option<bool>,
    pub unsure: bool,
    /// Went through discussion; an erroneous verdict does not count.
    pub exempt: bool,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePayload {
    pub lot_id: String,
    pub annotator_id: String,
    pub seed: u64,
    pub sample_size: usize,
    pub accept_max: usize,
    pub items: Vec<SampleItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub lot_id: String,
    pub decision: Decision,
    pub erroneous: usize,
    pub requeued: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchInfo {
    pub batch_id: String,
    pub k: usize,
    pub size: usize,
    pub by_strategy: BTreeMap<StrategyTag, usize>,
    pub warnings: Vec<SamplingWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub batch_id: String,
    pub k: usize,
    pub size: usize,
    pub labeled: usize,
    pub positives: usize,
    pub positive_ratio: f64,
    pub by_strategy: BTreeMap<StrategyTag, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub annotator_id: String,
    pub labeled: usize,
    pub positives: usize,
    pub open_lot: Option<String>,
    pub lot_progress: usize,
    pub lot_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub batches: Vec<BatchStats>,
    pub annotators: Vec<SessionStats>,
    pub pool_remaining: usize,
    pub tasks_remaining: usize,
    pub discussion: usize,
    pub awaiting_review: Vec<String>,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportInfo {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub train: usize,
    pub test: usize,
    pub train_positive_ratio: f64,
    pub test_positive_ratio: f64,
}

/// Model training and selection for the next batch, run without holding
/// the store.
pub struct BatchJob {
    corpus: Arc<Corpus>,
    pool: UnlabeledPool,
    labeled: LabeledPool,
    cfg: ActiveLoopConfig,
    base: usize,
}

pub struct PreparedBatch {
    batch: Batch,
    warnings: Vec<SamplingWarning>,
    base: usize,
}

impl BatchJob {
    pub fn run(mut self) -> Result<PreparedBatch, ServiceError> {
        match select_batch(&mut self.pool, &self.labeled, &self.corpus, &self.cfg, None)? {
            Some((batch, warnings)) => Ok(PreparedBatch { batch, warnings, base: self.base }),
            None => Err(ServiceError::NothingSelected),
        }
    }
}

pub struct Store {
    cfg: ServiceConfig,
    corpus: Arc<Corpus>,
    state: PipelineState,
    journal: Journal,
    since_snapshot: u64,
}

impl Store {
    /// Loads the configured corpus, then opens the data directory.
    pub fn open(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let ing = ingest(&cfg.corpus, cfg.lang.clone(), &Normalizer::default())?;
        Self::open_with(cfg, Arc::new(ing.corpus))
    }

    /// Rebuilds the state from the snapshot and the journal tail. On a fresh
    /// data directory the configured initial batches are opened.
    pub fn open_with(cfg: ServiceConfig, corpus: Arc<Corpus>) -> Result<Self, ServiceError> {
        let (journal, recovered) = Journal::open(&cfg.data_dir, cfg.fsync)?;
        let fresh = || -> Result<PipelineState, ServiceError> {
            PipelineState::new(UnlabeledPool::new(cfg.lang.clone(), corpus.ids().map(str::to_string)), cfg.qc)
        };
        let (mut state, from) = match read_snapshot(&cfg.data_dir) {
            Some(s) if s.seq <= journal.last_seq() => (s.state, s.seq),
            Some(s) => {
                return Err(ServiceError::Corrupt {
                    line: 0,
                    reason: format!("snapshot at event {} is ahead of the journal ({})", s.seq, journal.last_seq()),
                })
            }
            None => (fresh()?, 0),
        };
        for line in recovered.lines.iter().filter(|l| l.seq > from) {
            state.apply(&line.event).map_err(|e| ServiceError::Corrupt { line: line.seq as usize, reason: e.to_string() })?;
        }
        let replayed = journal.last_seq() - from;
        tracing::info!(events = journal.last_seq(), replayed, "state recovered");
        let mut store = Self { cfg, corpus, state, journal, since_snapshot: replayed };
        if store.journal.last_seq() == 0 {
            for (i, path) in store.cfg.initial_batches.clone().iter().enumerate() {
                let entries = parse_batch_records(&std::fs::read_to_string(path)?)?;
                let batch = Batch::new(store.cfg.lang.clone(), i + 1, entries);
                store.commit(Event::BatchOpened { batch })?;
            }
        }
        Ok(store)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn state(&self) -> &PipelineState {
        &self.state
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn events(&self) -> u64 {
        self.journal.last_seq()
    }

    /// The single write path: validate, journal, apply.
    fn commit(&mut self, event: Event) -> Result<Outcome, ServiceError> {
        self.state.check(&event)?;
        let seq = self.journal.append(&event)?;
        let out = self.state.apply(&event).map_err(|e| ServiceError::Internal(format!("journaled event failed: {e}")))?;
        self.since_snapshot += 1;
        if self.cfg.snapshot_every > 0 && self.since_snapshot >= self.cfg.snapshot_every {
            write_snapshot(&self.cfg.data_dir, seq, &self.state)?;
            self.since_snapshot = 0;
        }
        Ok(out)
    }

    pub fn snapshot(&mut self) -> Result<(), ServiceError> {
        write_snapshot(&self.cfg.data_dir, self.journal.last_seq(), &self.state)?;
        self.since_snapshot = 0;
        Ok(())
    }

    /// Opens a batch of records built elsewhere, such as an initial batch.
    pub fn open_batch(&mut self, batch: Batch) -> Result<BatchInfo, ServiceError> {
        let info = BatchInfo {
            batch_id: batch.id.clone(),
            k: batch.k,
            size: batch.len(),
            by_strategy: batch.count_by_strategy(),
            warnings: Vec::new(),
        };
        self.commit(Event::BatchOpened { batch })?;
        Ok(info)
    }

    fn task_view(&self, id: &str) -> AnnotationTask {
        let t = &self.state.tasks[id];
        AnnotationTask {
            tweet_id: id.to_string(),
            text: self.corpus.get(id).map(|t| t.text.clone()).unwrap_or_default(),
            lang: self.state.lang.to_string(),
            batch_id: t.batch_id.clone(),
            assigned_annotator: t.assigned.clone(),
            state: t.state,
        }
    }

    /// Requeued work first, then tasks already held by the annotator, then
    /// fresh tasks in batch order. Assignments are sticky.
    pub fn next_tasks(&mut self, annotator_id: &str, n: usize) -> Result<TaskList, ServiceError> {
        if annotator_id.is_empty() {
            return Err(ServiceError::BadRequest("annotator id is empty".into()));
        }
        let st = &self.state;
        let mine = |id: &str| st.tasks.get(id).is_some_and(|t| t.assigned.as_deref() == Some(annotator_id) && t.state != TaskState::Labeled);
        let mut picked: Vec<String> = Vec::new();
        let mut seen = BTreeSet::new();
        for id in st.lots.requeued(annotator_id) {
            if picked.len() < n && mine(&id) && seen.insert(id.clone()) {
                picked.push(id);
            }
        }
        for id in st.task_order() {
            if picked.len() >= n {
                break;
            }
            if mine(id) && seen.insert(id.to_string()) {
                picked.push(id.to_string());
            }
        }
        let mut fresh = Vec::new();
        for id in st.task_order() {
            if picked.len() + fresh.len() >= n {
                break;
            }
            let t = &st.tasks[id];
            if t.assigned.is_none() && t.state == TaskState::Pending {
                fresh.push(id.to_string());
            }
        }
        if !fresh.is_empty() {
            self.commit(Event::Assigned { annotator_id: annotator_id.to_string(), tweet_ids: fresh.clone() })?;
            picked.extend(fresh);
        }
        let tasks: Vec<AnnotationTask> = picked.iter().map(|id| self.task_view(id)).collect();
        let status = if tasks.is_empty() { WAITING } else { "ok" };
        let notes = self.state.notes.iter().filter(|n| n.annotator_id == annotator_id).cloned().collect();
        Ok(TaskList { status: status.into(), tasks, notes })
    }

    pub fn submit_label(&mut self, sub: LabelSubmission, now: i64) -> Result<LabelAck, ServiceError> {
        let record = LabelRecord {
            tweet_id: sub.tweet_id.clone(),
            annotator_id: sub.annotator_id.clone(),
            value: sub.value,
            unsure_flag: sub.unsure,
            supervisor_verdict: None,
            timestamp: now,
        };
        let out = self.commit(Event::Labeled { record })?;
        let lot_size = self.state.lots.plan.lot_size;
        let (lot_id, lot_progress) = match &out.closed_lot {
            Some(id) => (Some(id.clone()), lot_size),
            None => match self.state.open_lot(&sub.annotator_id) {
                Some((id, n)) => (Some(id.to_string()), n),
                None => (None, 0),
            },
        };
        Ok(LabelAck {
            tweet_id: sub.tweet_id.clone(),
            lot_id,
            lot_progress,
            lot_size,
            lot_closed: out.closed_lot,
            discussion: self.state.discussion.contains(&sub.tweet_id),
        })
    }

    pub fn discussion(&self) -> Vec<DiscussionItem> {
        self.state
            .discussion
            .iter()
            .filter_map(|id| self.state.labels.get(id))
            .map(|r| DiscussionItem {
                tweet_id: r.tweet_id.clone(),
                text: self.corpus.get(&r.tweet_id).map(|t| t.text.clone()).unwrap_or_default(),
                annotator_id: r.annotator_id.clone(),
                value: r.value,
                timestamp: r.timestamp,
            })
            .collect()
    }

    pub fn resolve(&mut self, tweet_id: &str, value: bool, note: Option<String>, now: i64) -> Result<(), ServiceError> {
        self.commit(Event::Resolved { tweet_id: tweet_id.to_string(), value, note, timestamp: now })?;
        Ok(())
    }

    pub fn lots(&self) -> Vec<LotInfo> {
        let size = self.state.lots.plan.lot_size;
        self.state
            .lots
            .lots()
            .map(|l| LotInfo {
                lot_id: l.lot_id.clone(),
                annotator_id: l.annotator_id.clone(),
                status: l.status,
                records: l.records.len(),
                lot_size: size,
            })
            .collect()
    }

    /// The review sample of a closed lot, drawn on first request.
    pub fn lot_sample(&mut self, lot_id: &str) -> Result<SamplePayload, ServiceError> {
        if self.state.lots.sample(lot_id).is_none() {
            let seed = feature_hash(lot_id.as_bytes(), self.cfg.seed);
            self.commit(Event::LotSampled { lot_id: lot_id.to_string(), seed })?;
        }
        let lots = &self.state.lots;
        let lot = lots.lot(lot_id).ok_or_else(|| ServiceError::UnknownLot(lot_id.into()))?;
        let sample = lots.sample(lot_id).expect("sampled above");
        let by_id: BTreeMap<&str, &LabelRecord> = lot.records.iter().map(|r| (r.tweet_id.as_str(), r)).collect();
        let items = sample
            .tweet_ids
            .iter()
            .map(|id| {
                let r = by_id[id.as_str()];
                SampleItem {
                    tweet_id: id.clone(),
                    text: self.corpus.get(id).map(|t| t.text.clone()).unwrap_or_default(),
                    value: self.state.labels.get(id).and_then(|l| l.value).or(r.value),
                    unsure: r.unsure_flag,
                    exempt: sample.exempt.contains(id),
                    verdict: sample.verdicts.get(id).copied(),
                }
            })
            .collect();
        Ok(SamplePayload {
            lot_id: lot_id.to_string(),
            annotator_id: lot.annotator_id.clone(),
            seed: sample.seed,
            sample_size: lots.plan.sample_size,
            accept_max: lots.plan.accept_max,
            items,
        })
    }

    pub fn submit_verdicts(
        &mut self,
        lot_id: &str,
        verdicts: BTreeMap<String, Verdict>,
        note: Option<String>,
        now: i64,
    ) -> Result<ReviewOutcome, ServiceError> {
        let out = self.commit(Event::LotReviewed { lot_id: lot_id.to_string(), verdicts, note, timestamp: now })?;
        let review = out.review.expect("review event yields a review");
        Ok(ReviewOutcome { lot_id: lot_id.to_string(), decision: review.decision, erroneous: review.erroneous, requeued: review.requeued.len() })
    }

    /// Checks that every task has a final label and snapshots what the
    /// selection needs.
    pub fn prepare_next_batch(&self) -> Result<BatchJob, ServiceError> {
        if self.state.batches.is_empty() {
            return Err(ServiceError::NoBatch);
        }
        let remaining = self.state.remaining();
        if remaining > 0 {
            return Err(ServiceError::Incomplete { remaining });
        }
        if self.state.pool.is_empty() {
            return Err(ServiceError::PoolExhausted);
        }
        Ok(BatchJob {
            corpus: Arc::clone(&self.corpus),
            pool: self.state.pool.clone(),
            labeled: self.state.labeled_pool(&self.corpus)?,
            cfg: self.cfg.active(),
            base: self.state.batches.len(),
        })
    }

    /// Opens a prepared batch unless another batch was opened meanwhile.
    pub fn commit_batch(&mut self, prepared: PreparedBatch) -> Result<BatchInfo, ServiceError> {
        if self.state.batches.len() != prepared.base {
            return Err(ServiceError::Stale);
        }
        let mut info = self.open_batch(prepared.batch)?;
        info.warnings = prepared.warnings;
        Ok(info)
    }

    /// Prepare, run and commit in one call.
    pub fn next_batch(&mut self) -> Result<BatchInfo, ServiceError> {
        let job = self.prepare_next_batch()?;
        let prepared = job.run()?;
        self.commit_batch(prepared)
    }

    pub fn stats(&self) -> Stats {
        let st = &self.state;
        let batches = st
            .batches
            .iter()
            .map(|b| {
                let finals: Vec<bool> =
                    b.tweet_ids().filter(|id| st.is_final(id)).filter_map(|id| st.labels.get(id).and_then(|r| r.value)).collect();
                let positives = finals.iter().filter(|y| **y).count();
                BatchStats {
                    batch_id: b.id.clone(),
                    k: b.k,
                    size: b.len(),
                    labeled: finals.len(),
                    positives,
                    positive_ratio: if finals.is_empty() { 0.0 } else { positives as f64 / finals.len() as f64 },
                    by_strategy: b.count_by_strategy(),
                }
            })
            .collect();
        let lot_size = st.lots.plan.lot_size;
        let annotators = st
            .annotators
            .iter()
            .map(|(id, c)| {
                let open = st.open_lot(id);
                SessionStats {
                    annotator_id: id.clone(),
                    labeled: c.labeled,
                    positives: c.positives,
                    open_lot: open.map(|(l, _)| l.to_string()),
                    lot_progress: open.map_or(0, |(_, n)| n),
                    lot_size,
                }
            })
            .collect();
        Stats {
            batches,
            annotators,
            pool_remaining: st.pool.len(),
            tasks_remaining: st.remaining(),
            discussion: st.discussion.len(),
            awaiting_review: st.lots.awaiting_review().into_iter().map(String::from).collect(),
            events: self.journal.last_seq(),
        }
    }

    /// Stratified split of every final label, written as CSV under
    /// `data_dir/export`.
    pub fn export(&self, test_fraction: Option<f64>) -> Result<ExportInfo, ServiceError> {
        let rows: Vec<(String, bool)> = self
            .state
            .labels
            .iter()
            .filter(|(id, _)| self.state.is_final(id))
            .filter_map(|(id, r)| r.value.map(|v| (id.clone(), v)))
            .collect();
        let ex = stratified_split(rows, test_fraction.unwrap_or(self.cfg.test_fraction), self.cfg.seed)?;
        let (train_path, test_path) = ex.write(&self.cfg.data_dir.join("export"))?;
        Ok(ExportInfo {
            train_path,
            test_path,
            train: ex.train.len(),
            test: ex.test.len(),
            train_positive_ratio: ex.train_positive_ratio(),
            test_positive_ratio: ex.test_positive_ratio(),
        })
    }
}
