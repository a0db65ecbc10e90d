//! The annotate / retrain / select cycle with a resumable checkpoint.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{qbc_select, QbcParams, SamplingError, SamplingWarning};
use crate::classify::{labeled_examples, ClassifyError, MemberSpec, TrainConfig};
use crate::corpus::{Batch, Corpus, CorpusError, LabelRecord, LabeledPool, Lang, StrategyTag, UnlabeledPool};
use crate::ensemble::{fit_stack, EnsembleConfig, STACK_FOLDS};

/// Supplies labels for a batch. May return fewer records than asked for;
/// the loop asks again for the rest.
pub trait Annotator {
    fn annotate(&mut self, batch: &Batch, pending: &[&str]) -> Result<Vec<LabelRecord>, AnnotatorError>;
}

#[derive(Debug, Error)]
pub enum AnnotatorError {
    /// The annotation source went away; `partial` holds whatever was
    /// finished before it did.
    #[error("annotator closed after {} labels", partial.len())]
    Closed { partial: Vec<LabelRecord> },
    #[error("annotator failed: {0}")]
    Failed(String),
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Annotator(#[from] AnnotatorError),
    #[error("label for `{0}` does not belong to the pending batch")]
    Unexpected(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Optional caps on how much annotation the loop may request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBudget {
    pub max_batches: Option<usize>,
    pub max_labels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveLoopConfig {
    pub specs: Vec<MemberSpec>,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub qbc: QbcParams,
    pub budget: AnnotationBudget,
    pub seed: u64,
}

impl Default for ActiveLoopConfig {
    fn default() -> Self {
        Self {
            specs: MemberSpec::defaults(),
            train: TrainConfig::sparse(),
            ensemble: EnsembleConfig::default(),
            qbc: QbcParams::default(),
            budget: AnnotationBudget::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    PoolExhausted,
    BatchBudget,
    LabelBudget,
    AnnotatorClosed,
    /// The selector returned an empty batch.
    NothingSelected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub batch_id: String,
    pub k: usize,
    pub labeled_before: usize,
    pub selected: usize,
    pub by_strategy: BTreeMap<StrategyTag, usize>,
    pub positives: usize,
    pub warnings: Vec<SamplingWarning>,
}

/// A selected batch whose labels are not all in yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingBatch {
    pub batch: Batch,
    pub received: Vec<LabelRecord>,
    pub warnings: Vec<SamplingWarning>,
    pub labeled_before: usize,
}

impl PendingBatch {
    fn remaining(&self) -> Vec<&str> {
        let done: BTreeSet<&str> = self.received.iter().map(|r| r.tweet_id.as_str()).collect();
        self.batch.tweet_ids().filter(|id| !done.contains(id)).collect()
    }
}

/// Everything needed to continue the loop after a restart. Models are not
/// stored; they are retrained deterministically from the labeled pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub lang: Lang,
    pub pool: UnlabeledPool,
    pub labeled: LabeledPool,
    pub pending: Option<PendingBatch>,
    pub log: Vec<IterationLog>,
    /// Batches started by this loop, including a pending one.
    pub batches_started: usize,
}

impl LoopState {
    pub fn new(pool: UnlabeledPool, labeled: LabeledPool) -> Self {
        Self { lang: pool.lang.clone(), pool, labeled, pending: None, log: Vec::new(), batches_started: 0 }
    }

    /// Writes to a sibling temp file and renames, so a crash leaves either
    /// the old or the new checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), LoopError> {
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| LoopError::Checkpoint(e.to_string()))?;
        serde_json::to_writer(&mut f, self).map_err(|e| LoopError::Checkpoint(e.to_string()))?;
        f.flush().and_then(|_| f.sync_all()).map_err(|e| LoopError::Checkpoint(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| LoopError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LoopError> {
        let s = std::fs::read_to_string(path).map_err(|e| LoopError::Checkpoint(e.to_string()))?;
        serde_json::from_str(&s).map_err(|e| LoopError::Checkpoint(e.to_string()))
    }

    fn labels_used(&self) -> usize {
        self.log.iter().map(|l| l.selected).sum::<usize>() + self.pending.as_ref().map_or(0, |p| p.batch.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub halt: HaltReason,
    pub completed: usize,
}

fn persist(state: &LoopState, checkpoint: Option<&Path>) -> Result<(), LoopError> {
    match checkpoint {
        Some(p) => state.save(p),
        None => Ok(()),
    }
}

/// Trains the stack on `labeled` and picks the next batch from `pool`,
/// removing the chosen ids. `label_cap` limits the batch size.
pub fn select_batch(
    pool: &mut UnlabeledPool,
    labeled: &LabeledPool,
    corpus: &Corpus,
    cfg: &ActiveLoopConfig,
    label_cap: Option<usize>,
) -> Result<Option<(Batch, Vec<SamplingWarning>)>, LoopError> {
    let mut qbc = cfg.qbc.clone();
    if let Some(left) = label_cap {
        qbc.n_kl = qbc.n_kl.min(left);
        qbc.n_rand = qbc.n_rand.min(left - qbc.n_kl);
    }
    let k = labeled.stage() + 1;
    let seed = cfg.seed ^ (k as u64).wrapping_mul(0x2545_f491_4f6c_dd1d);
    let examples = labeled_examples(labeled, corpus)?;
    let stack = fit_stack(&examples, &cfg.specs, &cfg.train.with_seed(seed), &cfg.ensemble, STACK_FOLDS)?;
    let sel = qbc_select(pool, corpus, &stack.committee, &stack.scorer(), &qbc, seed)?;
    if sel.entries.is_empty() {
        return Ok(None);
    }
    Ok(Some((Batch::new(pool.lang.clone(), k, sel.entries), sel.warnings)))
}

fn next_batch(state: &mut LoopState, corpus: &Corpus, cfg: &ActiveLoopConfig) -> Result<Option<PendingBatch>, LoopError> {
    let cap = cfg.budget.max_labels.map(|max| max.saturating_sub(state.labels_used()));
    let labeled_before = state.labeled.len();
    Ok(select_batch(&mut state.pool, &state.labeled, corpus, cfg, cap)?.map(|(batch, warnings)| PendingBatch {
        batch,
        received: Vec::new(),
        warnings,
        labeled_before,
    }))
}

/// Runs query-by-committee rounds until the pool, the budget or the
/// annotator runs out. With a checkpoint path the state is saved after
/// every selection and every batch of received labels, and a pending
/// batch in `state` is finished before anything new is selected.
pub fn run_active_loop<A: Annotator + ?Sized>(
    state: &mut LoopState,
    corpus: &Corpus,
    annotator: &mut A,
    cfg: &ActiveLoopConfig,
    checkpoint: Option<&Path>,
) -> Result<LoopOutcome, LoopError> {
    let mut completed = 0;
    loop {
        if state.pending.is_none() {
            if state.pool.is_empty() {
                return Ok(LoopOutcome { halt: HaltReason::PoolExhausted, completed });
            }
            if cfg.budget.max_batches.is_some_and(|m| state.batches_started >= m) {
                return Ok(LoopOutcome { halt: HaltReason::BatchBudget, completed });
            }
            if cfg.budget.max_labels.is_some_and(|m| state.labels_used() >= m) {
                return Ok(LoopOutcome { halt: HaltReason::LabelBudget, completed });
            }
            match next_batch(state, corpus, cfg)? {
                Some(p) => {
                    tracing::info!(batch = %p.batch.id, size = p.batch.len(), "selected batch");
                    state.pending = Some(p);
                    state.batches_started += 1;
                    persist(state, checkpoint)?;
                }
                None => return Ok(LoopOutcome { halt: HaltReason::NothingSelected, completed }),
            }
        }

        let pending = state.pending.as_mut().expect("set above");
        let remaining = pending.remaining();
        let (records, closed) = match annotator.annotate(&pending.batch, &remaining) {
            Ok(r) => (r, false),
            Err(AnnotatorError::Closed { partial }) => (partial, true),
            Err(e) => return Err(e.into()),
        };
        if records.is_empty() && !closed {
            return Err(AnnotatorError::Failed("returned no labels".into()).into());
        }
        let allowed: BTreeSet<&str> = remaining.into_iter().collect();
        let mut fresh = BTreeSet::new();
        for r in &records {
            if !allowed.contains(r.tweet_id.as_str()) || !fresh.insert(r.tweet_id.as_str()) {
                return Err(LoopError::Unexpected(r.tweet_id.clone()));
            }
        }
        pending.received.extend(records);
        let done = pending.received.len() == pending.batch.len();
        if done {
            let p = state.pending.take().expect("pending");
            state.labeled.append_batch(&p.batch, p.received.clone(), corpus)?;
            state.log.push(IterationLog {
                batch_id: p.batch.id.clone(),
                k: p.batch.k,
                labeled_before: p.labeled_before,
                selected: p.batch.len(),
                by_strategy: p.batch.count_by_strategy(),
                positives: p.received.iter().filter(|r| r.value == Some(true)).count(),
                warnings: p.warnings,
            });
            completed += 1;
        }
        persist(state, checkpoint)?;
        if closed {
            return Ok(LoopOutcome { halt: HaltReason::AnnotatorClosed, completed });
        }
    }
}
