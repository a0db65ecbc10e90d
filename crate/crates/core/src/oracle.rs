//! Annotation from a ground-truth table, for simulations and tests.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{parse_label_csv, Batch, CorpusError, LabelRecord};
use crate::sampling::{Annotator, AnnotatorError};

/// Labels each tweet with its true value, optionally flipping a fraction
/// of them. Timestamps advance by `step` seconds per label.
#[derive(Debug, Clone)]
pub struct OracleAnnotator {
    pub annotator_id: String,
    truth: HashMap<String, bool>,
    error_rate: f64,
    rng: ChaCha8Rng,
    clock: i64,
    step: i64,
    /// Close after this many labels in total (simulates a departing annotator).
    close_after: Option<usize>,
    given: usize,
}

impl OracleAnnotator {
    pub fn new(annotator_id: impl Into<String>, truth: HashMap<String, bool>) -> Self {
        Self {
            annotator_id: annotator_id.into(),
            truth,
            error_rate: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
            clock: 1_538_352_000,
            step: 30,
            close_after: None,
            given: 0,
        }
    }

    pub fn from_rows(annotator_id: impl Into<String>, rows: impl IntoIterator<Item = (String, bool)>) -> Self {
        Self::new(annotator_id, rows.into_iter().collect())
    }

    /// Reads an `id,label` CSV.
    pub fn load(annotator_id: impl Into<String>, path: &Path) -> Result<Self, CorpusError> {
        let rows = parse_label_csv(&std::fs::read_to_string(path)?)?;
        Ok(Self::from_rows(annotator_id, rows))
    }

    pub fn with_errors(mut self, rate: f64, seed: u64) -> Self {
        self.error_rate = rate.clamp(0.0, 1.0);
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn with_clock(mut self, start: i64, step: i64) -> Self {
        self.clock = start;
        self.step = step;
        self
    }

    pub fn closing_after(mut self, labels: usize) -> Self {
        self.close_after = Some(labels);
        self
    }

    pub fn truth(&self, id: &str) -> Option<bool> {
        self.truth.get(id).copied()
    }

    pub fn label(&mut self, id: &str) -> Result<LabelRecord, AnnotatorError> {
        let truth = self.truth(id).ok_or_else(|| AnnotatorError::Failed(format!("no ground truth for `{id}`")))?;
        let flip = self.error_rate > 0.0 && self.rng.random_bool(self.error_rate);
        self.clock += self.step;
        self.given += 1;
        Ok(LabelRecord::new(id, self.annotator_id.clone(), truth ^ flip, self.clock))
    }
}

impl Annotator for OracleAnnotator {
    fn annotate(&mut self, _batch: &Batch, pending: &[&str]) -> Result<Vec<LabelRecord>, AnnotatorError> {
        let mut out = Vec::with_capacity(pending.len());
        for id in pending {
            if self.close_after.is_some_and(|c| self.given >= c) {
                return Err(AnnotatorError::Closed { partial: out });
            }
            out.push(self.label(id)?);
        }
        Ok(out)
    }
}
