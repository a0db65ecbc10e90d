//! Probabilistic text classifiers over hashed n-gram features and the
//! committee built from them.

mod committee;
mod features;
mod logistic;
mod perceptron;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, LabeledPool};
use crate::preprocess::TokenSequence;

pub use committee::{train_committee, Committee, Member, MemberKind, MemberSpec};
pub use features::{feature_hash, featurize, FeatureVector, FeatureView, DEFAULT_DIM};
pub use logistic::LogisticModel;
pub use perceptron::PerceptronModel;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("model `{0}` has not been trained")]
    Untrained(String),
    #[error("no training examples")]
    Empty,
    #[error("training data has a single class")]
    SingleClass,
    #[error("a committee needs at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} inputs, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("input {0} is outside [0, 1]")]
    InputRange(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that maps a normalized tweet to a hate-speech probability.
pub trait Scorer: Send + Sync {
    fn predict_proba(&self, seq: &TokenSequence) -> Result<f64, ClassifyError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn predict_proba(&self, seq: &TokenSequence) -> Result<f64, ClassifyError> {
        (**self).predict_proba(seq)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn predict_proba(&self, seq: &TokenSequence) -> Result<f64, ClassifyError> {
        (**self).predict_proba(seq)
    }
}

/// Always returns the same probability.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn predict_proba(&self, _seq: &TokenSequence) -> Result<f64, ClassifyError> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Optimizer {
    /// Adaptive moment estimation with dense moment updates.
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { lr: f64 },
}

impl Optimizer {
    pub const fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub const SPARSE_L2: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub l2: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, minibatch: 64, l2: 1e-3, optimizer: Optimizer::adam(0.02), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        if self.epochs == 0 {
            return Err(ClassifyError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.minibatch == 0 {
            return Err(ClassifyError::InvalidConfig("minibatch must be >= 1".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(ClassifyError::InvalidConfig("l2 must be >= 0".into()));
        }
        let lr = match self.optimizer {
            Optimizer::Adam { lr, .. } | Optimizer::Sgd { lr } => lr,
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(ClassifyError::InvalidConfig("learning rate must be > 0".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Defaults with the weaker penalty the hashed n-gram members need on
    /// rare-positive data; at `l2 = 1e-3` no score crosses 0.5.
    pub fn sparse() -> Self {
        Self { l2: SPARSE_L2, ..Self::default() }
    }
}

/// Per-epoch training loss (mean BCE plus penalty) recorded by `fit`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitReport {
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub seq: &'a TokenSequence,
    pub label: bool,
}

/// Looks up each labeled tweet's token sequence.
pub fn labeled_examples<'a>(labeled: &LabeledPool, corpus: &'a Corpus) -> Result<Vec<Example<'a>>, ClassifyError> {
    labeled
        .examples()
        .map(|(id, label)| Ok(Example { seq: corpus.require_sequence(id)?, label }))
        .collect()
}

pub fn examples_for<'a>(rows: &[(String, bool)], corpus: &'a Corpus) -> Result<Vec<Example<'a>>, ClassifyError> {
    rows.iter()
        .map(|(id, label)| Ok(Example { seq: corpus.require_sequence(id)?, label: *label }))
        .collect()
}

pub(crate) fn check_classes<T>(items: &[T], label: impl Fn(&T) -> bool) -> Result<(), ClassifyError> {
    if items.is_empty() {
        return Err(ClassifyError::Empty);
    }
    let pos = items.iter().filter(|x| label(x)).count();
    if pos == 0 || pos == items.len() {
        return Err(ClassifyError::SingleClass);
    }
    Ok(())
}

pub(crate) fn epoch_orders(n: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..epochs)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit, computed without forming `p`.
pub fn bce_from_logit(z: f64, y: bool) -> f64 {
    // log(1 + exp(-|z|)) + max(z, 0) - y*z
    let t = if y { 1.0 } else { 0.0 };
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}
