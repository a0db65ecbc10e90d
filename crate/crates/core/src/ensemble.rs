//! Dense combiner over committee probabilities: `c` inputs, one hidden
//! rectifier layer of 20 units with dropout 0.2 during training, and a
//! sigmoid output.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    bce_from_logit, sigmoid, train_committee, ClassifyError, Committee, Example, Member, MemberSpec, Optimizer, Scorer,
    TrainConfig,
};
use crate::preprocess::TokenSequence;

pub const HIDDEN_UNITS: usize = 20;
pub const DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub train: TrainConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            hidden: HIDDEN_UNITS,
            dropout: DROPOUT,
            train: TrainConfig { optimizer: Optimizer::adam(0.01), ..TrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub inputs: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// Hidden weights, row `j` holds unit `j`'s `inputs` weights.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Gradient of the training objective with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl EnsembleModel {
    /// All-zero parameters; outputs exactly 0.5 for every input.
    pub fn zeros(inputs: usize) -> Self {
        Self::zeros_with(inputs, HIDDEN_UNITS, DROPOUT)
    }

    pub fn zeros_with(inputs: usize, hidden: usize, dropout: f64) -> Self {
        Self {
            inputs,
            hidden,
            dropout,
            w1: vec![0.0; inputs * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| self.b1[j] + self.w1[j * self.inputs..(j + 1) * self.inputs].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Output logit with an optional per-unit multiplier (dropout mask).
    fn logit_masked(&self, x: &[f64], mask: Option<&[f64]>) -> (Vec<f64>, f64) {
        let pre = self.hidden_pre(x);
        let mut z = self.b2;
        for j in 0..self.hidden {
            let m = mask.map_or(1.0, |m| m[j]);
            z += self.w2[j] * pre[j].max(0.0) * m;
        }
        (pre, z)
    }

    fn validate_inputs(&self, x: &[f64]) -> Result<(), ClassifyError> {
        if x.len() != self.inputs {
            return Err(ClassifyError::Arity { expected: self.inputs, got: x.len() });
        }
        if let Some(&bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ClassifyError::InputRange(bad));
        }
        Ok(())
    }

    /// Objective: mean BCE plus `l2 * (|W1|^2 + |w2|^2)`. `masks` holds one
    /// dropout multiplier vector per example when given.
    pub fn objective(&self, xs: &[Vec<f64>], ys: &[bool], l2: f64, masks: Option<&[Vec<f64>]>) -> f64 {
        let n = xs.len().max(1) as f64;
        let bce: f64 = xs
            .iter()
            .zip(ys)
            .enumerate()
            .map(|(k, (x, y))| bce_from_logit(self.logit_masked(x, masks.map(|m| m[k].as_slice())).1, *y))
            .sum::<f64>()
            / n;
        bce + l2 * (self.w1.iter().chain(&self.w2).map(|w| w * w).sum::<f64>())
    }

    pub fn gradient(&self, xs: &[Vec<f64>], ys: &[bool], l2: f64, masks: Option<&[Vec<f64>]>) -> EnsembleGrad {
        let n = xs.len().max(1) as f64;
        let mut g = EnsembleGrad {
            w1: self.w1.iter().map(|w| 2.0 * l2 * w).collect(),
            b1: vec![0.0; self.hidden],
            w2: self.w2.iter().map(|w| 2.0 * l2 * w).collect(),
            b2: 0.0,
        };
        for (k, (x, y)) in xs.iter().zip(ys).enumerate() {
            let mask = masks.map(|m| m[k].as_slice());
            let (pre, z) = self.logit_masked(x, mask);
            let d = (sigmoid(z) - if *y { 1.0 } else { 0.0 }) / n;
            g.b2 += d;
            for j in 0..self.hidden {
                let m = mask.map_or(1.0, |m| m[j]);
                let h = pre[j].max(0.0);
                g.w2[j] += d * h * m;
                if pre[j] > 0.0 {
                    let dh = d * self.w2[j] * m;
                    g.b1[j] += dh;
                    for (i, xi) in x.iter().enumerate() {
                        g.w1[j * self.inputs + i] += dh * xi;
                    }
                }
            }
        }
        g
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ClassifyError> {
        self.validate_inputs(x)?;
        Ok(sigmoid(self.logit_masked(x, None).1))
    }
}

/// Combined probability for one vector of member probabilities.
pub fn ensemble_proba(model: &EnsembleModel, member_probs: &[f64]) -> Result<f64, ClassifyError> {
    model.predict(member_probs)
}

/// Trains the combiner. `member_probs` should come from out-of-fold
/// predictions (see [`out_of_fold_probs`]).
pub fn train_ensemble(member_probs: &[Vec<f64>], labels: &[bool], cfg: &EnsembleConfig) -> Result<EnsembleModel, ClassifyError> {
    cfg.train.validate()?;
    if member_probs.len() != labels.len() {
        return Err(ClassifyError::Arity { expected: member_probs.len(), got: labels.len() });
    }
    crate::classify::check_classes(labels, |y| *y)?;
    let c = member_probs[0].len();
    if c < 2 {
        return Err(ClassifyError::TooFewMembers(c));
    }
    if !(0.0..1.0).contains(&cfg.dropout) || cfg.hidden == 0 {
        return Err(ClassifyError::InvalidConfig("hidden >= 1 and dropout in [0, 1) required".into()));
    }
    let probe = EnsembleModel::zeros_with(c, cfg.hidden, cfg.dropout);
    for x in member_probs {
        probe.validate_inputs(x)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0xe75e_b1e);
    let mut model = probe;
    let a1 = (6.0 / c as f64).sqrt();
    let a2 = (6.0 / (cfg.hidden as f64 + 1.0)).sqrt();
    model.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
    model.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
    let base = labels.iter().filter(|y| **y).count() as f64 / labels.len() as f64;
    model.b2 = (base / (1.0 - base)).ln();

    let (lr, beta1, beta2, eps) = match cfg.train.optimizer {
        Optimizer::Adam { lr, beta1, beta2, eps } => (lr, beta1, beta2, eps),
        Optimizer::Sgd { lr } => (lr, 0.0, 0.0, 0.0),
    };
    let adam = matches!(cfg.train.optimizer, Optimizer::Adam { .. });
    let n_params = model.w1.len() + model.b1.len() + model.w2.len() + 1;
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let keep = 1.0 - cfg.dropout;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut step = 0i32;

    for _ in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.train.minibatch) {
            step += 1;
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&k| member_probs[k].clone()).collect();
            let ys: Vec<bool> = chunk.iter().map(|&k| labels[k]).collect();
            let masks: Vec<Vec<f64>> = chunk
                .iter()
                .map(|_| (0..cfg.hidden).map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 }).collect())
                .collect();
            let g = model.gradient(&xs, &ys, cfg.train.l2, Some(&masks));
            let grads = g.w1.iter().chain(&g.b1).chain(&g.w2).chain(std::iter::once(&g.b2));
            let params = model
                .w1
                .iter_mut()
                .chain(model.b1.iter_mut())
                .chain(model.w2.iter_mut())
                .chain(std::iter::once(&mut model.b2));
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            for (k, (p, gk)) in params.zip(grads).enumerate() {
                if adam {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                    v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                    *p -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                } else {
                    *p -= lr * gk;
                }
            }
        }
    }
    Ok(model)
}

/// Member probabilities for every example, each predicted by a committee
/// that did not see it. Folds are stratified by label.
pub fn out_of_fold_probs(
    examples: &[Example<'_>],
    specs: &[MemberSpec],
    cfg: &TrainConfig,
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, ClassifyError> {
    if folds < 2 {
        return Err(ClassifyError::InvalidConfig("need at least 2 folds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; examples.len()];
    for want in [true, false] {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label == want).collect();
        idx.shuffle(&mut rng);
        for (r, i) in idx.into_iter().enumerate() {
            fold_of[i] = r % folds;
        }
    }
    let per_fold: Vec<Vec<(usize, Vec<f64>)>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<Example> = examples.iter().zip(&fold_of).filter(|(_, &k)| k != f).map(|(e, _)| *e).collect();
            let (committee, _) = train_committee(&train, specs, &cfg.with_seed(cfg.seed.wrapping_add(f as u64)))?;
            examples
                .iter()
                .enumerate()
                .filter(|(i, _)| fold_of[*i] == f)
                .map(|(i, e)| Ok((i, committee.member_probs(e.seq)?)))
                .collect::<Result<Vec<_>, ClassifyError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut out = vec![Vec::new(); examples.len()];
    for (i, probs) in per_fold.into_iter().flatten() {
        out[i] = probs;
    }
    Ok(out)
}

/// A committee, its trained members and the combiner on top.
pub struct Stack {
    pub committee: Committee,
    pub members: Vec<Member>,
    pub ensemble: EnsembleModel,
}

impl Stack {
    pub fn scorer(&self) -> EnsembleScorer<'_> {
        EnsembleScorer { committee: &self.committee, model: &self.ensemble }
    }
}

/// Number of folds used for the combiner's training inputs.
pub const STACK_FOLDS: usize = 5;

/// Trains members on all examples and the combiner on out-of-fold member
/// probabilities. The fold count shrinks to the minority class size when
/// that is smaller.
pub fn fit_stack(
    examples: &[Example<'_>],
    specs: &[MemberSpec],
    train: &TrainConfig,
    ensemble: &EnsembleConfig,
    folds: usize,
) -> Result<Stack, ClassifyError> {
    crate::classify::check_classes(examples, |e| e.label)?;
    let pos = examples.iter().filter(|e| e.label).count();
    let folds = folds.min(pos).min(examples.len() - pos);
    let (committee, members) = train_committee(examples, specs, train)?;
    let oof = if folds >= 2 {
        out_of_fold_probs(examples, specs, train, folds, train.seed ^ 0x0f01d)?
    } else {
        // A lone example of one class cannot be held out; fall back to
        // in-sample member probabilities.
        examples.iter().map(|e| committee.member_probs(e.seq)).collect::<Result<_, _>>()?
    };
    let labels: Vec<bool> = examples.iter().map(|e| e.label).collect();
    let ens = train_ensemble(&oof, &labels, &EnsembleConfig { train: ensemble.train.with_seed(train.seed ^ 0xe5e), ..ensemble.clone() })?;
    Ok(Stack { committee, members, ensemble: ens })
}

/// Committee followed by the combiner, usable wherever a [`Scorer`] is.
pub struct EnsembleScorer<'a> {
    pub committee: &'a Committee,
    pub model: &'a EnsembleModel,
}

impl Scorer for EnsembleScorer<'_> {
    fn predict_proba(&self, seq: &TokenSequence) -> Result<f64, ClassifyError> {
        let probs = self.committee.member_probs(seq)?;
        self.model.predict(&probs)
    }
}
