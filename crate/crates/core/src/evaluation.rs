//! Precision, recall and F1 for the binary hate / non-hate task, and the
//! batch-addition ablation experiment.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::classify::{examples_for, ClassifyError, FeatureView, LogisticModel, MemberSpec, Scorer, TrainConfig};
use crate::corpus::{Corpus, CorpusError, Lang, UnlabeledPool};
use crate::ensemble::{fit_stack, EnsembleConfig, STACK_FOLDS};
use crate::sampling::{draw_model, draw_random, qbc_select, QbcParams, SamplingError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("corpus too small: need {needed} labeled tweets, have {have}")]
    InsufficientCorpus { needed: usize, have: usize },
    #[error("invalid ablation setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Counts with hate as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(predictions: &[bool], labels: &[bool]) -> Result<Self, EvalError> {
        if predictions.len() != labels.len() {
            return Err(EvalError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
        }
        if predictions.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut c = Self::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts seen from the non-hate class.
    pub fn flipped(&self) -> Self {
        Self { tp: self.tn, fp: self.fn_, fn_: self.fp, tn: self.tp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricClass {
    Hate,
    NonHate,
    Micro,
}

/// A metric whose denominator was zero and was therefore reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroDivision {
    Precision(MetricClass),
    Recall(MetricClass),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub counts: ConfusionCounts,
    pub hate: Prf,
    pub non_hate: Prf,
    pub macro_avg: Prf,
    pub micro_avg: Prf,
    pub accuracy: f64,
    pub zero_division: Vec<ZeroDivision>,
}

impl MetricReport {
    pub fn h_f1(&self) -> f64 {
        self.hate.f1
    }

    pub fn macro_f1(&self) -> f64 {
        self.macro_avg.f1
    }
}

fn ratio(num: u64, den: u64, flag: ZeroDivision, flags: &mut Vec<ZeroDivision>) -> f64 {
    if den == 0 {
        flags.push(flag);
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p == r {
        p
    } else if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn prf(tp: u64, fp: u64, fn_: u64, class: MetricClass, flags: &mut Vec<ZeroDivision>) -> Prf {
    let precision = ratio(tp, tp + fp, ZeroDivision::Precision(class), flags);
    let recall = ratio(tp, tp + fn_, ZeroDivision::Recall(class), flags);
    Prf { precision, recall, f1: harmonic(precision, recall) }
}

pub fn metrics_from_counts(counts: ConfusionCounts) -> Result<MetricReport, EvalError> {
    if counts.total() == 0 {
        return Err(EvalError::Empty);
    }
    let mut flags = Vec::new();
    let c = counts;
    let hate = prf(c.tp, c.fp, c.fn_, MetricClass::Hate, &mut flags);
    let nc = c.flipped();
    let non_hate = prf(nc.tp, nc.fp, nc.fn_, MetricClass::NonHate, &mut flags);
    let macro_avg = Prf {
        precision: (hate.precision + non_hate.precision) / 2.0,
        recall: (hate.recall + non_hate.recall) / 2.0,
        f1: (hate.f1 + non_hate.f1) / 2.0,
    };
    // Pooled over both classes every error is one fp and one fn.
    let pooled_tp = c.tp + nc.tp;
    let pooled_err = c.fp + nc.fp;
    let micro_avg = prf(pooled_tp, pooled_err, pooled_err, MetricClass::Micro, &mut flags);
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    Ok(MetricReport { counts, hate, non_hate, macro_avg, micro_avg, accuracy, zero_division: flags })
}

pub fn compute_metrics(predictions: &[bool], labels: &[bool]) -> Result<MetricReport, EvalError> {
    metrics_from_counts(ConfusionCounts::from_predictions(predictions, labels)?)
}

/// Two-sided paired t-test on `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = d.len() - 1;
    if var == 0.0 {
        let p = if mean == 0.0 { 1.0 } else { 0.0 };
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Some(PairedTest { mean_diff: mean, t, df, p_value: p });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).ok()?;
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Some(PairedTest { mean_diff: mean, t, df, p_value })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// How the extra tweets are chosen on top of the base training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Addition {
    None,
    Random,
    ProbRange,
    Active,
}

impl Addition {
    pub const ALL: [Addition; 4] = [Addition::None, Addition::Random, Addition::ProbRange, Addition::Active];

    pub fn as_str(&self) -> &'static str {
        match self {
            Addition::None => "none",
            Addition::Random => "random",
            Addition::ProbRange => "prob_range",
            Addition::Active => "active",
        }
    }
}

impl std::str::FromStr for Addition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Addition::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown addition `{s}`"))
    }
}

/// Smaller hashing space for the many models an ablation trains.
pub const ABLATION_DIM: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub base_train: usize,
    pub add_n: usize,
    pub test: usize,
    pub repeats: usize,
    pub seed: u64,
    pub additions: Vec<Addition>,
    /// Probability window for the prob-range addition.
    pub prob_range: (f64, f64),
    /// How the active addition splits `add_n` between the disagreement
    /// ranking and random draws.
    pub active_kl: usize,
    pub gate_threshold: f64,
    pub reference: TrainConfig,
    /// Hashing dimension of the reference classifier.
    pub dim: u32,
    pub specs: Vec<MemberSpec>,
    pub ensemble: EnsembleConfig,
    /// Parallel repeats. Results do not depend on this.
    pub parallel: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            base_train: 8000,
            add_n: 2000,
            test: 2000,
            repeats: 20,
            seed: 0,
            additions: Addition::ALL.to_vec(),
            prob_range: (0.2, 1.0),
            active_kl: 1600,
            gate_threshold: 0.2,
            reference: TrainConfig::sparse(),
            dim: ABLATION_DIM,
            specs: MemberSpec::defaults().into_iter().map(|s| s.with_dim(ABLATION_DIM)).collect(),
            ensemble: EnsembleConfig::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: Addition,
    pub repeat: usize,
    pub macro_f1: f64,
    pub h_f1: f64,
    /// Positives among the added tweets.
    pub added_positives: usize,
    pub added: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Addition,
    pub repeats: usize,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    pub mean_h_f1: f64,
    pub mean_added_positives: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Addition,
    pub b: Addition,
    pub test: PairedTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<StrategySummary>,
    pub comparisons: Vec<Comparison>,
}

impl AblationTable {
    fn build(rows: Vec<AblationRow>, additions: &[Addition]) -> Self {
        let scores = |s: Addition| -> Vec<f64> { rows.iter().filter(|r| r.strategy == s).map(|r| r.macro_f1).collect() };
        let summary = additions
            .iter()
            .map(|&s| {
                let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.strategy == s).collect();
                let f1s: Vec<f64> = mine.iter().map(|r| r.macro_f1).collect();
                let (mean, std) = mean_std(&f1s);
                let n = mine.len() as f64;
                StrategySummary {
                    strategy: s,
                    repeats: mine.len(),
                    mean_macro_f1: mean,
                    std_macro_f1: std,
                    mean_h_f1: mine.iter().map(|r| r.h_f1).sum::<f64>() / n,
                    mean_added_positives: mine.iter().map(|r| r.added_positives as f64).sum::<f64>() / n,
                }
            })
            .collect();
        let mut comparisons = Vec::new();
        for (i, &a) in additions.iter().enumerate() {
            for &b in &additions[i + 1..] {
                if let Some(test) = paired_t_test(&scores(b), &scores(a)) {
                    comparisons.push(Comparison { a: b, b: a, test });
                }
            }
        }
        Self { rows, summary, comparisons }
    }

    pub fn summary_for(&self, s: Addition) -> Option<&StrategySummary> {
        self.summary.iter().find(|x| x.strategy == s)
    }

    /// Paired test of `a - b`, if both strategies ran.
    pub fn compare(&self, a: Addition, b: Addition) -> Option<PairedTest> {
        let get = |s: Addition| -> Vec<f64> { self.rows.iter().filter(|r| r.strategy == s).map(|r| r.macro_f1).collect() };
        paired_t_test(&get(a), &get(b))
    }

    pub fn results_csv(&self) -> String {
        let mut out = String::from("strategy,repeat,macro_f1,h_f1\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", r.strategy.as_str(), r.repeat, r.macro_f1, r.h_f1));
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::from("strategy,repeats,mean_macro_f1,std_macro_f1,mean_h_f1,mean_added_positives\n");
        for s in &self.summary {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.2}\n",
                s.strategy.as_str(),
                s.repeats,
                s.mean_macro_f1,
                s.std_macro_f1,
                s.mean_h_f1,
                s.mean_added_positives
            ));
        }
        out.push_str("\ncomparison,mean_diff,t,df,p_value\n");
        for c in &self.comparisons {
            out.push_str(&format!(
                "{}-{},{:.6},{:.4},{},{:.3e}\n",
                c.a.as_str(),
                c.b.as_str(),
                c.test.mean_diff,
                c.test.t,
                c.test.df,
                c.test.p_value
            ));
        }
        out
    }

    /// Writes `results.csv` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.csv"), self.results_csv())?;
        std::fs::write(dir.join("summary.csv"), self.summary_text())?;
        Ok(())
    }
}

/// One repeat: a stratified test set, a random base training set, the rest
/// as the pool to add from.
struct RepeatData {
    test: Vec<(String, bool)>,
    base: Vec<(String, bool)>,
    pool: UnlabeledPool,
}

fn repeat_data(rows: &[(String, bool)], cfg: &AblationConfig, lang: &Lang, seed: u64) -> RepeatData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg): (Vec<&(String, bool)>, Vec<&(String, bool)>) = rows.iter().partition(|r| r.1);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let test_pos = ((cfg.test as f64 * pos.len() as f64 / rows.len() as f64).round() as usize).clamp(1, pos.len() - 1);
    let test_neg = cfg.test - test_pos;
    let mut test: Vec<(String, bool)> = pos[..test_pos].iter().chain(&neg[..test_neg]).map(|r| (*r).clone()).collect();
    test.sort();
    let mut rest: Vec<&(String, bool)> = pos[test_pos..].iter().chain(&neg[test_neg..]).copied().collect();
    rest.sort();
    rest.shuffle(&mut rng);
    let base: Vec<(String, bool)> = rest[..cfg.base_train].iter().map(|r| (*r).clone()).collect();
    let pool = UnlabeledPool::new(lang.clone(), rest[cfg.base_train..].iter().map(|r| r.0.clone()));
    RepeatData { test, base, pool }
}

fn evaluate_reference(
    train: &[(String, bool)],
    test: &[(String, bool)],
    corpus: &Corpus,
    cfg: &TrainConfig,
    dim: u32,
) -> Result<MetricReport, EvalError> {
    let ex = examples_for(train, corpus)?;
    let mut model = LogisticModel::new("reference", FeatureView::WORD_1_4, dim, 0);
    model.fit(&ex, cfg)?;
    let mut preds = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for (id, y) in test {
        preds.push(model.predict_proba(corpus.require_sequence(id)?)? >= 0.5);
        labels.push(*y);
    }
    compute_metrics(&preds, &labels)
}

fn run_repeat(
    corpus: &Corpus,
    truth: &std::collections::HashMap<&str, bool>,
    rows: &[(String, bool)],
    cfg: &AblationConfig,
    repeat: usize,
) -> Result<Vec<AblationRow>, EvalError> {
    let seed = cfg.seed.wrapping_add((repeat as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let data = repeat_data(rows, cfg, &corpus.tweets()[0].lang, seed);
    let label_of = |id: &String| (id.clone(), truth[id.as_str()]);
    let base_ex = examples_for(&data.base, corpus)?;
    // The active strategy needs the stack; the other strategies share the
    // reference model's pool scores.
    let mut out = Vec::new();
    for &strategy in &cfg.additions {
        let add_seed = seed ^ 0xadd;
        let added: Vec<String> = match strategy {
            Addition::None => Vec::new(),
            Addition::Random => draw_random(&data.pool, cfg.add_n, add_seed, &Default::default()),
            Addition::ProbRange => {
                let mut scorer = LogisticModel::new("range-scorer", FeatureView::WORD_1_4, cfg.dim, 0);
                scorer.fit(&base_ex, &cfg.reference.with_seed(seed))?;
                let sel = draw_model(&data.pool, corpus, &scorer, cfg.prob_range, cfg.add_n, add_seed)?;
                let mut ids = sel.ids();
                let taken: std::collections::BTreeSet<String> = ids.iter().cloned().collect();
                ids.extend(draw_random(&data.pool, cfg.add_n - ids.len(), add_seed ^ 1, &taken));
                ids
            }
            Addition::Active => {
                let stack = fit_stack(&base_ex, &cfg.specs, &cfg.reference.with_seed(seed), &cfg.ensemble, STACK_FOLDS)?;
                let params = QbcParams {
                    n_kl: cfg.active_kl.min(cfg.add_n),
                    n_rand: cfg.add_n - cfg.active_kl.min(cfg.add_n),
                    gate_threshold: cfg.gate_threshold,
                };
                let mut pool = data.pool.clone();
                let sel = qbc_select(&mut pool, corpus, &stack.committee, &stack.scorer(), &params, add_seed)?;
                sel.ids()
            }
        };
        let added_rows: Vec<(String, bool)> = added.iter().map(label_of).collect();
        let mut train = data.base.clone();
        train.extend(added_rows.iter().cloned());
        let report = evaluate_reference(&train, &data.test, corpus, &cfg.reference.with_seed(seed ^ 0x7e57), cfg.dim)?;
        out.push(AblationRow {
            strategy,
            repeat,
            macro_f1: report.macro_f1(),
            h_f1: report.h_f1(),
            added_positives: added_rows.iter().filter(|r| r.1).count(),
            added: added_rows.len(),
        });
    }
    Ok(out)
}

/// Trains the word n-gram logistic reference classifier on a random base
/// set plus `add_n` tweets chosen by each addition strategy, and scores it
/// on a stratified held-out set. Every strategy in a repeat shares the same
/// base and test sets.
pub fn ablation_run(corpus: &Corpus, truth_rows: &[(String, bool)], cfg: &AblationConfig) -> Result<AblationTable, EvalError> {
    if cfg.repeats == 0 || cfg.additions.is_empty() {
        return Err(EvalError::Invalid("need at least one repeat and one strategy".into()));
    }
    let needed = cfg.base_train + cfg.add_n + cfg.test;
    if truth_rows.len() < needed {
        return Err(EvalError::InsufficientCorpus { needed, have: truth_rows.len() });
    }
    let pos = truth_rows.iter().filter(|r| r.1).count();
    if pos < 2 || pos == truth_rows.len() {
        return Err(EvalError::Invalid("both classes need at least two tweets".into()));
    }
    let mut rows: Vec<(String, bool)> = truth_rows.to_vec();
    rows.sort();
    let truth: std::collections::HashMap<&str, bool> = rows.iter().map(|(id, y)| (id.as_str(), *y)).collect();
    let per_repeat: Vec<Vec<AblationRow>> = if cfg.parallel {
        (0..cfg.repeats).into_par_iter().map(|r| run_repeat(corpus, &truth, &rows, cfg, r)).collect::<Result<_, _>>()?
    } else {
        (0..cfg.repeats).map(|r| run_repeat(corpus, &truth, &rows, cfg, r)).collect::<Result<_, _>>()?
    };
    Ok(AblationTable::build(per_repeat.into_iter().flatten().collect(), &cfg.additions))
}
