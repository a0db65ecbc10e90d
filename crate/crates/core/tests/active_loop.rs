use std::collections::BTreeSet;

use annopipe::classify::{MemberSpec, TrainConfig};
use annopipe::corpus::synth::synth_corpus;
use annopipe::corpus::{check_disjoint, Batch, BatchEntry, Corpus, LabeledPool, Lang, StrategyTag, UnlabeledPool};
use annopipe::ensemble::EnsembleConfig;
use annopipe::oracle::OracleAnnotator;
use annopipe::preprocess::Normalizer;
use annopipe::sampling::*;

struct Setup {
    corpus: Corpus,
    state: LoopState,
    truth: Vec<(String, bool)>,
}

/// A synthetic corpus whose first `initial` tweets are already labeled
/// (with at least a few positives among them) and the rest form the pool.
fn setup(n: usize, initial: usize, seed: u64) -> Setup {
    let synth = synth_corpus(seed, n, 0.05, Lang::En).unwrap();
    let truth = synth.truth_rows();
    let corpus = Corpus::new(synth.tweets.clone(), &Normalizer::default()).unwrap();
    let mut first: Vec<(String, bool)> = truth.iter().filter(|(_, y)| *y).take(10).cloned().collect();
    first.extend(truth.iter().filter(|(_, y)| !*y).take(initial - first.len()).cloned());
    let entries = first.iter().map(|(id, _)| BatchEntry::new(id.clone(), StrategyTag::Random)).collect();
    let batch = Batch::new(Lang::En, 0, entries);
    let mut oracle = OracleAnnotator::from_rows("seed", truth.clone());
    let records = first.iter().map(|(id, _)| oracle.label(id).unwrap()).collect();
    let mut labeled = LabeledPool::new(Lang::En);
    labeled.append_batch(&batch, records, &corpus).unwrap();
    let taken: BTreeSet<&str> = first.iter().map(|(id, _)| id.as_str()).collect();
    let pool = UnlabeledPool::new(Lang::En, truth.iter().map(|(id, _)| id.clone()).filter(|id| !taken.contains(id.as_str())));
    Setup { corpus, state: LoopState::new(pool, labeled), truth }
}

fn small_config(n_kl: usize, n_rand: usize) -> ActiveLoopConfig {
    let specs = MemberSpec::defaults().into_iter().map(|s| s.with_dim(1 << 12)).collect();
    let train = TrainConfig { epochs: 2, ..TrainConfig::sparse() };
    let ensemble = EnsembleConfig { train: TrainConfig { epochs: 5, ..EnsembleConfig::default().train }, ..EnsembleConfig::default() };
    ActiveLoopConfig {
        specs,
        train,
        ensemble,
        qbc: QbcParams { n_kl, n_rand, ..QbcParams::default() },
        budget: AnnotationBudget::default(),
        seed: 9,
    }
}

fn labeled_set(state: &LoopState) -> Vec<(String, bool)> {
    state.labeled.examples().map(|(id, y)| (id.to_string(), y)).collect()
}

#[test]
fn stops_after_batch_budget() {
    let mut s = setup(1500, 200, 1);
    let mut cfg = small_config(40, 10);
    cfg.budget.max_batches = Some(2);
    let mut ann = OracleAnnotator::from_rows("a", s.truth.clone());
    let out = run_active_loop(&mut s.state, &s.corpus, &mut ann, &cfg, None).unwrap();
    assert_eq!(out.halt, HaltReason::BatchBudget);
    assert_eq!(out.completed, 2);
    assert_eq!(s.state.log.len(), 2);
    let added: usize = s.state.log.iter().map(|l| l.selected).sum();
    assert_eq!(s.state.labeled.len(), 200 + added);
    assert_eq!(s.state.labeled.stage(), 3);
    assert!(s.state.log.iter().all(|l| l.selected >= 10 && l.selected <= 50));
}

#[test]
fn label_budget_caps_the_last_batch() {
    let mut s = setup(1500, 200, 2);
    let mut cfg = small_config(40, 10);
    // An open gate makes every batch full, so the sizes are exact.
    cfg.qbc.gate_threshold = 0.0;
    cfg.budget.max_labels = Some(70);
    let mut ann = OracleAnnotator::from_rows("a", s.truth.clone());
    let out = run_active_loop(&mut s.state, &s.corpus, &mut ann, &cfg, None).unwrap();
    assert_eq!(out.halt, HaltReason::LabelBudget);
    let sizes: Vec<usize> = s.state.log.iter().map(|l| l.selected).collect();
    assert_eq!(sizes, vec![50, 20]);
}

#[test]
fn short_pool_gives_short_final_batch() {
    let mut s = setup(10_900, 400, 3);
    assert_eq!(s.state.pool.len(), 10_500);
    let mut cfg = small_config(8000, 2000);
    cfg.qbc.gate_threshold = 0.0;
    let mut ann = OracleAnnotator::from_rows("a", s.truth.clone());
    let out = run_active_loop(&mut s.state, &s.corpus, &mut ann, &cfg, None).unwrap();
    assert_eq!(out.halt, HaltReason::PoolExhausted);
    let sizes: Vec<usize> = s.state.log.iter().map(|l| l.selected).collect();
    assert_eq!(sizes, vec![10_000, 500]);
    assert!(s.state.log[1].warnings.iter().any(|w| matches!(w, SamplingWarning::PoolExhausted { requested: 10_000, available: 500 })));
    assert!(s.state.pool.is_empty());
}

#[test]
fn closed_annotator_resumes_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("loop.json");
    let mut cfg = small_config(40, 10);
    cfg.budget.max_batches = Some(3);

    let mut reference = setup(1500, 200, 4);
    let mut ann = OracleAnnotator::from_rows("a", reference.truth.clone());
    run_active_loop(&mut reference.state, &reference.corpus, &mut ann, &cfg, None).unwrap();

    let mut s = setup(1500, 200, 4);
    let first = reference.state.log[0].selected;
    let half = reference.state.log[1].selected / 2;
    let mut leaving = OracleAnnotator::from_rows("a", s.truth.clone()).closing_after(first + half);
    let out = run_active_loop(&mut s.state, &s.corpus, &mut leaving, &cfg, Some(&ckpt)).unwrap();
    assert_eq!(out.halt, HaltReason::AnnotatorClosed);
    assert_eq!(out.completed, 1);

    let mut resumed = LoopState::load(&ckpt).unwrap();
    assert_eq!(resumed, s.state);
    let pending = resumed.pending.as_ref().unwrap();
    assert_eq!(pending.received.len(), half);
    let mut back = OracleAnnotator::from_rows("a", s.truth.clone());
    let out = run_active_loop(&mut resumed, &s.corpus, &mut back, &cfg, Some(&ckpt)).unwrap();
    assert_eq!(out.halt, HaltReason::BatchBudget);
    assert_eq!(out.completed, 2);
    assert_eq!(labeled_set(&resumed), labeled_set(&reference.state));
    assert_eq!(resumed.pool, reference.state.pool);
}

#[test]
fn no_tweet_is_annotated_twice() {
    let mut s = setup(2000, 200, 5);
    let mut cfg = small_config(60, 20);
    cfg.budget.max_batches = Some(4);
    let mut ann = OracleAnnotator::from_rows("a", s.truth.clone());
    run_active_loop(&mut s.state, &s.corpus, &mut ann, &cfg, None).unwrap();
    check_disjoint(&s.state.pool, &s.state.labeled).unwrap();
    let added: usize = s.state.log.iter().map(|l| l.selected).sum();
    assert_eq!(s.state.labeled.len(), 200 + added);
    assert_eq!(s.state.pool.len() + s.state.labeled.len(), 2000);
    let ids: BTreeSet<&str> = s.state.labeled.records().map(|r| r.tweet_id.as_str()).collect();
    assert_eq!(ids.len(), s.state.labeled.len());
}

#[test]
fn loop_is_deterministic() {
    let mut cfg = small_config(30, 10);
    cfg.budget.max_batches = Some(2);
    let run = || {
        let mut s = setup(1200, 150, 6);
        let mut ann = OracleAnnotator::from_rows("a", s.truth.clone());
        run_active_loop(&mut s.state, &s.corpus, &mut ann, &cfg, None).unwrap();
        serde_json::to_string(&s.state).unwrap()
    };
    assert_eq!(run(), run());
}
