use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Instant;

use annopipe::classify::{ClassifyError, Committee, ConstantScorer, Scorer};
use annopipe::corpus::{Corpus, Lang, StrategyTag, Tweet, UnlabeledPool};
use annopipe::preprocess::{Normalizer, TokenSequence};
use annopipe::sampling::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Binary KL written out term by term, with `0 ln 0 = 0` and no clamping.
fn kl_oracle(ps: &[f64]) -> f64 {
    let c = ps.len() as f64;
    let q = ps.iter().sum::<f64>() / c;
    let term = |p: f64, q: f64| if p == 0.0 { 0.0 } else { p * (p / q).ln() };
    ps.iter().map(|&p| term(p, q) + term(1.0 - p, 1.0 - q)).sum::<f64>() / c
}

#[test]
fn kl_worked_example_and_oracle() {
    let start = Instant::now();
    assert!((kl_oracle(&[0.9, 0.1]) - 0.36806).abs() < 1e-5);
    assert!((avg_kl(&[0.9, 0.1]) - 0.36806).abs() < 1e-5);
    assert_eq!(avg_kl(&[0.7, 0.7, 0.7]), 0.0);
    assert_eq!(avg_kl(&[1.0, 1.0]), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let c = rng.random_range(2..8);
        let ps: Vec<f64> = (0..c).map(|_| rng.random_range(1e-6..1.0 - 1e-6)).collect();
        let (a, b) = (avg_kl(&ps), kl_oracle(&ps));
        assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{ps:?}: {a} vs {b}");
        let p = rng.random_range(0.0..=1.0);
        assert!(avg_kl(&vec![p; c]) <= 1e-12);
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

proptest! {
    #[test]
    fn kl_properties(ps in prop::collection::vec(0.0f64..=1.0, 2..10), seed in any::<u64>()) {
        let k = avg_kl(&ps);
        prop_assert!(k >= 0.0 && k.is_finite());
        let mut shuffled = ps.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((avg_kl(&shuffled) - k).abs() <= 1e-12);
        let all_equal = ps.iter().all(|p| *p == ps[0]);
        prop_assert_eq!(k <= 1e-12, all_equal || ps.iter().all(|p| (p - ps[0]).abs() < 1e-7));
        prop_assert_eq!(consensus(&ps), ps.iter().sum::<f64>() / ps.len() as f64);
    }
}

/// Looks probabilities up by tweet id.
struct Table(Arc<HashMap<String, f64>>);

impl Scorer for Table {
    fn predict_proba(&self, seq: &TokenSequence) -> Result<f64, ClassifyError> {
        Ok(self.0[&seq.original_id])
    }
}

fn corpus_of(ids: &[String]) -> Corpus {
    let tweets = ids
        .iter()
        .map(|id| Tweet { id: id.clone(), text: "placeholder text".into(), lang: Lang::En, account: "acc".into(), created_at: 0 })
        .collect();
    Corpus::new(tweets, &Normalizer::default()).unwrap()
}

/// Repeated argmax over the gated candidates, ties to the smaller id.
fn brute_force_top(ids: &[String], members: &[HashMap<String, f64>], gate: &HashMap<String, f64>, n: usize, thr: f64) -> Vec<String> {
    let mut left: Vec<(String, f64)> = ids
        .iter()
        .filter(|id| gate[*id] > thr)
        .map(|id| (id.clone(), avg_kl(&members.iter().map(|m| m[id]).collect::<Vec<_>>())))
        .collect();
    let mut out = Vec::new();
    while out.len() < n && !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (a, b) = (&left[i], &left[best]);
            if a.1 > b.1 || (a.1 == b.1 && a.0 < b.0) {
                best = i;
            }
        }
        out.push(left.swap_remove(best).0);
    }
    out
}

#[test]
fn qbc_matches_brute_force_on_200_pools() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // Coarse probability grid so equal-KL ties are common.
    let grid = |r: &mut ChaCha8Rng| f64::from(r.random_range(0..=20u8)) / 20.0;
    for round in 0..200 {
        let size = rng.random_range(1..=1000);
        let ids: Vec<String> = (0..size).map(|i| format!("t{:05}", rng.random_range(0..100_000) * 1000 + i)).collect();
        let c = rng.random_range(2..5);
        let members: Vec<HashMap<String, f64>> = (0..c).map(|_| ids.iter().map(|id| (id.clone(), grid(&mut rng))).collect()).collect();
        let gate: HashMap<String, f64> = ids.iter().map(|id| (id.clone(), grid(&mut rng))).collect();
        let params = QbcParams { n_kl: rng.random_range(0..=size), n_rand: rng.random_range(0..50), gate_threshold: 0.2 };

        let corpus = corpus_of(&ids);
        let mut pool = UnlabeledPool::from_corpus(Lang::En, &corpus);
        let committee = Committee::from_scorers(
            members.iter().enumerate().map(|(i, m)| (format!("m{i}"), Box::new(Table(Arc::new(m.clone()))) as Box<dyn Scorer>)).collect(),
        )
        .unwrap();
        let sel = qbc_select(&mut pool, &corpus, &committee, &Table(Arc::new(gate.clone())), &params, round).unwrap();

        let kl_part: Vec<String> =
            sel.entries.iter().filter(|e| e.strategy == StrategyTag::Qbc).map(|e| e.tweet_id.clone()).collect();
        let expected = brute_force_top(&ids, &members, &gate, params.n_kl, 0.2);
        assert_eq!(kl_part, expected, "round {round}");

        let random: Vec<&String> = sel.entries.iter().filter(|e| e.strategy == StrategyTag::Random).map(|e| &e.tweet_id).collect();
        assert_eq!(random.len(), params.n_rand.min(size - expected.len()));
        let all: BTreeSet<&String> = sel.entries.iter().map(|e| &e.tweet_id).collect();
        assert_eq!(all.len(), sel.entries.len());
        assert_eq!(pool.len(), size - sel.entries.len());
        assert!(all.iter().all(|id| !pool.contains(id)));
        let qualified = ids.iter().filter(|id| gate[*id] > 0.2).count();
        if qualified == 0 && params.n_kl > 0 {
            assert!(sel.warnings.contains(&SamplingWarning::NoneQualified { strategy: StrategyTag::Qbc }));
        }
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn equal_kl_at_the_cut_prefers_lower_id() {
    let ids: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
    let corpus = corpus_of(&ids);
    let mut pool = UnlabeledPool::from_corpus(Lang::En, &corpus);
    let m1: HashMap<String, f64> = [("a", 0.9), ("b", 0.9), ("c", 0.5)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let m2: HashMap<String, f64> = [("a", 0.1), ("b", 0.1), ("c", 0.5)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let committee = Committee::from_scorers(vec![
        ("m1".into(), Box::new(Table(Arc::new(m1))) as Box<dyn Scorer>),
        ("m2".into(), Box::new(Table(Arc::new(m2))) as Box<dyn Scorer>),
    ])
    .unwrap();
    let params = QbcParams { n_kl: 1, n_rand: 0, gate_threshold: 0.2 };
    let sel = qbc_select(&mut pool, &corpus, &committee, &ConstantScorer(0.9), &params, 0).unwrap();
    assert_eq!(sel.ids(), vec!["a"]);

    // A closed gate leaves only the random part.
    let mut pool = UnlabeledPool::from_corpus(Lang::En, &corpus);
    let params = QbcParams { n_kl: 2, n_rand: 2, gate_threshold: 0.2 };
    let sel = qbc_select(&mut pool, &corpus, &committee, &ConstantScorer(0.2), &params, 0).unwrap();
    assert_eq!(sel.entries.len(), 2);
    assert!(sel.entries.iter().all(|e| e.strategy == StrategyTag::Random));
    assert_eq!(sel.warnings, vec![SamplingWarning::NoneQualified { strategy: StrategyTag::Qbc }]);
}

#[test]
fn uncertainty_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let ids: Vec<String> = (0..1000).map(|i| format!("u{i:04}")).collect();
        let probs: HashMap<String, f64> = ids.iter().map(|id| (id.clone(), f64::from(rng.random_range(0..=100u8)) / 100.0)).collect();
        let corpus = corpus_of(&ids);
        let mut pool = UnlabeledPool::from_corpus(Lang::En, &corpus);
        let sel = uncertainty_select(&mut pool, &corpus, &Table(Arc::new(probs.clone())), 100).unwrap();
        let chosen: BTreeSet<String> = sel.ids().into_iter().collect();
        let dist = |id: &String| (probs[id] - 0.5).abs();
        let max_in = chosen.iter().map(dist).fold(0.0, f64::max);
        let min_out = ids.iter().filter(|id| !chosen.contains(*id)).map(dist).fold(f64::INFINITY, f64::min);
        assert!(max_in <= min_out);
        let mut oracle = ids.clone();
        oracle.sort_by(|a, b| dist(a).total_cmp(&dist(b)).then_with(|| a.cmp(b)));
        let expected: BTreeSet<String> = oracle[..100].iter().cloned().collect();
        assert_eq!(chosen, expected);
    }

    let ids: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    let probs: HashMap<String, f64> = [("x", 0.5), ("y", 0.9), ("z", 0.49)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let corpus = corpus_of(&ids);
    let mut pool = UnlabeledPool::from_corpus(Lang::En, &corpus);
    let sel = uncertainty_select(&mut pool, &corpus, &Table(Arc::new(probs.clone())), 2).unwrap();
    assert_eq!(sel.ids(), vec!["x", "z"]);
    let mut pool = UnlabeledPool::from_corpus(Lang::En, &corpus);
    assert!(uncertainty_select(&mut pool, &corpus, &Table(Arc::new(probs)), 0).unwrap().entries.is_empty());
}

#[test]
fn random_sample_prevalence() {
    let ids: Vec<String> = (0..50_000).map(|i| format!("r{i:05}")).collect();
    let positive: BTreeSet<&String> = ids.iter().step_by(250).collect();
    assert_eq!(positive.len(), 200);
    let mut total = 0usize;
    for seed in 0..100 {
        let mut pool = UnlabeledPool::new(Lang::En, ids.clone());
        let sel = random_sample(&mut pool, 2000, seed);
        assert_eq!(pool.len(), 48_000);
        total += sel.ids().iter().filter(|id| positive.contains(id)).count();
    }
    // Hypergeometric: mean 8, variance 2000 * 0.004 * 0.996 * 48000 / 49999.
    let var = 2000.0 * 0.004 * 0.996 * 48_000.0 / 49_999.0;
    let mean = total as f64 / 100.0;
    assert!((mean - 8.0).abs() <= 3.0 * (var / 100.0f64).sqrt(), "mean {mean}");
}

#[test]
fn random_sample_edges() {
    let ids: Vec<String> = (0..10).map(|i| format!("e{i}")).collect();
    let mut pool = UnlabeledPool::new(Lang::En, ids.clone());
    assert!(random_sample(&mut pool, 0, 1).entries.is_empty());
    let all = random_sample(&mut pool, 10, 1);
    assert_eq!(all.entries.len(), 10);
    assert!(pool.is_empty());
    let mut pool = UnlabeledPool::new(Lang::En, ids);
    let over = random_sample(&mut pool, 12, 1);
    assert_eq!(over.entries.len(), 10);
    assert_eq!(over.warnings, vec![SamplingWarning::PoolExhausted { requested: 12, available: 10 }]);
}

#[test]
fn keyword_up_to_semantics() {
    let n = Normalizer::default();
    let mut tweets = Vec::new();
    for i in 0..40 {
        let text = if i % 8 == 0 { format!("@user slurX! number {i}") } else { format!("plain words only {i}") };
        tweets.push(Tweet { id: format!("k{i:02}"), text, lang: Lang::En, account: "a".into(), created_at: 0 });
    }
    let corpus = Corpus::new(tweets, &n).unwrap();
    let kw = KeywordList::new(Lang::En, &["slurx", "never seen phrase"], &n).unwrap();
    let mut pool = UnlabeledPool::from_corpus(Lang::En, &corpus);
    let sel = keyword_sample(&mut pool, &corpus, &kw, 8000, 1).unwrap();
    assert_eq!(sel.entries.len(), 5);
    let mut pool = UnlabeledPool::from_corpus(Lang::En, &corpus);
    let three = keyword_sample(&mut pool, &corpus, &kw, 3, 1).unwrap();
    assert_eq!(three.entries.len(), 3);
    assert!(three.ids().iter().all(|id| kw.matches(corpus.sequence(id).unwrap())));
    assert!(matches!(KeywordList::new(Lang::En, &[] as &[&str], &n), Err(SamplingError::EmptyKeywords)));
}

#[test]
fn model_range_contracts() {
    let ids: Vec<String> = (0..300).map(|i| format!("p{i:03}")).collect();
    let corpus = corpus_of(&ids);
    let probs: HashMap<String, f64> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i as f64 / 299.0)).collect();
    let table = Table(Arc::new(probs.clone()));

    let mut a = UnlabeledPool::from_corpus(Lang::En, &corpus);
    let mut b = UnlabeledPool::from_corpus(Lang::En, &corpus);
    let full = model_sample(&mut a, &corpus, &table, (0.0, 1.0), 50, 9).unwrap();
    let rand = random_sample(&mut b, 50, 9);
    assert_eq!(full.ids(), rand.ids());

    let mut pool = UnlabeledPool::from_corpus(Lang::En, &corpus);
    let ranged = model_sample(&mut pool, &corpus, &table, (0.2, 1.0), 100, 4).unwrap();
    assert_eq!(ranged.entries.len(), 100);
    assert!(ranged.ids().iter().all(|id| probs[id] >= 0.2));

    let mut pool = UnlabeledPool::from_corpus(Lang::En, &corpus);
    let none = model_sample(&mut pool, &corpus, &ConstantScorer(0.1), (0.2, 1.0), 10, 4).unwrap();
    assert!(none.entries.is_empty());
    assert_eq!(none.warnings, vec![SamplingWarning::NoneQualified { strategy: StrategyTag::Model }]);
    assert!(matches!(model_sample(&mut pool, &corpus, &table, (0.8, 0.2), 10, 4), Err(SamplingError::BadRange { .. })));
}

#[test]
fn initial_batch_dedups_and_backfills() {
    let ids: Vec<String> = (0..12_000).map(|i| format!("b{i:05}")).collect();
    let mut pool = UnlabeledPool::new(Lang::En, ids.clone());
    let method = draw_random(&pool, 8000, 1, &BTreeSet::new());
    let mut random: Vec<String> = method[..100].to_vec();
    let method_set: BTreeSet<String> = method.iter().cloned().collect();
    random.extend(draw_random(&pool, 1900, 2, &method_set));
    let tag = |v: Vec<String>, t| v.into_iter().map(|id| annopipe::corpus::BatchEntry::new(id, t)).collect::<Vec<_>>();
    let sel = assemble_initial_batch(&mut pool, tag(method, StrategyTag::Keyword), tag(random, StrategyTag::Random), 3).unwrap();
    assert_eq!(sel.entries.len(), 10_000);
    assert_eq!(sel.ids().into_iter().collect::<BTreeSet<_>>().len(), 10_000);
    assert_eq!(sel.entries.iter().filter(|e| e.strategy == StrategyTag::Keyword).count(), 8000);
    assert_eq!(pool.len(), 2000);

    // Overlapping parts from a pool of 9000 cannot be backfilled to 10000.
    let mut small = UnlabeledPool::new(Lang::En, ids[..9000].to_vec());
    let m = draw_random(&small, 8000, 1, &BTreeSet::new());
    let r = draw_random(&small, 2000, 2, &BTreeSet::new());
    let sel = assemble_initial_batch(&mut small, tag(m, StrategyTag::Model), tag(r, StrategyTag::Random), 3).unwrap();
    assert_eq!(sel.entries.len(), 9000);
    assert_eq!(sel.warnings, vec![SamplingWarning::PoolExhausted { requested: 10_000, available: 9000 }]);
    assert!(small.is_empty());
}
