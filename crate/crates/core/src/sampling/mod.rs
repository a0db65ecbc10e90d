//! Batch selection: random, keyword and model-based initial sampling,
//! uncertainty sampling, and query-by-committee with average KL divergence.

mod active;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{ClassifyError, Committee, Scorer};
use crate::corpus::{BatchEntry, Corpus, CorpusError, EntryScores, Lang, StrategyTag, UnlabeledPool};
use crate::preprocess::{Normalizer, TokenSequence};

pub use active::{
    run_active_loop, select_batch, ActiveLoopConfig, AnnotationBudget, Annotator, AnnotatorError, HaltReason, IterationLog,
    LoopError, LoopOutcome, LoopState, PendingBatch,
};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const KL_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("keyword list is empty")]
    EmptyKeywords,
    #[error("invalid probability range [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Non-fatal conditions a selection ran into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingWarning {
    /// Fewer pool items than requested.
    PoolExhausted { requested: usize, available: usize },
    /// Fewer items met the strategy's criterion than requested.
    FewerQualified { strategy: StrategyTag, requested: usize, qualified: usize },
    /// Nothing met the strategy's criterion.
    NoneQualified { strategy: StrategyTag },
}

/// Selected entries, in selection order, plus any warnings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub entries: Vec<BatchEntry>,
    pub warnings: Vec<SamplingWarning>,
}

impl Selection {
    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.tweet_id.clone()).collect()
    }

    fn warn(&mut self, w: SamplingWarning) {
        tracing::warn!(?w, "sampling");
        self.warnings.push(w);
    }
}

/// Lowercased, deduplicated keywords, each stored as its normalized token
/// sequence so that matching happens at token boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordList {
    pub lang: Lang,
    entries: Vec<Vec<String>>,
}

impl KeywordList {
    pub fn new<S: AsRef<str>>(lang: Lang, raw: &[S], normalizer: &Normalizer) -> Result<Self, SamplingError> {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for k in raw {
            let toks = normalizer.normalize(k.as_ref());
            if !toks.is_empty() && seen.insert(toks.clone()) {
                entries.push(toks);
            }
        }
        if entries.is_empty() {
            return Err(SamplingError::EmptyKeywords);
        }
        Ok(Self { lang, entries })
    }

    /// One keyword or phrase per line; `#` starts a comment line.
    pub fn parse(lang: Lang, src: &str, normalizer: &Normalizer) -> Result<Self, SamplingError> {
        let lines: Vec<&str> =
            src.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
        Self::new(lang, &lines, normalizer)
    }

    pub fn load(lang: Lang, path: &Path, normalizer: &Normalizer) -> Result<Self, SamplingError> {
        let src = std::fs::read_to_string(path).map_err(CorpusError::from)?;
        Self::parse(lang, &src, normalizer)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = String> + '_ {
        self.entries.iter().map(|e| e.join(" "))
    }

    pub fn matches(&self, seq: &TokenSequence) -> bool {
        self.entries.iter().any(|kw| seq.tokens.windows(kw.len()).any(|w| w == kw.as_slice()))
    }
}

/// Disagreement of one pool tweet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementScore {
    pub tweet_id: String,
    pub avg_kl: f64,
    pub consensus_p: f64,
    pub member_probs: Vec<f64>,
    /// Probability from the gating scorer (the ensemble).
    pub gate_p: f64,
}

impl DisagreementScore {
    pub fn new(tweet_id: impl Into<String>, member_probs: Vec<f64>, gate_p: f64) -> Self {
        Self {
            tweet_id: tweet_id.into(),
            avg_kl: avg_kl(&member_probs),
            consensus_p: consensus(&member_probs),
            member_probs,
            gate_p,
        }
    }
}

/// Arithmetic mean of the member probabilities.
pub fn consensus(member_probs: &[f64]) -> f64 {
    member_probs.iter().sum::<f64>() / member_probs.len() as f64
}

/// Mean over members of `KL(member || consensus)` on the binary label
/// distribution, in nats. Probabilities are clamped to `[KL_EPS, 1 - KL_EPS]`
/// and the consensus is the mean of the clamped values.
pub fn avg_kl(member_probs: &[f64]) -> f64 {
    let c = member_probs.len();
    if c == 0 || member_probs.iter().all(|p| *p == member_probs[0]) {
        return 0.0;
    }
    let clamped: Vec<f64> = member_probs.iter().map(|p| p.clamp(KL_EPS, 1.0 - KL_EPS)).collect();
    let q1 = clamped.iter().sum::<f64>() / c as f64;
    let q0 = 1.0 - q1;
    let total: f64 = clamped
        .iter()
        .map(|&p1| {
            let p0 = 1.0 - p1;
            p1 * (p1 / q1).ln() + p0 * (p0 / q0).ln()
        })
        .sum();
    (total / c as f64).max(0.0)
}

fn draw_uniform(candidates: &[String], n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    if n >= candidates.len() {
        return candidates.to_vec();
    }
    let mut picked = index::sample(rng, candidates.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| candidates[i].clone()).collect()
}

fn pool_ids(pool: &UnlabeledPool, exclude: &BTreeSet<String>) -> Vec<String> {
    pool.ids().filter(|id| !exclude.contains(*id)).cloned().collect()
}

/// Uniform draw of `n` ids without replacement; the pool is not modified.
pub fn draw_random(pool: &UnlabeledPool, n: usize, seed: u64, exclude: &BTreeSet<String>) -> Vec<String> {
    let ids = pool_ids(pool, exclude);
    draw_uniform(&ids, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn tagged(ids: Vec<String>, tag: StrategyTag) -> Vec<BatchEntry> {
    ids.into_iter().map(|id| BatchEntry::new(id, tag)).collect()
}

fn commit(pool: &mut UnlabeledPool, sel: Selection) -> Result<Selection, SamplingError> {
    pool.remove(&sel.ids())?;
    Ok(sel)
}

/// Uniform sample without replacement; the sampled ids leave the pool.
pub fn random_sample(pool: &mut UnlabeledPool, n: usize, seed: u64) -> Selection {
    let mut sel = Selection::default();
    if n > pool.len() {
        sel.warn(SamplingWarning::PoolExhausted { requested: n, available: pool.len() });
    }
    sel.entries = tagged(draw_random(pool, n, seed, &BTreeSet::new()), StrategyTag::Random);
    commit(pool, sel).expect("drawn ids come from the pool")
}

/// Pool ids whose normalized text contains a keyword.
pub fn keyword_matches(pool: &UnlabeledPool, corpus: &Corpus, keywords: &KeywordList) -> Result<Vec<String>, SamplingError> {
    let ids: Vec<&String> = pool.ids().collect();
    let hits: Vec<Option<String>> = ids
        .par_iter()
        .map(|id| Ok(keywords.matches(corpus.require_sequence(id)?).then(|| (*id).clone())))
        .collect::<Result<_, CorpusError>>()?;
    Ok(hits.into_iter().flatten().collect())
}

pub fn draw_keyword(
    pool: &UnlabeledPool,
    corpus: &Corpus,
    keywords: &KeywordList,
    n: usize,
    seed: u64,
) -> Result<Selection, SamplingError> {
    if keywords.is_empty() {
        return Err(SamplingError::EmptyKeywords);
    }
    let matches = keyword_matches(pool, corpus, keywords)?;
    let mut sel = Selection::default();
    if matches.is_empty() {
        sel.warn(SamplingWarning::NoneQualified { strategy: StrategyTag::Keyword });
    } else if matches.len() < n {
        sel.warn(SamplingWarning::FewerQualified { strategy: StrategyTag::Keyword, requested: n, qualified: matches.len() });
    }
    let picked = draw_uniform(&matches, n, &mut ChaCha8Rng::seed_from_u64(seed));
    sel.entries = tagged(picked, StrategyTag::Keyword);
    Ok(sel)
}

/// Up to `n` pool tweets containing at least one keyword; removed from the pool.
pub fn keyword_sample(
    pool: &mut UnlabeledPool,
    corpus: &Corpus,
    keywords: &KeywordList,
    n: usize,
    seed: u64,
) -> Result<Selection, SamplingError> {
    let sel = draw_keyword(pool, corpus, keywords, n, seed)?;
    commit(pool, sel)
}

/// Scores every pool member, in parallel, returned in id order.
pub fn score_pool<S: Scorer + ?Sized>(pool: &UnlabeledPool, corpus: &Corpus, scorer: &S) -> Result<Vec<(String, f64)>, SamplingError> {
    let ids: Vec<&String> = pool.ids().collect();
    ids.par_iter()
        .map(|id| {
            let seq = corpus.require_sequence(id)?;
            Ok(((*id).clone(), scorer.predict_proba(seq)?))
        })
        .collect()
}

pub fn draw_model<S: Scorer + ?Sized>(
    pool: &UnlabeledPool,
    corpus: &Corpus,
    scorer: &S,
    range: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<Selection, SamplingError> {
    let (lo, hi) = range;
    if !(lo <= hi) || lo.is_nan() || hi.is_nan() {
        return Err(SamplingError::BadRange { lo, hi });
    }
    let scored = score_pool(pool, corpus, scorer)?;
    let (ids, probs): (Vec<String>, Vec<f64>) =
        scored.into_iter().filter(|(_, p)| (lo..=hi).contains(p)).unzip();
    let mut sel = Selection::default();
    if ids.is_empty() {
        sel.warn(SamplingWarning::NoneQualified { strategy: StrategyTag::Model });
    } else if ids.len() < n {
        sel.warn(SamplingWarning::FewerQualified { strategy: StrategyTag::Model, requested: n, qualified: ids.len() });
    }
    let prob_of: std::collections::HashMap<&str, f64> = ids.iter().map(String::as_str).zip(probs.iter().copied()).collect();
    let picked = draw_uniform(&ids, n, &mut ChaCha8Rng::seed_from_u64(seed));
    sel.entries = picked
        .into_iter()
        .map(|id| {
            let p = prob_of[id.as_str()];
            BatchEntry {
                tweet_id: id,
                strategy: StrategyTag::Model,
                scores: Some(EntryScores { probability: Some(p), ..EntryScores::default() }),
            }
        })
        .collect();
    Ok(sel)
}

/// Up to `n` tweets drawn uniformly among those the scorer places inside
/// `range` (inclusive); removed from the pool.
pub fn model_sample<S: Scorer + ?Sized>(
    pool: &mut UnlabeledPool,
    corpus: &Corpus,
    scorer: &S,
    range: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<Selection, SamplingError> {
    let sel = draw_model(pool, corpus, scorer, range, n, seed)?;
    commit(pool, sel)
}

/// Concatenates a strategy part and a random part, drops duplicates, and
/// backfills with fresh random pool tweets so the batch reaches
/// `method.len() + random.len()` unique ids when the pool allows. All
/// selected ids leave the pool.
pub fn assemble_initial_batch(
    pool: &mut UnlabeledPool,
    method: Vec<BatchEntry>,
    random: Vec<BatchEntry>,
    seed: u64,
) -> Result<Selection, SamplingError> {
    let target = method.len() + random.len();
    let mut used = BTreeSet::new();
    let mut sel = Selection::default();
    for e in method.into_iter().chain(random) {
        if !pool.contains(&e.tweet_id) {
            return Err(CorpusError::NotInPool(e.tweet_id).into());
        }
        if used.insert(e.tweet_id.clone()) {
            sel.entries.push(e);
        }
    }
    let missing = target - sel.entries.len();
    if missing > 0 {
        let fill = draw_random(pool, missing, seed ^ 0xbacf_111, &used);
        if fill.len() < missing {
            sel.warn(SamplingWarning::PoolExhausted { requested: target, available: sel.entries.len() + fill.len() });
        }
        sel.entries.extend(tagged(fill, StrategyTag::Random));
    }
    commit(pool, sel)
}

/// The `n` pool tweets with probability closest to 0.5, ties by id.
pub fn uncertainty_select<S: Scorer + ?Sized>(
    pool: &mut UnlabeledPool,
    corpus: &Corpus,
    scorer: &S,
    n: usize,
) -> Result<Selection, SamplingError> {
    let mut scored = score_pool(pool, corpus, scorer)?;
    scored.sort_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(n);
    let sel = Selection {
        entries: scored
            .into_iter()
            .map(|(id, p)| BatchEntry {
                tweet_id: id,
                strategy: StrategyTag::Uncertainty,
                scores: Some(EntryScores { probability: Some(p), ..EntryScores::default() }),
            })
            .collect(),
        warnings: Vec::new(),
    };
    commit(pool, sel)
}

/// Query-by-committee batch shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QbcParams {
    pub n_kl: usize,
    pub n_rand: usize,
    /// Only tweets whose gate probability is strictly above this compete
    /// on disagreement. The random part is not gated.
    pub gate_threshold: f64,
}

impl Default for QbcParams {
    fn default() -> Self {
        Self { n_kl: 8000, n_rand: 2000, gate_threshold: 0.2 }
    }
}

/// Committee probabilities, disagreement and gate probability for every
/// pool tweet, in id order.
pub fn score_disagreement<G: Scorer + ?Sized>(
    pool: &UnlabeledPool,
    corpus: &Corpus,
    committee: &Committee,
    gate: &G,
) -> Result<Vec<DisagreementScore>, SamplingError> {
    let ids: Vec<&String> = pool.ids().collect();
    ids.par_iter()
        .map(|id| {
            let seq = corpus.require_sequence(id)?;
            let probs = committee.member_probs(seq)?;
            let g = gate.predict_proba(seq)?;
            Ok(DisagreementScore::new((*id).clone(), probs, g))
        })
        .collect()
}

/// Gate, then order by descending average KL with ties broken by ascending
/// id, and keep the first `n`.
pub fn rank_by_disagreement(mut scores: Vec<DisagreementScore>, n: usize, gate_threshold: f64) -> Vec<DisagreementScore> {
    scores.retain(|s| s.gate_p > gate_threshold);
    scores.sort_by(|a, b| b.avg_kl.total_cmp(&a.avg_kl).then_with(|| a.tweet_id.cmp(&b.tweet_id)));
    scores.truncate(n);
    scores
}

/// Query-by-committee selection: the `n_kl` most disputed gated tweets plus
/// `n_rand` random ones. Everything selected leaves the pool.
pub fn qbc_select<G: Scorer + ?Sized>(
    pool: &mut UnlabeledPool,
    corpus: &Corpus,
    committee: &Committee,
    gate: &G,
    params: &QbcParams,
    seed: u64,
) -> Result<Selection, SamplingError> {
    let scores = score_disagreement(pool, corpus, committee, gate)?;
    let mut sel = Selection::default();
    let top = rank_by_disagreement(scores, params.n_kl, params.gate_threshold);
    if top.is_empty() && params.n_kl > 0 {
        sel.warn(SamplingWarning::NoneQualified { strategy: StrategyTag::Qbc });
    } else if top.len() < params.n_kl {
        sel.warn(SamplingWarning::FewerQualified { strategy: StrategyTag::Qbc, requested: params.n_kl, qualified: top.len() });
    }
    let mut used = BTreeSet::new();
    for s in top {
        used.insert(s.tweet_id.clone());
        sel.entries.push(BatchEntry {
            tweet_id: s.tweet_id,
            strategy: StrategyTag::Qbc,
            scores: Some(EntryScores {
                avg_kl: Some(s.avg_kl),
                consensus: Some(s.consensus_p),
                probability: Some(s.gate_p),
                member_probs: s.member_probs,
            }),
        });
    }
    let random = draw_random(pool, params.n_rand, seed, &used);
    if random.len() < params.n_rand {
        sel.warn(SamplingWarning::PoolExhausted { requested: params.n_kl + params.n_rand, available: pool.len() });
    }
    sel.entries.extend(tagged(random, StrategyTag::Random));
    commit(pool, sel)
}
