//! Seeded synthetic corpora for desk-scale experiments.
//!
//! Every language gets a fixed pseudo-word vocabulary split into neutral
//! filler, identity-group terms, attack lemmas (each with several surface
//! variants), profanity and reporting words. A positive item puts an attack
//! variant next to a group term. Negatives include group mentions without an
//! attack, untargeted profanity (sometimes with an attack word), and
//! reporting items that quote an attack on a group. Attack lemmas follow a
//! Zipf law so the rare ones are seldom seen in a small labeled set.
//!
//! Ground truth never enters the corpus file; it is written to a sidecar
//! `*.truth.csv` that only the oracle annotator reads.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_corpus, write_label_csv, CorpusError, Lang, Tweet};

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gr", "kr", "pl", "st", "tr",
    "sk", "sl", "sn", "ch", "sh", "th", "fl", "gl", "pr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ee", "oa", "ie"];
const CODAS: &[&str] = &["", "", "n", "r", "s", "t", "l", "k", "m", "nd", "rt"];
const VARIANT_SUFFIXES: &[&str] = &["", "s", "ish", "ers"];
const VARIANT_WEIGHTS: &[f64] = &[0.55, 0.2, 0.15, 0.1];
const EMOTICONS: &[&str] = &[":)", ":(", ":D", "😂", "😡", ":-(", "😊"];
const BASE_TIME: i64 = 1_538_352_000;
const SPAN_SECONDS: i64 = 190 * 86_400;

/// Shape of the generated vocabulary and item mix.
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub neutral_words: usize,
    pub group_terms: usize,
    pub attack_lemmas: usize,
    pub profanity_words: usize,
    pub reporting_words: usize,
    pub accounts: usize,
    /// Fractions of the negative items.
    pub group_mention_rate: f64,
    pub offensive_rate: f64,
    pub reporting_rate: f64,
    pub attack_zipf: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            neutral_words: 4000,
            group_terms: 20,
            attack_lemmas: 20,
            profanity_words: 150,
            reporting_words: 20,
            accounts: 200,
            group_mention_rate: 0.08,
            offensive_rate: 0.04,
            reporting_rate: 0.002,
            attack_zipf: 1.0,
        }
    }
}

/// Fixed per-language vocabulary.
#[derive(Debug, Clone)]
pub struct SynthVocab {
    pub neutral: Vec<String>,
    pub groups: Vec<String>,
    /// Base form of every attack lemma; surface variants add a suffix.
    pub attack_lemmas: Vec<String>,
    pub profanity: Vec<String>,
    pub reporting: Vec<String>,
}

impl SynthVocab {
    pub fn for_lang(lang: &Lang, params: &SynthParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_70c ^ fnv1a(lang.as_str().as_bytes()));
        let mut used = HashSet::new();
        let mut draw = |n: usize, syllables: (usize, usize), rng: &mut ChaCha8Rng, variants: bool| {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let k = rng.random_range(syllables.0..=syllables.1);
                let w: String = (0..k)
                    .map(|_| {
                        format!(
                            "{}{}{}",
                            ONSETS[rng.random_range(0..ONSETS.len())],
                            VOWELS[rng.random_range(0..VOWELS.len())],
                            CODAS[rng.random_range(0..CODAS.len())]
                        )
                    })
                    .collect();
                let forms: Vec<String> = if variants {
                    VARIANT_SUFFIXES.iter().map(|s| format!("{w}{s}")).collect()
                } else {
                    vec![w.clone()]
                };
                if forms.iter().all(|f| !used.contains(f)) {
                    used.extend(forms);
                    out.push(w);
                }
            }
            out
        };
        // Attack lemmas first so their variants are reserved.
        let attack_lemmas = draw(params.attack_lemmas, (2, 2), &mut rng, true);
        let neutral = draw(params.neutral_words, (1, 3), &mut rng, false);
        let groups = draw(params.group_terms, (2, 3), &mut rng, false);
        let profanity = draw(params.profanity_words, (1, 2), &mut rng, false);
        let reporting = draw(params.reporting_words, (2, 3), &mut rng, false);
        Self { neutral, groups, attack_lemmas, profanity, reporting }
    }

    /// Keyword list for keyword-based sampling: frequent attack lemmas,
    /// every profanity and group term, and a band of topical neutral words.
    pub fn keywords(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        out.extend(self.attack_lemmas.iter().take(self.attack_lemmas.len() * 2 / 5).cloned());
        out.extend(self.profanity.iter().cloned());
        out.extend(self.groups.iter().cloned());
        let lo = self.neutral.len() * 3 / 40;
        let hi = self.neutral.len() * 3 / 4;
        out.extend(self.neutral[lo..hi].iter().step_by(6).cloned());
        let mut seen = HashSet::new();
        out.retain(|w| seen.insert(w.clone()));
        out
    }
}

/// A generated corpus with its hidden label channels.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub lang: Lang,
    pub tweets: Vec<Tweet>,
    /// Ground truth under the strict definition (target AND attack).
    pub truth: Vec<bool>,
    /// A looser "offensive" labeling: any attack or profanity.
    pub loose: Vec<bool>,
}

impl SynthCorpus {
    pub fn positives(&self) -> usize {
        self.truth.iter().filter(|y| **y).count()
    }

    pub fn truth_rows(&self) -> Vec<(String, bool)> {
        self.tweets.iter().zip(&self.truth).map(|(t, y)| (t.id.clone(), *y)).collect()
    }

    pub fn loose_rows(&self) -> Vec<(String, bool)> {
        self.tweets.iter().zip(&self.loose).map(|(t, y)| (t.id.clone(), *y)).collect()
    }

    /// Writes the corpus file and its truth sidecar; returns the sidecar path.
    pub fn write(&self, corpus_path: &Path) -> Result<PathBuf, CorpusError> {
        if let Some(dir) = corpus_path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(corpus_path, write_corpus(&self.tweets))?;
        let truth = truth_path(corpus_path);
        std::fs::write(&truth, write_label_csv(&self.truth_rows()))?;
        Ok(truth)
    }
}

/// `corpus.jsonl` → `corpus.truth.csv`.
pub fn truth_path(corpus_path: &Path) -> PathBuf {
    corpus_path.with_extension("truth.csv")
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Positive,
    Neutral,
    GroupMention,
    Offensive,
    Reporting,
}

struct Sampler<'a> {
    vocab: &'a SynthVocab,
    neutral: WeightedIndex<f64>,
    attack: WeightedIndex<f64>,
    variant: WeightedIndex<f64>,
    accounts: WeightedIndex<f64>,
}

fn zipf(n: usize, s: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| (r as f64).powf(-s))).expect("non-empty vocabulary")
}

impl Sampler<'_> {
    fn neutral(&self, rng: &mut ChaCha8Rng) -> String {
        self.vocab.neutral[self.neutral.sample(rng)].clone()
    }

    fn attack(&self, rng: &mut ChaCha8Rng) -> String {
        let lemma = &self.vocab.attack_lemmas[self.attack.sample(rng)];
        format!("{lemma}{}", VARIANT_SUFFIXES[self.variant.sample(rng)])
    }

    fn pick<'v>(list: &'v [String], rng: &mut ChaCha8Rng) -> &'v str {
        &list[rng.random_range(0..list.len())]
    }

    fn text(&self, kind: Kind, rng: &mut ChaCha8Rng) -> Vec<String> {
        let n_filler = rng.random_range(4..=12);
        let mut words: Vec<String> = (0..n_filler).map(|_| self.neutral(rng)).collect();
        let insert = |words: &mut Vec<String>, phrase: Vec<String>, rng: &mut ChaCha8Rng| {
            let at = rng.random_range(0..=words.len());
            words.splice(at..at, phrase);
        };
        let v = self.vocab;
        match kind {
            Kind::Neutral => {}
            Kind::Positive => {
                let g = Self::pick(&v.groups, rng).to_string();
                let a = self.attack(rng);
                let phrase = match rng.random_range(0..3) {
                    0 => vec![a, g],
                    1 => vec![g, a],
                    _ => vec![a, self.neutral(rng), g],
                };
                insert(&mut words, phrase, rng);
                if rng.random_bool(0.4) {
                    insert(&mut words, vec![Self::pick(&v.profanity, rng).into()], rng);
                }
                if rng.random_bool(0.2) {
                    let extra = self.attack(rng);
                    insert(&mut words, vec![extra], rng);
                }
            }
            Kind::GroupMention => {
                insert(&mut words, vec![Self::pick(&v.groups, rng).into()], rng);
                if rng.random_bool(0.25) {
                    insert(&mut words, vec![Self::pick(&v.profanity, rng).into()], rng);
                }
            }
            Kind::Offensive => {
                for _ in 0..rng.random_range(1..=2) {
                    insert(&mut words, vec![Self::pick(&v.profanity, rng).into()], rng);
                }
                if rng.random_bool(0.05) {
                    let a = self.attack(rng);
                    insert(&mut words, vec![a], rng);
                }
            }
            Kind::Reporting => {
                let phrase = vec![
                    Self::pick(&v.reporting, rng).to_string(),
                    self.attack(rng),
                    Self::pick(&v.groups, rng).to_string(),
                ];
                insert(&mut words, phrase, rng);
            }
        }
        words
    }

    fn decorate(&self, words: Vec<String>, kind: Kind, account: &str, rng: &mut ChaCha8Rng) -> String {
        let mut parts: Vec<String> = Vec::with_capacity(words.len() + 4);
        if rng.random_bool(0.35) {
            parts.push(format!("@{account}"));
        }
        for (i, w) in words.into_iter().enumerate() {
            if i == 0 && rng.random_bool(0.3) {
                let mut c = w.chars();
                let first = c.next().map(|f| f.to_uppercase().collect::<String>()).unwrap_or_default();
                parts.push(first + c.as_str());
            } else {
                parts.push(w);
            }
        }
        if rng.random_bool(0.05) {
            parts.push(rng.random_range(1..3000).to_string());
        }
        let emo_p = if kind == Kind::Positive { 0.15 } else { 0.08 };
        if rng.random_bool(emo_p) {
            parts.push(EMOTICONS[rng.random_range(0..EMOTICONS.len())].into());
        }
        if rng.random_bool(0.1) {
            parts.push(format!("https://t.co/{:08x}", rng.random::<u32>()));
        }
        parts.join(" ")
    }
}

/// Generates `n` tweets of which exactly `ceil(n * positive_rate)` are
/// positive. Output is a pure function of the arguments.
pub fn synth_corpus(seed: u64, n: usize, positive_rate: f64, lang: Lang) -> Result<SynthCorpus, CorpusError> {
    synth_corpus_with(seed, n, positive_rate, lang, &SynthParams::default())
}

pub fn synth_corpus_with(
    seed: u64,
    n: usize,
    positive_rate: f64,
    lang: Lang,
    params: &SynthParams,
) -> Result<SynthCorpus, CorpusError> {
    if n == 0 {
        return Err(CorpusError::InvalidParameter("n must be positive".into()));
    }
    if !(positive_rate > 0.0 && positive_rate < 1.0) {
        return Err(CorpusError::InvalidParameter(format!("positive_rate {positive_rate} not in (0, 1)")));
    }
    let n_pos = positive_count(n, positive_rate);
    let vocab = SynthVocab::for_lang(&lang, params);
    let sampler = Sampler {
        vocab: &vocab,
        neutral: zipf(vocab.neutral.len(), 1.0),
        attack: zipf(vocab.attack_lemmas.len(), params.attack_zipf),
        variant: WeightedIndex::new(VARIANT_WEIGHTS).expect("weights"),
        accounts: zipf(params.accounts, 0.8),
    };
    let accounts: Vec<String> = (0..params.accounts).map(|i| format!("acct{i:04}")).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut is_pos = vec![false; n];
    for &i in &order[..n_pos] {
        is_pos[i] = true;
    }

    let lang_tag = lang.as_str().to_ascii_lowercase();
    let mut ids = HashSet::with_capacity(n);
    let mut tweets = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut loose = Vec::with_capacity(n);
    for &positive in &is_pos {
        let kind = if positive {
            Kind::Positive
        } else {
            let u: f64 = rng.random();
            if u < params.group_mention_rate {
                Kind::GroupMention
            } else if u < params.group_mention_rate + params.offensive_rate {
                Kind::Offensive
            } else if u < params.group_mention_rate + params.offensive_rate + params.reporting_rate {
                Kind::Reporting
            } else {
                Kind::Neutral
            }
        };
        let account = &accounts[sampler.accounts.sample(&mut rng)];
        let words = sampler.text(kind, &mut rng);
        let text = sampler.decorate(words, kind, account, &mut rng);
        let mut id = format!("{lang_tag}{:016x}", rng.random::<u64>());
        while !ids.insert(id.clone()) {
            id.push('x');
        }
        tweets.push(Tweet {
            id,
            text,
            lang: lang.clone(),
            account: account.clone(),
            created_at: BASE_TIME + rng.random_range(0..SPAN_SECONDS),
        });
        truth.push(positive);
        loose.push(matches!(kind, Kind::Positive | Kind::Offensive | Kind::Reporting));
    }
    Ok(SynthCorpus { lang, tweets, truth, loose })
}

fn positive_count(n: usize, rate: f64) -> usize {
    ((n as f64 * rate) - 1e-9).ceil().max(1.0) as usize
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
