use serde::{Deserialize, Serialize};

use crate::preprocess::{TokenSequence, PAD_TOKEN};

pub const DEFAULT_DIM: u32 = 1 << 18;
const WORD_SALT: u64 = 0x776f_7264;
const CHAR_SALT: u64 = 0x6368_6172;

/// Seeded 64-bit hash: FNV-1a over the bytes with the seed folded into the
/// offset basis, finished with the splitmix64 mixer.
pub fn feature_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Which n-grams a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureView {
    WordNgrams { min: usize, max: usize },
    CharNgrams { min: usize, max: usize },
}

impl FeatureView {
    pub const WORD_1_4: FeatureView = FeatureView::WordNgrams { min: 1, max: 4 };
    pub const CHAR_3_5: FeatureView = FeatureView::CharNgrams { min: 3, max: 5 };
}

/// Sparse vector with strictly increasing indices in `[0, dim)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub dim: u32,
    pub entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| weights[i as usize] * v).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum()
    }

    fn from_indices(dim: u32, mut idx: Vec<u32>) -> Self {
        idx.sort_unstable();
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(idx.len());
        for i in idx {
            match entries.last_mut() {
                Some((j, v)) if *j == i => *v += 1.0,
                _ => entries.push((i, 1.0)),
            }
        }
        Self { dim, entries }
    }
}

/// Hashed n-gram counts. Padding tokens are ignored.
pub fn featurize(seq: &TokenSequence, view: FeatureView, dim: u32, seed: u64) -> FeatureVector {
    assert!(dim > 0, "feature dimension must be positive");
    let tokens: Vec<&str> = seq.tokens.iter().map(String::as_str).filter(|t| *t != PAD_TOKEN).collect();
    let mut idx = Vec::new();
    let reduce = |h: u64| (h % u64::from(dim)) as u32;
    match view {
        FeatureView::WordNgrams { min, max } => {
            let mut buf = Vec::new();
            for n in min.max(1)..=max {
                for w in tokens.windows(n) {
                    buf.clear();
                    buf.push(n as u8);
                    for (k, t) in w.iter().enumerate() {
                        if k > 0 {
                            buf.push(0x1f);
                        }
                        buf.extend_from_slice(t.as_bytes());
                    }
                    idx.push(reduce(feature_hash(&buf, seed ^ WORD_SALT)));
                }
            }
        }
        FeatureView::CharNgrams { min, max } => {
            if !tokens.is_empty() {
                let text: Vec<char> = format!(" {} ", tokens.join(" ")).chars().collect();
                let mut buf = String::new();
                for n in min.max(1)..=max {
                    for w in text.windows(n) {
                        buf.clear();
                        buf.extend(w);
                        idx.push(reduce(feature_hash(buf.as_bytes(), seed ^ CHAR_SALT)));
                    }
                }
            }
        }
    }
    FeatureVector::from_indices(dim, idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(toks: &[&str]) -> TokenSequence {
        TokenSequence::new("x", toks.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn two_tokens_three_features() {
        let f = featurize(&seq(&["a", "b"]), FeatureView::WORD_1_4, DEFAULT_DIM, 0);
        assert_eq!(f.nnz(), 3);
        assert!(f.entries.iter().all(|&(_, v)| v == 1.0));
    }

    #[test]
    fn empty_sequence_zero_vector() {
        assert_eq!(featurize(&seq(&[]), FeatureView::WORD_1_4, DEFAULT_DIM, 0).nnz(), 0);
        assert_eq!(featurize(&seq(&[]), FeatureView::CHAR_3_5, DEFAULT_DIM, 0).nnz(), 0);
    }

    #[test]
    fn repeated_token_counts() {
        let f = featurize(&seq(&["a", "a"]), FeatureView::WordNgrams { min: 1, max: 1 }, DEFAULT_DIM, 0);
        assert_eq!(f.entries.len(), 1);
        assert_eq!(f.entries[0].1, 2.0);
    }

    #[test]
    fn pads_ignored() {
        let a = featurize(&seq(&["a", "b"]), FeatureView::WORD_1_4, DEFAULT_DIM, 0);
        let b = featurize(&seq(&["a", "b", PAD_TOKEN, PAD_TOKEN]), FeatureView::WORD_1_4, DEFAULT_DIM, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn indices_in_range() {
        let f = featurize(&seq(&["lorem", "ipsum", "dolor", "sit", "amet"]), FeatureView::CHAR_3_5, 97, 3);
        assert!(f.entries.iter().all(|&(i, _)| i < 97));
        assert!(f.entries.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn hash_depends_on_seed() {
        assert_ne!(feature_hash(b"abc", 1), feature_hash(b"abc", 2));
        assert_eq!(feature_hash(b"abc", 1), feature_hash(b"abc", 1));
    }
}
