use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, DatasetExport, LabeledPool};

/// Proportion-preserving split of a labeled pool.
pub fn split_train_test(labeled: &LabeledPool, test_fraction: f64, seed: u64) -> Result<DatasetExport, CorpusError> {
    let rows: Vec<(String, bool)> = labeled.examples().map(|(id, y)| (id.to_string(), y)).collect();
    stratified_split(rows, test_fraction, seed)
}

/// Each class is shuffled with one seeded generator (positives first, then
/// negatives). The test set holds `round(n * test_fraction)` items; the
/// positive count is whichever of floor/ceil of the class share keeps the
/// train and test positive ratios closest, with at least one member of each
/// class on each side.
pub fn stratified_split(
    mut rows: Vec<(String, bool)>,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetExport, CorpusError> {
    if rows.is_empty() {
        return Err(CorpusError::InvalidParameter("labeled pool is empty".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::InvalidParameter(format!("test_fraction {test_fraction} not in (0, 1)")));
    }
    rows.sort();
    let (mut pos, mut neg): (Vec<_>, Vec<_>) = rows.into_iter().partition(|(_, y)| *y);
    for (label, class) in [(1u8, &pos), (0u8, &neg)] {
        if class.len() < 2 {
            return Err(CorpusError::CannotStratify { label, count: class.len() });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let (p, q) = (pos.len(), neg.len());
    let n = p + q;
    let total_test = ((n as f64 * test_fraction).round() as usize).clamp(2, n - 2);
    let share = p as f64 * test_fraction;
    let mut best: Option<(f64, usize)> = None;
    for cand in [share.floor() as usize, share.ceil() as usize] {
        let tp = cand.clamp(1, p - 1);
        let tn = total_test.saturating_sub(tp).clamp(1, q - 1);
        let diff = (tp as f64 / (tp + tn) as f64 - (p - tp) as f64 / (n - tp - tn) as f64).abs();
        if best.is_none_or(|(d, _)| diff < d) {
            best = Some((diff, tp));
        }
    }
    let test_pos = best.map(|(_, tp)| tp).unwrap_or(1);
    let test_neg = total_test.saturating_sub(test_pos).clamp(1, q - 1);

    let mut test: Vec<_> = pos[..test_pos].iter().chain(&neg[..test_neg]).cloned().collect();
    let mut train: Vec<_> = pos[test_pos..].iter().chain(&neg[test_neg..]).cloned().collect();
    test.sort();
    train.sort();
    Ok(DatasetExport { train, test })
}
