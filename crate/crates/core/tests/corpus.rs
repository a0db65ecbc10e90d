use std::io::Cursor;

use annopipe::corpus::{
    parse_batch_records, parse_corpus, parse_label_csv, stratified_split, write_batch_records, write_corpus, write_label_csv, Batch, BatchEntry,
    Corpus, CorpusError, LabelRecord, LabeledPool, Lang, StrategyTag, Tweet,
};
use annopipe::preprocess::Normalizer;
use proptest::prelude::*;

fn rows(pos: usize, neg: usize) -> Vec<(String, bool)> {
    (0..pos + neg).map(|i| (format!("id{i:06}"), i % (pos + neg).max(1) < pos)).collect()
}

#[test]
fn english_release_split() {
    let f = 18_167.0 / 92_022.0;
    let ex = stratified_split(rows(7_159, 84_863), f, 4).unwrap();
    assert_eq!(ex.test.len(), 18_167);
    assert_eq!(ex.train.len() + ex.test.len(), 92_022);
    assert!((ex.train_positive_ratio() - ex.test_positive_ratio()).abs() <= 1e-3);
}

#[test]
fn relabel_updates_batch_counts() {
    let tweets: Vec<Tweet> = (0..6)
        .map(|i| Tweet { id: format!("t{i}"), text: format!("word{i}"), lang: Lang::En, account: "a".into(), created_at: i })
        .collect();
    let corpus = Corpus::new(tweets, &Normalizer::default()).unwrap();
    let mut pool = LabeledPool::new(Lang::En);
    for k in 0..2 {
        let ids: Vec<String> = (k * 3..k * 3 + 3).map(|i| format!("t{i}")).collect();
        let batch = Batch::new(Lang::En, k + 1, ids.iter().map(|id| BatchEntry::new(id.clone(), StrategyTag::Random)).collect());
        let records = ids.iter().map(|id| LabelRecord::new(id.clone(), "a", id == "t0", 0)).collect();
        pool.append_batch(&batch, records, &corpus).unwrap();
    }
    pool.relabel(LabelRecord::new("t0", "a", false, 5)).unwrap();
    pool.relabel(LabelRecord::new("t4", "a", true, 5)).unwrap();
    let pos: Vec<usize> = pool.batch_summaries().iter().map(|b| b.positives).collect();
    assert_eq!(pos, vec![0, 1]);
    assert_eq!(pool.positives(), 1);
    assert_eq!(pool.get("t0").unwrap().timestamp, 5);
    assert!(matches!(pool.relabel(LabelRecord::new("t9", "a", true, 5)), Err(CorpusError::UnknownTweet(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_keeps_class_ratio(n in 5_000usize..20_000, pos_frac in 0.01f64..0.5, frac in 0.1f64..0.4, seed in any::<u64>()) {
        let pos = ((n as f64 * pos_frac) as usize).max(50);
        let ex = stratified_split(rows(pos, n - pos), frac, seed).unwrap();
        prop_assert_eq!(ex.train.len() + ex.test.len(), n);
        prop_assert_eq!(ex.test.len(), (n as f64 * frac).round() as usize);
        prop_assert!((ex.train_positive_ratio() - ex.test_positive_ratio()).abs() <= 1e-3);
        let mut all: Vec<_> = ex.train.iter().chain(&ex.test).map(|(id, _)| id.clone()).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
    }

    #[test]
    fn corpus_lines_roundtrip(texts in prop::collection::vec("\\PC{1,40}", 1..20)) {
        let tweets: Vec<Tweet> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Tweet { id: format!("{i:019}"), text: t.clone(), lang: Lang::De, account: format!("acct{i}"), created_at: i as i64 })
            .collect();
        let parsed = parse_corpus(Cursor::new(write_corpus(&tweets)), None).unwrap();
        prop_assert!(parsed.errors.is_empty());
        prop_assert_eq!(parsed.tweets, tweets);
    }

    #[test]
    fn label_csv_roundtrip(labels in prop::collection::vec(any::<bool>(), 0..50)) {
        let rows: Vec<(String, bool)> = labels.iter().enumerate().map(|(i, y)| (format!("t{i}"), *y)).collect();
        prop_assert_eq!(parse_label_csv(&write_label_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn batch_records_roundtrip(n in 0usize..40) {
        let tags = [StrategyTag::Random, StrategyTag::Keyword, StrategyTag::Model, StrategyTag::Qbc];
        let entries: Vec<BatchEntry> = (0..n).map(|i| BatchEntry::new(format!("t{i}"), tags[i % 4])).collect();
        prop_assert_eq!(parse_batch_records(&write_batch_records(&entries)).unwrap(), entries);
    }
}
