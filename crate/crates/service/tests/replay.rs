mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use annopipe::corpus::{write_batch_records, Verdict};
use annopipe_service::journal::{parse_journal, JOURNAL_FILE, SNAPSHOT_FILE};
use annopipe_service::state::{Event, PipelineState};
use annopipe_service::store::LabelSubmission;
use annopipe_service::Store;
use common::*;

/// Labels, an unsure flag, a resolution, a rejected lot and some relabels.
fn scripted(store: &mut Store, fx: &Fixture) {
    let list = store.next_tasks("ann", 1000).unwrap();
    for (i, t) in list.tasks.iter().enumerate() {
        let unsure = i % 97 == 3;
        let sub = LabelSubmission {
            annotator_id: "ann".into(),
            tweet_id: t.tweet_id.clone(),
            value: if unsure { None } else { Some(fx.truth[&t.tweet_id]) },
            unsure,
        };
        store.submit_label(sub, 100 + i as i64).unwrap();
    }
    let held = store.state().discussion.iter().next().unwrap().clone();
    store.resolve(&held, true, Some("attack on a group".into()), 2_000).unwrap();
    let sample = store.lot_sample("ann-lot0001").unwrap();
    let verdicts: BTreeMap<String, Verdict> = sample
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.tweet_id.clone(), if i < 9 { Verdict::Erroneous } else { Verdict::Correct }))
        .collect();
    store.submit_verdicts("ann-lot0001", verdicts, None, 2_100).unwrap();
    let again = store.next_tasks("ann", 30).unwrap();
    for t in &again.tasks {
        let sub = LabelSubmission { annotator_id: "ann".into(), tweet_id: t.tweet_id.clone(), value: Some(false), unsure: false };
        store.submit_label(sub, 3_000).unwrap();
    }
    store.next_tasks("bob", 40).unwrap();
}

fn state_json(s: &PipelineState) -> String {
    serde_json::to_string(s).unwrap()
}

#[test]
fn crash_with_torn_tail_replays_identically() {
    let fx = fixture(1_500, 11);
    let dir = tempfile::tempdir().unwrap();
    let mut store = open(config(dir.path()), &fx);
    store.open_batch(first_batch(&fx.ids, 1_200)).unwrap();
    scripted(&mut store, &fx);
    let before = store.state().clone();
    let events = store.events();
    drop(store);

    // A write cut short by the crash.
    let mut f = std::fs::OpenOptions::new().append(true).open(dir.path().join(JOURNAL_FILE)).unwrap();
    f.write_all(br#"{"seq":99999,"event":{"type":"labeled","record":{"tweet_"#).unwrap();
    drop(f);

    let mut reopened = open(config(dir.path()), &fx);
    assert_eq!(reopened.events(), events);
    assert_eq!(reopened.state(), &before);
    assert_eq!(state_json(reopened.state()), state_json(&before));
    let t = reopened.next_tasks("bob", 1).unwrap().tasks[0].tweet_id.clone();
    let sub = LabelSubmission { annotator_id: "bob".into(), tweet_id: t, value: Some(true), unsure: false };
    reopened.submit_label(sub, 9_000).unwrap();
    assert_eq!(reopened.events(), events + 1);
}

#[test]
fn snapshot_plus_tail_equals_full_replay() {
    let fx = fixture(1_500, 12);
    let dir = tempfile::tempdir().unwrap();
    let cfg = annopipe_service::ServiceConfig { snapshot_every: 37, ..config(dir.path()) };
    let mut store = open(cfg.clone(), &fx);
    store.open_batch(first_batch(&fx.ids, 1_200)).unwrap();
    scripted(&mut store, &fx);
    let before = store.state().clone();
    drop(store);
    assert!(dir.path().join(SNAPSHOT_FILE).exists());

    let from_snapshot = open(cfg.clone(), &fx);
    assert_eq!(from_snapshot.state(), &before);
    drop(from_snapshot);
    std::fs::remove_file(dir.path().join(SNAPSHOT_FILE)).unwrap();
    let from_journal = open(cfg, &fx);
    assert_eq!(from_journal.state(), &before);
}

#[test]
fn journal_never_holds_two_final_labels_for_a_tweet() {
    let fx = fixture(1_500, 13);
    let dir = tempfile::tempdir().unwrap();
    let mut store = open(config(dir.path()), &fx);
    store.open_batch(first_batch(&fx.ids, 1_200)).unwrap();
    scripted(&mut store, &fx);
    drop(store);

    let bytes = std::fs::read(dir.path().join(JOURNAL_FILE)).unwrap();
    let (lines, torn) = parse_journal(&bytes).unwrap();
    assert_eq!(torn, 0);
    let pool = annopipe::corpus::UnlabeledPool::new(annopipe::corpus::Lang::En, fx.ids.iter().cloned());
    let mut state = PipelineState::new(pool, annopipe::qc::QcPlan::default()).unwrap();
    let mut relabeled = BTreeSet::new();
    for line in &lines {
        if let Event::Labeled { record } = &line.event {
            assert!(!state.labels.contains_key(&record.tweet_id), "second final label for {}", record.tweet_id);
            if state.lots.requeued("ann").contains(&record.tweet_id) {
                relabeled.insert(record.tweet_id.clone());
            }
        }
        state.apply(&line.event).unwrap();
    }
    assert_eq!(relabeled.len(), 30);
}

#[test]
fn initial_batches_open_once() {
    let fx = fixture(800, 14);
    let dir = tempfile::tempdir().unwrap();
    let batch_file = dir.path().join("initial.jsonl");
    std::fs::write(&batch_file, write_batch_records(&first_batch(&fx.ids, 300).entries)).unwrap();
    let cfg = annopipe_service::ServiceConfig { initial_batches: vec![batch_file], ..config(&dir.path().join("data")) };
    let store = open(cfg.clone(), &fx);
    assert_eq!(store.state().batches.len(), 1);
    assert_eq!(store.state().pool.len(), 500);
    drop(store);
    let store = open(cfg, &fx);
    assert_eq!(store.state().batches.len(), 1);
    assert_eq!(store.events(), 1);
}

#[test]
fn corrupt_middle_line_refuses_to_start() {
    let fx = fixture(800, 15);
    let dir = tempfile::tempdir().unwrap();
    let mut store = open(config(dir.path()), &fx);
    store.open_batch(first_batch(&fx.ids, 100)).unwrap();
    store.next_tasks("ann", 10).unwrap();
    store.next_tasks("bob", 10).unwrap();
    drop(store);
    let path = dir.path().join(JOURNAL_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{garbage}";
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(Store::open_with(config(dir.path()), fx.corpus.clone()), Err(annopipe_service::ServiceError::Corrupt { line: 2, .. })));
}
