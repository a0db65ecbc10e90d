mod common;

use std::collections::{BTreeMap, BTreeSet};

use annopipe_service::{router, AppState};
use axum::http::StatusCode;
use common::*;
use serde_json::{json, Value};

fn ids(v: &Value) -> Vec<String> {
    v["tasks"].as_array().unwrap().iter().map(|t| t["tweet_id"].as_str().unwrap().to_string()).collect()
}

#[tokio::test]
async fn tasks_are_sticky_and_wait_for_a_batch() {
    let fx = fixture(10_500, 1);
    let dir = tempfile::tempdir().unwrap();
    let mut store = open(config(dir.path()), &fx);
    let empty_dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(open(config(empty_dir.path()), &fx)));
    let (s, v) = call(&app, "GET", "/tasks?annotator=ann&n=20", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "waiting for batch");
    assert!(v["tasks"].as_array().unwrap().is_empty());

    store.open_batch(first_batch(&fx.ids, 10_000)).unwrap();
    let app = router(AppState::new(store));
    let (_, a) = call(&app, "GET", "/tasks?annotator=ann&n=20", None).await;
    assert_eq!(a["status"], "ok");
    assert_eq!(ids(&a).len(), 20);
    assert_eq!(a["tasks"][0]["text"].as_str().unwrap().is_empty(), false);
    let (_, again) = call(&app, "GET", "/tasks?annotator=ann&n=20", None).await;
    assert_eq!(ids(&again), ids(&a));
    let (_, other) = call(&app, "GET", "/tasks?annotator=bob&n=20", None).await;
    let mine: BTreeSet<String> = ids(&a).into_iter().collect();
    assert!(ids(&other).iter().all(|id| !mine.contains(id)));
    let (s, _) = call(&app, "GET", "/tasks?n=20", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn label_submission_contract() {
    let fx = fixture(2_000, 2);
    let dir = tempfile::tempdir().unwrap();
    let mut store = open(config(dir.path()), &fx);
    store.open_batch(first_batch(&fx.ids, 100)).unwrap();
    let app = router(AppState::new(store));
    let (_, v) = call(&app, "GET", "/tasks?annotator=ann&n=3", None).await;
    let t = ids(&v);

    let (s, ack) = call(&app, "POST", "/labels", Some(json!({"annotator_id": "ann", "tweet_id": t[0], "value": 1}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(ack["lot_progress"], 1);
    assert_eq!(ack["lot_size"], 1000);

    let (s, _) = call(&app, "POST", "/labels", Some(json!({"annotator_id": "ann", "tweet_id": t[0], "value": 0}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, stats) = call(&app, "GET", "/stats", None).await;
    assert_eq!(stats["annotators"][0]["labeled"], 1);
    assert_eq!(stats["annotators"][0]["positives"], 1);

    let (s, _) = call(&app, "POST", "/labels", Some(json!({"annotator_id": "bob", "tweet_id": t[1], "value": true}))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = call(&app, "POST", "/labels", Some(json!({"annotator_id": "ann", "tweet_id": "nope", "value": true}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/labels", Some(json!({"annotator_id": "ann", "tweet_id": t[1]}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/labels", Some(json!({"annotator_id": "ann", "tweet_id": t[1], "value": 3}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, ack) = call(&app, "POST", "/labels", Some(json!({"annotator_id": "ann", "tweet_id": t[1], "unsure": true}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(ack["discussion"], true);
    assert_eq!(ack["lot_progress"], 2);
    let (_, d) = call(&app, "GET", "/discussion", None).await;
    assert_eq!(d[0]["tweet_id"], t[1].as_str());
    let (s, _) = call(&app, "POST", &format!("/discussion/{}", t[1]), Some(json!({"value": 0, "note": "no target"}))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, d) = call(&app, "GET", "/discussion", None).await;
    assert!(d.as_array().unwrap().is_empty());
    let (s, _) = call(&app, "POST", &format!("/discussion/{}", t[1]), Some(json!({"value": 1}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

async fn label_lot(app: &axum::Router, ann: &str, fx: &Fixture) -> String {
    let mut closed = None;
    while closed.is_none() {
        let (_, v) = call(app, "GET", &format!("/tasks?annotator={ann}&n=250"), None).await;
        for id in ids(&v) {
            let body = json!({"annotator_id": ann, "tweet_id": id, "value": fx.truth[&id], "timestamp": 1});
            let (s, ack) = call(app, "POST", "/labels", Some(body)).await;
            assert_eq!(s, StatusCode::CREATED);
            if let Some(l) = ack["lot_closed"].as_str() {
                closed = Some(l.to_string());
                break;
            }
        }
    }
    closed.unwrap()
}

fn verdicts(sample: &Value, wrong: usize) -> Value {
    let mut m = BTreeMap::new();
    for (i, item) in sample["items"].as_array().unwrap().iter().enumerate() {
        m.insert(item["tweet_id"].as_str().unwrap().to_string(), if i < wrong { "erroneous" } else { "correct" });
    }
    json!({ "verdicts": m, "note": "check the target question first", "timestamp": 50 })
}

#[tokio::test]
async fn lot_review_boundary_and_requeue() {
    let fx = fixture(2_600, 3);
    let dir = tempfile::tempdir().unwrap();
    let mut store = open(config(dir.path()), &fx);
    store.open_batch(first_batch(&fx.ids, 2_500)).unwrap();
    let app = router(AppState::new(store));

    let (_, v) = call(&app, "GET", "/tasks?annotator=ann&n=1", None).await;
    let first = ids(&v)[0].clone();
    let body = json!({"annotator_id": "ann", "tweet_id": first, "value": fx.truth[&first]});
    call(&app, "POST", "/labels", Some(body)).await;
    let (s, _) = call(&app, "GET", "/lots/ann-lot0001/sample", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, "GET", "/lots/ghost/sample", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let lot = label_lot(&app, "ann", &fx).await;
    assert_eq!(lot, "ann-lot0001");
    let (_, sample) = call(&app, "GET", &format!("/lots/{lot}/sample"), None).await;
    assert_eq!(sample["items"].as_array().unwrap().len(), 80);
    assert_eq!(sample["accept_max"], 7);
    let (_, again) = call(&app, "GET", &format!("/lots/{lot}/sample"), None).await;
    assert_eq!(again, sample);

    let mut partial = verdicts(&sample, 0);
    let first_key = partial["verdicts"].as_object().unwrap().keys().next().unwrap().clone();
    partial["verdicts"].as_object_mut().unwrap().remove(&first_key);
    let (s, _) = call(&app, "POST", &format!("/lots/{lot}/verdicts"), Some(partial)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, out) = call(&app, "POST", &format!("/lots/{lot}/verdicts"), Some(verdicts(&sample, 8))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(out["decision"], "rejected");
    assert_eq!(out["requeued"], 1000);
    let (s, _) = call(&app, "POST", &format!("/lots/{lot}/verdicts"), Some(verdicts(&sample, 0))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (_, v) = call(&app, "GET", "/tasks?annotator=ann&n=5", None).await;
    assert!(v["tasks"].as_array().unwrap().iter().all(|t| t["state"] == "requeued"));
    assert_eq!(v["notes"][0]["text"], "check the target question first");
    let (_, stats) = call(&app, "GET", "/stats", None).await;
    assert_eq!(stats["tasks_remaining"], 2_500);

    // The relabelled tweets form the second lot, which passes at 7.
    let lot2 = label_lot(&app, "ann", &fx).await;
    assert_eq!(lot2, "ann-lot0002");
    let (_, sample) = call(&app, "GET", &format!("/lots/{lot2}/sample"), None).await;
    let (_, out) = call(&app, "POST", &format!("/lots/{lot2}/verdicts"), Some(verdicts(&sample, 7))).await;
    assert_eq!(out["decision"], "accepted");
    assert_eq!(out["requeued"], 0);
    let (_, lots) = call(&app, "GET", "/lots", None).await;
    let statuses: Vec<&str> = lots.as_array().unwrap().iter().map(|l| l["status"].as_str().unwrap()).collect();
    assert_eq!(statuses, vec!["rejected", "accepted"]);
}

#[tokio::test]
async fn pipeline_next_batch_stats_and_export() {
    let fx = fixture(1_500, 4);
    let dir = tempfile::tempdir().unwrap();
    let mut store = open(config(dir.path()), &fx);
    store.open_batch(first_batch(&fx.ids, 400)).unwrap();
    let empty_dir = tempfile::tempdir().unwrap();
    let empty = router(AppState::new(open(config(empty_dir.path()), &fx)));
    let (s, v) = call(&empty, "POST", "/pipeline/next-batch", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("no batch"));

    let list = store.next_tasks("ann", 400).unwrap();
    for t in &list.tasks[..388] {
        let sub = annopipe_service::store::LabelSubmission {
            annotator_id: "ann".into(),
            tweet_id: t.tweet_id.clone(),
            value: Some(fx.truth[&t.tweet_id]),
            unsure: false,
        };
        store.submit_label(sub, 10).unwrap();
    }
    let app = router(AppState::new(store));
    let (s, v) = call(&app, "POST", "/pipeline/next-batch", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["remaining"], 12);
    assert!(v["error"].as_str().unwrap().contains("12 remaining"));

    for t in &list.tasks[388..] {
        let body = json!({"annotator_id": "ann", "tweet_id": t.tweet_id, "value": fx.truth[&t.tweet_id]});
        call(&app, "POST", "/labels", Some(body)).await;
    }
    let (s, b) = call(&app, "POST", "/pipeline/next-batch", None).await;
    assert_eq!(s, StatusCode::CREATED, "{b}");
    assert_eq!(b["batch_id"], "en-0002");
    let size = b["size"].as_u64().unwrap();
    assert!(size >= 50 && size <= 250);

    let (_, stats) = call(&app, "GET", "/stats", None).await;
    let batches = stats["batches"].as_array().unwrap();
    assert_eq!(batches.len(), 2);
    let pos = fx.ids[..400].iter().filter(|id| fx.truth[*id]).count();
    assert!((batches[0]["positive_ratio"].as_f64().unwrap() - pos as f64 / 400.0).abs() < 1e-12);
    assert_eq!(batches[1]["labeled"], 0);
    assert_eq!(stats["pool_remaining"].as_u64().unwrap(), 1_100 - size);

    let (s, ex) = call(&app, "GET", "/export?test_fraction=0.25", None).await;
    assert_eq!(s, StatusCode::OK, "{ex}");
    assert_eq!(ex["test"], 100);
    assert_eq!(ex["train"], 300);
    let train = std::fs::read_to_string(ex["train_path"].as_str().unwrap()).unwrap();
    assert_eq!(annopipe::corpus::parse_label_csv(&train).unwrap().len(), 300);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_duplicates_store_one_label() {
    let fx = fixture(1_000, 5);
    let dir = tempfile::tempdir().unwrap();
    let mut store = open(config(dir.path()), &fx);
    store.open_batch(first_batch(&fx.ids, 200)).unwrap();
    let app = router(AppState::new(store));
    let (_, v) = call(&app, "GET", "/tasks?annotator=ann&n=50", None).await;
    let t = ids(&v);
    let mut handles = Vec::new();
    for round in 0..3 {
        for id in &t {
            let app = app.clone();
            let body = json!({"annotator_id": "ann", "tweet_id": id, "value": round % 2 == 0});
            handles.push(tokio::spawn(async move { call(&app, "POST", "/labels", Some(body)).await.0 }));
        }
    }
    let mut created = 0;
    for h in handles {
        match h.await.unwrap() {
            StatusCode::CREATED => created += 1,
            s => assert_eq!(s, StatusCode::CONFLICT),
        }
    }
    assert_eq!(created, 50);
    let (_, stats) = call(&app, "GET", "/stats", None).await;
    assert_eq!(stats["annotators"][0]["labeled"], 50);
}
