#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use annopipe::corpus::synth::synth_corpus;
use annopipe::corpus::{Batch, BatchEntry, Corpus, Lang, StrategyTag};
use annopipe::preprocess::Normalizer;
use annopipe::qc::QcPlan;
use annopipe::sampling::QbcParams;
use annopipe_service::{ServiceConfig, Store};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub struct Fixture {
    pub corpus: Arc<Corpus>,
    pub truth: HashMap<String, bool>,
    pub ids: Vec<String>,
}

pub fn fixture(n: usize, seed: u64) -> Fixture {
    let synth = synth_corpus(seed, n, 0.05, Lang::En).unwrap();
    let truth: HashMap<String, bool> = synth.truth_rows().into_iter().collect();
    let ids = synth.tweets.iter().map(|t| t.id.clone()).collect();
    let corpus = Arc::new(Corpus::new(synth.tweets, &Normalizer::default()).unwrap());
    Fixture { corpus, truth, ids }
}

pub fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.to_path_buf(),
        fsync: false,
        snapshot_every: 0,
        member_dim: 1 << 12,
        qbc: QbcParams { n_kl: 200, n_rand: 50, gate_threshold: 0.2 },
        qc: QcPlan::default(),
        seed: 5,
        ..ServiceConfig::default()
    }
}

/// The first `n` ids as one random batch.
pub fn first_batch(ids: &[String], n: usize) -> Batch {
    Batch::new(Lang::En, 1, ids[..n].iter().map(|id| BatchEntry::new(id.clone(), StrategyTag::Random)).collect())
}

pub fn open(cfg: ServiceConfig, fx: &Fixture) -> Store {
    Store::open_with(cfg, Arc::clone(&fx.corpus)).unwrap()
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

/// Fetches and labels tasks with ground truth until none are left.
pub fn label_all(store: &mut Store, annotator: &str, truth: &HashMap<String, bool>, mut ts: i64) -> usize {
    let mut done = 0;
    loop {
        let list = store.next_tasks(annotator, 500).unwrap();
        if list.tasks.is_empty() {
            return done;
        }
        for t in list.tasks {
            let sub = annopipe_service::store::LabelSubmission {
                annotator_id: annotator.into(),
                tweet_id: t.tweet_id.clone(),
                value: Some(truth[&t.tweet_id]),
                unsure: false,
            };
            ts += 1;
            store.submit_label(sub, ts).unwrap();
            done += 1;
        }
    }
}
