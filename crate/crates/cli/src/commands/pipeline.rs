use std::collections::{BTreeMap, BTreeSet};

use annopipe::checkpoint::{load_stack, save_stack, MANIFEST_FILE};
use annopipe::classify::{examples_for, feature_hash, Scorer};
use annopipe::corpus::{
    ingest, parse_label_csv, write_batch_records, write_label_csv, Batch, BatchEntry, LabeledPool, StrategyTag, UnlabeledPool,
    Verdict,
};
use annopipe::ensemble::{fit_stack, STACK_FOLDS};
use annopipe::evaluation::{compute_metrics, MetricReport};
use annopipe::oracle::OracleAnnotator;
use annopipe::preprocess::Normalizer;
use annopipe::qc::{append_audit, simulate_acceptance, Decision, LotTracker};
use annopipe::sampling::{
    assemble_initial_batch, draw_keyword, draw_model, draw_random, random_sample, select_batch, IterationLog, KeywordList, LoopState,
    PendingBatch, SamplingWarning,
};
use anyhow::{bail, Context, Result};
use serde::Serialize;

use super::{config, loop_config, pct, write, write_json};
use crate::manifest::Touched;
use crate::workspace::{Workspace, WorkspaceInfo};
use crate::{AnnotateArgs, BatchInitArgs, Cli, EvalArgs, InitMethod, Outcome, QcSimArgs, SelectArgs, TrainArgs};

/// Labels start at this UTC second and advance 30 s each.
const CLOCK_START: i64 = 1_538_352_000;
const CLOCK_STEP: i64 = 30;

fn open_pending(ws: &Workspace, state: &mut LoopState, batch: Batch, warnings: Vec<SamplingWarning>) -> Result<std::path::PathBuf> {
    let path = super::write(&ws.batch_path(&batch.id), write_batch_records(&batch.entries))?;
    state.pending = Some(PendingBatch { batch, received: Vec::new(), warnings, labeled_before: state.labeled.len() });
    state.batches_started += 1;
    ws.save_loop(state)?;
    Ok(path)
}

fn describe(batch: &Batch, warnings: &[SamplingWarning]) -> String {
    let parts: Vec<String> = batch.count_by_strategy().iter().map(|(tag, n)| format!("{n} {tag:?}").to_lowercase()).collect();
    let mut s = format!("selected {} ({} tweets: {})", batch.id, batch.len(), parts.join(", "));
    for w in warnings {
        s.push_str(&format!("\nwarning: {w:?}"));
    }
    s
}

pub fn batch_init(cli: &Cli, a: &BatchInitArgs) -> Result<Outcome> {
    match a.method {
        None => preliminary(a),
        Some(m) => initial(cli, a, m),
    }
}

fn preliminary(a: &BatchInitArgs) -> Result<Outcome> {
    let corpus_path = a.corpus.clone().expect("clap requires --corpus without --method");
    let ws = Workspace::create(&a.work, WorkspaceInfo { corpus: corpus_path.clone(), lang: a.lang.clone() })?;
    let corpus = ws.corpus()?;
    let mut pool = UnlabeledPool::from_corpus(a.lang.clone(), &corpus);
    let sel = random_sample(&mut pool, a.size, a.seed);
    let batch = Batch::new(a.lang.clone(), 1, sel.entries);
    let mut state = LoopState::new(pool, LabeledPool::new(a.lang.clone()));
    let summary = describe(&batch, &sel.warnings);
    let batch_path = open_pending(&ws, &mut state, batch, sel.warnings)?;
    Ok(Outcome {
        summary,
        seed: Some(a.seed),
        touched: Touched { inputs: vec![corpus_path], outputs: vec![ws.info_path(), ws.loop_path(), batch_path] },
    })
}

fn initial(cli: &Cli, a: &BatchInitArgs, method: InitMethod) -> Result<Outcome> {
    let ws = Workspace::open(&a.work)?;
    let mut state = ws.load_loop()?;
    if let Some(p) = &state.pending {
        bail!("batch {} is still being annotated", p.batch.id);
    }
    if state.labeled.stage() != 1 {
        bail!("the initial batch follows the labeled preliminary batch; this run has {} labeled batches", state.labeled.stage());
    }
    let corpus = ws.corpus()?;
    let mut inputs = vec![ws.loop_path(), ws.info.corpus.clone()];
    let drawn = match method {
        InitMethod::Keyword => {
            let path = a.keywords.as_ref().expect("clap requires --keywords for the keyword method");
            inputs.push(path.clone());
            let kw = KeywordList::load(ws.info.lang.clone(), path, &Normalizer::default())?;
            draw_keyword(&state.pool, &corpus, &kw, a.method_n, a.seed)?
        }
        InitMethod::Model => {
            let cfg = loop_config(cli, a.seed)?;
            let rows: Vec<(String, bool)> = state.labeled.examples().map(|(id, y)| (id.to_string(), y)).collect();
            let examples = examples_for(&rows, &corpus)?;
            let stack = fit_stack(&examples, &cfg.specs, &cfg.train.with_seed(a.seed), &cfg.ensemble, STACK_FOLDS)?;
            draw_model(&state.pool, &corpus, &stack.scorer(), (a.min_prob, a.max_prob), a.method_n, a.seed)?
        }
    };
    let taken: BTreeSet<String> = drawn.entries.iter().map(|e| e.tweet_id.clone()).collect();
    let random = draw_random(&state.pool, a.random_n, a.seed ^ 0x5eed_2a2d, &taken)
        .into_iter()
        .map(|id| BatchEntry::new(id, StrategyTag::Random))
        .collect();
    let mut warnings = drawn.warnings;
    let sel = assemble_initial_batch(&mut state.pool, drawn.entries, random, a.seed)?;
    warnings.extend(sel.warnings);
    let batch = Batch::new(ws.info.lang.clone(), state.labeled.stage() + 1, sel.entries);
    let summary = describe(&batch, &warnings);
    let batch_path = open_pending(&ws, &mut state, batch, warnings)?;
    Ok(Outcome { summary, seed: Some(a.seed), touched: Touched { inputs, outputs: vec![ws.loop_path(), batch_path] } })
}

pub fn annotate_oracle(cli: &Cli, a: &AnnotateArgs) -> Result<Outcome> {
    let ws = Workspace::open(&a.work)?;
    let mut state = ws.load_loop()?;
    let pending = state.pending.take().context("no batch is waiting for labels")?;
    let plan = config(cli)?.qc;
    let mut lots = ws.load_lots(|| Ok(LotTracker::new(plan)?))?;
    let batch = &pending.batch;
    let start = CLOCK_START + CLOCK_STEP * state.labeled.len() as i64;
    let mut oracle = OracleAnnotator::load(a.annotator.clone(), &a.truth)?
        .with_errors(a.error_rate, a.seed ^ batch.k as u64)
        .with_clock(start, CLOCK_STEP);
    let done: BTreeSet<&str> = pending.received.iter().map(|r| r.tweet_id.as_str()).collect();
    let mut records = pending.received.clone();
    for id in batch.tweet_ids().filter(|id| !done.contains(id)) {
        let r = oracle.label(id)?;
        lots.record(r.clone());
        records.push(r);
    }
    let positives = records.iter().filter(|r| r.value == Some(true)).count();
    let rows: Vec<(String, bool)> = records.iter().map(|r| (r.tweet_id.clone(), r.value.unwrap_or(false))).collect();
    let labels_path = write(&ws.labels_path(&batch.id), write_label_csv(&rows))?;
    let corpus = ws.corpus()?;
    state.labeled.append_batch(batch, records, &corpus)?;
    state.log.push(IterationLog {
        batch_id: batch.id.clone(),
        k: batch.k,
        labeled_before: pending.labeled_before,
        selected: batch.len(),
        by_strategy: batch.count_by_strategy(),
        positives,
        warnings: pending.warnings.clone(),
    });
    ws.save_loop(&state)?;
    ws.save_lots(&lots)?;
    let summary = format!(
        "labeled {} tweets of {}: {} positive ({}); {} lots awaiting review",
        batch.len(),
        batch.id,
        positives,
        pct(positives as f64 / batch.len().max(1) as f64),
        lots.awaiting_review().len()
    );
    Ok(Outcome {
        summary,
        seed: Some(a.seed),
        touched: Touched { inputs: vec![a.truth.clone()], outputs: vec![ws.loop_path(), ws.lots_path(), labels_path] },
    })
}

pub fn train(cli: &Cli, a: &TrainArgs) -> Result<Outcome> {
    let cfg = loop_config(cli, a.seed)?;
    let (corpus, rows, inputs) = match (&a.work, &a.labels, &a.corpus) {
        (Some(work), _, _) => {
            let ws = Workspace::open(work)?;
            let state = ws.load_loop()?;
            let rows = state.labeled.examples().map(|(id, y)| (id.to_string(), y)).collect();
            (ws.corpus()?, rows, vec![ws.loop_path(), ws.info.corpus.clone()])
        }
        (None, Some(labels), Some(corpus)) => {
            let ing = ingest(corpus, a.lang.clone(), &Normalizer::default())?;
            let rows = parse_label_csv(&std::fs::read_to_string(labels)?)?;
            (ing.corpus, rows, vec![labels.clone(), corpus.clone()])
        }
        _ => unreachable!("clap enforces the source group"),
    };
    let examples = examples_for(&rows, &corpus)?;
    let stack = fit_stack(&examples, &cfg.specs, &cfg.train.with_seed(a.seed), &cfg.ensemble, STACK_FOLDS)?;
    let manifest = save_stack(&a.out, &stack)?;
    let positives = rows.iter().filter(|(_, y)| *y).count();
    let summary = format!(
        "trained {} members and the combiner on {} tweets ({} positive); manifest {}",
        stack.members.len(),
        rows.len(),
        positives,
        manifest.display()
    );
    Ok(Outcome { summary, seed: Some(a.seed), touched: Touched { inputs, outputs: vec![a.out.clone()] } })
}

pub fn select_next(cli: &Cli, a: &SelectArgs) -> Result<Outcome> {
    let base = config(cli)?;
    let seed = a.seed.unwrap_or(base.seed);
    let mut cfg = loop_config(cli, seed)?;
    if let Some(n) = a.n_kl {
        cfg.qbc.n_kl = n;
    }
    if let Some(n) = a.n_rand {
        cfg.qbc.n_rand = n;
    }
    if let Some(g) = a.gate {
        cfg.qbc.gate_threshold = g;
    }
    let ws = Workspace::open(&a.work)?;
    let mut state = ws.load_loop()?;
    if let Some(p) = &state.pending {
        bail!("batch {} is still being annotated", p.batch.id);
    }
    if state.labeled.stage() < 2 {
        bail!("committee selection starts after the preliminary and initial batches; run batch-init first");
    }
    let corpus = ws.corpus()?;
    let Some((batch, warnings)) = select_batch(&mut state.pool, &state.labeled, &corpus, &cfg, None)? else {
        bail!("nothing selected: the pool is empty or no tweet passed the disagreement gate");
    };
    let summary = describe(&batch, &warnings);
    let batch_path = open_pending(&ws, &mut state, batch, warnings)?;
    Ok(Outcome {
        summary,
        seed: Some(seed),
        touched: Touched { inputs: vec![ws.info.corpus.clone()], outputs: vec![ws.loop_path(), batch_path] },
    })
}

#[derive(Serialize)]
struct SimReport {
    error_rate: f64,
    lots: usize,
    lot_size: usize,
    sample_size: usize,
    accept_max: usize,
    seed: u64,
    accepted_fraction: f64,
    binomial_tail: f64,
}

pub fn qc_sim(cli: &Cli, a: &QcSimArgs) -> Result<Outcome> {
    let plan = config(cli)?.qc;
    if let Some(e) = a.error_rate {
        if !(0.0..=1.0).contains(&e) {
            bail!("--error-rate must lie in [0, 1]");
        }
        let report = SimReport {
            error_rate: e,
            lots: a.lots,
            lot_size: plan.lot_size,
            sample_size: plan.sample_size,
            accept_max: plan.accept_max,
            seed: a.seed,
            accepted_fraction: simulate_acceptance(e, a.lots, &plan, a.seed)?,
            binomial_tail: plan.acceptance_probability(e),
        };
        let mut touched = Touched::default();
        if let Some(p) = &a.out {
            touched.outputs.push(write_json(p, &report)?);
        }
        let summary = format!(
            "accepted {} of {} simulated lots at error rate {e}; binomial tail {:.4}",
            pct(report.accepted_fraction),
            a.lots,
            report.binomial_tail
        );
        return Ok(Outcome { summary, seed: Some(a.seed), touched });
    }
    review_lots(a, plan)
}

fn review_lots(a: &QcSimArgs, plan: annopipe::qc::QcPlan) -> Result<Outcome> {
    let work = a.work.as_ref().expect("clap requires --work or --error-rate");
    let truth_path = a.truth.as_ref().expect("clap requires --truth with --work");
    let ws = Workspace::open(work)?;
    let mut state = ws.load_loop()?;
    let mut lots = ws.load_lots(|| Ok(LotTracker::new(plan)?))?;
    let truth: BTreeMap<String, bool> = parse_label_csv(&std::fs::read_to_string(truth_path)?)?.into_iter().collect();
    let mut relabelers: BTreeMap<String, OracleAnnotator> = BTreeMap::new();
    let (mut accepted, mut rejected, mut relabeled) = (0, 0, 0);
    while let Some(lot_id) = lots.awaiting_review().first().map(|s| s.to_string()) {
        let seed = feature_hash(lot_id.as_bytes(), a.seed);
        let sample = lots.review_sample(&lot_id, seed)?.clone();
        let lot = lots.lot(&lot_id).expect("lot under review exists");
        let annotator = lot.annotator_id.clone();
        let given: BTreeMap<&str, Option<bool>> = lot.records.iter().map(|r| (r.tweet_id.as_str(), r.value)).collect();
        let mut verdicts = BTreeMap::new();
        for id in &sample.tweet_ids {
            let t = truth.get(id).with_context(|| format!("no truth for `{id}`"))?;
            let ok = given.get(id.as_str()).copied().flatten() == Some(*t);
            verdicts.insert(id.clone(), if ok { Verdict::Correct } else { Verdict::Erroneous });
        }
        let stamp = lot.records.iter().map(|r| r.timestamp).max().unwrap_or(CLOCK_START);
        let review = lots.submit_verdicts(&lot_id, &verdicts, stamp)?;
        append_audit(&ws.audit_path(), &review.audit)?;
        match review.decision {
            Decision::Accepted => accepted += 1,
            Decision::Rejected => rejected += 1,
        }
        let oracle = relabelers.entry(annotator.clone()).or_insert_with(|| {
            OracleAnnotator::from_rows(annotator.clone(), truth.iter().map(|(k, v)| (k.clone(), *v)))
                .with_errors(a.relabel_error_rate, feature_hash(annotator.as_bytes(), a.seed))
        });
        *oracle = oracle.clone().with_clock(stamp, CLOCK_STEP);
        for id in &review.requeued {
            let r = oracle.label(id)?;
            state.labeled.relabel(r.clone())?;
            lots.record(r);
            relabeled += 1;
        }
    }
    ws.save_loop(&state)?;
    ws.save_lots(&lots)?;
    let open = lots.lots().filter(|l| l.status == annopipe::qc::LotStatus::Open).count();
    let summary =
        format!("reviewed {} lots: {accepted} accepted, {rejected} rejected, {relabeled} tweets relabeled; {open} lots still open", accepted + rejected);
    let mut outputs = vec![ws.loop_path(), ws.lots_path()];
    if ws.audit_path().exists() {
        outputs.push(ws.audit_path());
    }
    Ok(Outcome { summary, seed: Some(a.seed), touched: Touched { inputs: vec![truth_path.clone()], outputs } })
}

#[derive(Serialize)]
struct EvalReport {
    test_size: usize,
    ensemble: MetricReport,
    members: BTreeMap<String, MetricReport>,
}

pub fn eval(a: &EvalArgs) -> Result<Outcome> {
    let manifest = if a.models.is_dir() { a.models.join(MANIFEST_FILE) } else { a.models.clone() };
    let stack = load_stack(&manifest)?;
    let corpus = ingest(&a.corpus, a.lang.clone(), &Normalizer::default())?.corpus;
    let rows = parse_label_csv(&std::fs::read_to_string(&a.test)?)?;
    let ids = stack.committee.member_ids().to_vec();
    let mut member_preds = vec![Vec::with_capacity(rows.len()); ids.len()];
    let mut preds = Vec::with_capacity(rows.len());
    let scorer = stack.scorer();
    for (id, _) in &rows {
        let seq = corpus.require_sequence(id)?;
        for (m, p) in stack.committee.member_probs(seq)?.into_iter().enumerate() {
            member_preds[m].push(p >= 0.5);
        }
        preds.push(scorer.predict_proba(seq)? >= 0.5);
    }
    let labels: Vec<bool> = rows.iter().map(|(_, y)| *y).collect();
    let report = EvalReport {
        test_size: rows.len(),
        ensemble: compute_metrics(&preds, &labels)?,
        members: ids.iter().cloned().zip(member_preds.iter().map(|p| compute_metrics(p, &labels))).map(|(id, m)| Ok((id, m?))).collect::<Result<_>>()?,
    };
    let mut summary = format!("ensemble: macro-F1 {:.4}, h-F1 {:.4} on {} tweets", report.ensemble.macro_f1(), report.ensemble.h_f1(), rows.len());
    for (id, m) in &report.members {
        summary.push_str(&format!("\n{id}: macro-F1 {:.4}, h-F1 {:.4}", m.macro_f1(), m.h_f1()));
    }
    let mut touched = Touched { inputs: vec![manifest, a.corpus.clone(), a.test.clone()], outputs: vec![] };
    if let Some(p) = &a.out {
        touched.outputs.push(write_json(p, &report)?);
    }
    Ok(Outcome { summary, seed: None, touched })
}
