use annopipe::collector::{run_collection, CollectionResult, Policy, Scenario, SimulatedFeed, VirtualClock, DEFAULT_THRESHOLD};
use annopipe::corpus::synth::synth_corpus;
use annopipe::corpus::{ingest, parse_label_csv, write_corpus, Corpus};
use annopipe::evaluation::{ablation_run, AblationConfig};
use annopipe::preprocess::Normalizer;
use anyhow::{bail, Result};
use serde::Serialize;

use super::{config, write, write_json};
use crate::manifest::Touched;
use crate::{AblationArgs, Cli, CollectArgs, Outcome, PolicyArg, ServeArgs};

pub fn ablation(a: &AblationArgs) -> Result<Outcome> {
    let mut inputs = Vec::new();
    let (corpus, rows) = match (&a.corpus, &a.truth) {
        (Some(c), Some(t)) => {
            inputs = vec![c.clone(), t.clone()];
            let corpus = ingest(c, a.lang.clone(), &Normalizer::default())?.corpus;
            (corpus, parse_label_csv(&std::fs::read_to_string(t)?)?)
        }
        _ => {
            let s = synth_corpus(a.seed, a.n, a.rate, a.lang.clone())?;
            let rows = s.truth_rows();
            (Corpus::new(s.tweets, &Normalizer::default())?, rows)
        }
    };
    let cfg = AblationConfig {
        base_train: a.base_train,
        add_n: a.add_n,
        test: a.test_n,
        repeats: a.repeats,
        seed: a.seed,
        ..AblationConfig::default()
    };
    let table = ablation_run(&corpus, &rows, &cfg)?;
    table.write(&a.out)?;
    Ok(Outcome {
        summary: table.summary_text(),
        seed: Some(a.seed),
        touched: Touched { inputs, outputs: vec![a.out.join("results.csv"), a.out.join("summary.csv")] },
    })
}

#[derive(Serialize)]
struct YieldReport {
    policy: Policy,
    duration_secs: i64,
    accounts: usize,
    accounts_fetched: usize,
    calls: u64,
    max_calls_per_window: u32,
    budget_per_window: u32,
    #[serde(rename = "yield")]
    yield_count: u64,
    kept: u64,
    baseline_yield: u64,
    yield_ratio: f64,
}

fn simulate(scenario: &Scenario, policy: Policy) -> Result<CollectionResult> {
    let mut feed = SimulatedFeed::new(scenario)?;
    let mut clock = VirtualClock::new(scenario.start_ms);
    let cfg = scenario.collection_config(policy)?;
    Ok(run_collection(&scenario.account_ids(), &mut feed, &mut clock, &cfg)?)
}

pub fn collect(a: &CollectArgs) -> Result<Outcome> {
    let mut scenario = Scenario::load(&a.scenario)?;
    if let Some(h) = a.hours {
        if !(h >= 0.0 && h.is_finite()) {
            bail!("--hours must be a non-negative number");
        }
        scenario.duration_secs = (h * 3600.0).round() as i64;
    }
    if let Some(s) = a.seed {
        scenario.seed = s;
    }
    scenario.validate()?;
    let policy = match a.policy {
        PolicyArg::Rate => Policy::RateBased { threshold: scenario.threshold.unwrap_or(DEFAULT_THRESHOLD) },
        PolicyArg::RoundRobin => Policy::RoundRobin,
    };
    let res = simulate(&scenario, policy)?;
    let baseline = if policy == Policy::RoundRobin { res.yield_count() } else { simulate(&scenario, Policy::RoundRobin)?.yield_count() };
    let budget = scenario.collection_config(policy)?.budget.calls();
    let report = YieldReport {
        policy,
        duration_secs: scenario.duration_secs,
        accounts: res.states.len(),
        accounts_fetched: res.states.iter().filter(|s| s.fetch_count > 0).count(),
        calls: res.calls(),
        max_calls_per_window: res.telemetry.iter().map(|w| w.calls).max().unwrap_or(0),
        budget_per_window: budget,
        yield_count: res.yield_count(),
        kept: res.telemetry.iter().map(|w| w.kept).sum(),
        baseline_yield: baseline,
        yield_ratio: if baseline == 0 { 0.0 } else { res.yield_count() as f64 / baseline as f64 },
    };
    let outputs = vec![
        write(&a.out.join("telemetry.jsonl"), res.telemetry_jsonl())?,
        write(&a.out.join("corpus.jsonl"), write_corpus(&res.tweets))?,
        write_json(&a.out.join("report.json"), &report)?,
    ];
    let summary = format!(
        "{} calls over {} s (at most {} of {} per window), {} of {} accounts fetched, yield {} = {:.3} x round-robin",
        report.calls,
        report.duration_secs,
        report.max_calls_per_window,
        budget,
        report.accounts_fetched,
        report.accounts,
        report.yield_count,
        report.yield_ratio
    );
    Ok(Outcome { summary, seed: Some(scenario.seed), touched: Touched { inputs: vec![a.scenario.clone()], outputs } })
}

pub fn serve(cli: &Cli, a: &ServeArgs) -> Result<Outcome> {
    let mut cfg = config(cli)?;
    if let Some(p) = a.port {
        cfg.port = p;
    }
    if let Some(d) = &a.data_dir {
        cfg.data_dir = d.clone();
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(annopipe_service::serve(cfg))?;
    Ok(Outcome { summary: "service stopped".into(), ..Outcome::default() })
}
