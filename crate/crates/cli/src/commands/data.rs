use annopipe::corpus::synth::{synth_corpus, SynthParams, SynthVocab};
use annopipe::corpus::{ingest as ingest_corpus, split_train_test, write_corpus};
use annopipe::preprocess::{EmoticonTable, Normalizer};
use anyhow::{bail, Result};
use serde::Serialize;

use super::{pct, write, write_json};
use crate::manifest::Touched;
use crate::workspace::Workspace;
use crate::{ExportArgs, IngestArgs, Outcome, SynthArgs};

#[derive(Serialize)]
struct TokenLine<'a> {
    id: &'a str,
    tokens: &'a [String],
}

pub fn ingest(a: &IngestArgs) -> Result<Outcome> {
    let normalizer = match &a.emoticons {
        Some(p) => Normalizer::new(EmoticonTable::load(p)?),
        None => Normalizer::default(),
    };
    let ing = ingest_corpus(&a.input, a.lang.clone(), &normalizer)?;
    let mut touched = Touched { inputs: vec![a.input.clone()], outputs: vec![] };
    touched.inputs.extend(a.emoticons.clone());
    touched.outputs.push(write(&a.out, write_corpus(ing.corpus.tweets()))?);
    if let Some(p) = &a.tokens {
        let mut text = String::new();
        for t in ing.corpus.tweets() {
            let seq = ing.corpus.require_sequence(&t.id)?;
            text.push_str(&serde_json::to_string(&TokenLine { id: &t.id, tokens: &seq.tokens })?);
            text.push('\n');
        }
        touched.outputs.push(write(p, text)?);
    }
    if let Some(p) = &a.report {
        let report = serde_json::json!({
            "kept": ing.corpus.len(),
            "skipped_lang": ing.skipped_lang,
            "errors": ing.errors,
            "warnings": ing.warnings,
        });
        touched.outputs.push(write_json(p, &report)?);
    }
    let summary = format!(
        "kept {} {} tweets, skipped {} in other languages and {} malformed lines",
        ing.corpus.len(),
        a.lang,
        ing.skipped_lang,
        ing.errors.len()
    );
    Ok(Outcome { summary, seed: None, touched })
}

pub fn synth(a: &SynthArgs) -> Result<Outcome> {
    let s = synth_corpus(a.seed, a.n, a.rate, a.lang.clone())?;
    let truth = s.write(&a.out)?;
    let mut touched = Touched { inputs: vec![], outputs: vec![a.out.clone(), truth.clone()] };
    if let Some(p) = &a.keywords_out {
        let vocab = SynthVocab::for_lang(&a.lang, &SynthParams::default());
        let text: String = vocab.keywords().into_iter().map(|k| k + "\n").collect();
        touched.outputs.push(write(p, text)?);
    }
    let summary = format!(
        "wrote {} {} tweets ({} positive, {}) to {}; truth in {}",
        s.tweets.len(),
        a.lang,
        s.positives(),
        pct(s.positives() as f64 / s.tweets.len().max(1) as f64),
        a.out.display(),
        truth.display()
    );
    Ok(Outcome { summary, seed: Some(a.seed), touched })
}

pub fn export(a: &ExportArgs) -> Result<Outcome> {
    let ws = Workspace::open(&a.work)?;
    let state = ws.load_loop()?;
    if state.labeled.is_empty() {
        bail!("the run has no labeled tweets yet");
    }
    let ex = split_train_test(&state.labeled, a.test_fraction, a.seed)?;
    let (train, test) = ex.write(&a.out)?;
    let summary = format!(
        "train {} ({} positive), test {} ({} positive) in {}",
        ex.train.len(),
        pct(ex.train_positive_ratio()),
        ex.test.len(),
        pct(ex.test_positive_ratio()),
        a.out.display()
    );
    Ok(Outcome { summary, seed: Some(a.seed), touched: Touched { inputs: vec![ws.loop_path()], outputs: vec![train, test] } })
}
