mod data;
mod pipeline;
mod sim;

use std::path::{Path, PathBuf};

use annopipe::sampling::ActiveLoopConfig;
use annopipe_service::ServiceConfig;
use anyhow::{Context, Result};

use crate::{Cli, Command, Outcome};

pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    let mut out = match &cli.command {
        Command::Ingest(a) => data::ingest(a),
        Command::Synth(a) => data::synth(a),
        Command::Export(a) => data::export(a),
        Command::BatchInit(a) => pipeline::batch_init(cli, a),
        Command::AnnotateOracle(a) => pipeline::annotate_oracle(cli, a),
        Command::Train(a) => pipeline::train(cli, a),
        Command::SelectNext(a) => pipeline::select_next(cli, a),
        Command::QcSim(a) => pipeline::qc_sim(cli, a),
        Command::Eval(a) => pipeline::eval(a),
        Command::Ablation(a) => sim::ablation(a),
        Command::CollectSim(a) => sim::collect(a),
        Command::Serve(a) => sim::serve(cli, a),
    }?;
    if let Some(cfg) = &cli.config {
        out.touched.inputs.insert(0, cfg.clone());
    }
    Ok(out)
}

fn config(cli: &Cli) -> Result<ServiceConfig> {
    Ok(ServiceConfig::load(cli.config.as_deref())?)
}

fn loop_config(cli: &Cli, seed: u64) -> Result<ActiveLoopConfig> {
    let mut cfg = config(cli)?.active();
    cfg.seed = seed;
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}
