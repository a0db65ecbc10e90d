//! Headless driver for every pipeline stage.

pub mod commands;
pub mod manifest;
pub mod workspace;

use std::path::PathBuf;

use annopipe::corpus::Lang;
use anyhow::Result;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::manifest::{digests, strip_manifest_flag, RunManifest, RunRecord, Touched};

#[derive(Debug, Parser)]
#[command(name = "annopipe", version, about = "Active-learning annotation pipeline", propagate_version = true)]
pub struct Cli {
    /// Service and model settings (TOML). `ANNOPIPE_*` variables override it.
    #[arg(long, global = true, env = "ANNOPIPE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Append a record of this command, its seed and file digests here.
    #[arg(long, global = true, env = "ANNOPIPE_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw tweet dump, keep one language, write the clean corpus.
    Ingest(IngestArgs),
    /// Generate a seeded synthetic corpus and its hidden truth sidecar.
    Synth(SynthArgs),
    /// Start a run with a random preliminary batch, or (with --method) add
    /// the keyword- or model-based initial batch.
    BatchInit(BatchInitArgs),
    /// Label the pending batch from a truth file.
    AnnotateOracle(AnnotateArgs),
    /// Fit the committee and combiner and save checkpoints.
    Train(TrainArgs),
    /// Select the next batch by committee disagreement.
    SelectNext(SelectArgs),
    /// Review closed lots against a truth file, or simulate lot acceptance.
    QcSim(QcSimArgs),
    /// Score saved models on a labeled test file.
    Eval(EvalArgs),
    /// Compare training-set additions over repeated splits.
    Ablation(AblationArgs),
    /// Run the collection scheduler against a simulated feed.
    CollectSim(CollectArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Write the stratified train/test split of a run's labels.
    Export(ExportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Synth(_) => "synth",
            Command::BatchInit(_) => "batch-init",
            Command::AnnotateOracle(_) => "annotate-oracle",
            Command::Train(_) => "train",
            Command::SelectNext(_) => "select-next",
            Command::QcSim(_) => "qc-sim",
            Command::Eval(_) => "eval",
            Command::Ablation(_) => "ablation",
            Command::CollectSim(_) => "collect-sim",
            Command::Serve(_) => "serve",
            Command::Export(_) => "export",
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "en")]
    pub lang: Lang,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON report of skipped and malformed lines.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Normalized token sequences, one JSON line per tweet.
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    /// Tab-separated emoticon table replacing the bundled one.
    #[arg(long)]
    pub emoticons: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.01)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "en")]
    pub lang: Lang,
    /// Corpus file; the truth goes next to it as `<stem>.truth.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a keyword list for keyword-based initial sampling.
    #[arg(long)]
    pub keywords_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitMethod {
    Keyword,
    Model,
}

#[derive(Debug, Args)]
pub struct BatchInitArgs {
    #[arg(long)]
    pub work: PathBuf,
    /// Corpus for a new run.
    #[arg(long, required_unless_present = "method", conflicts_with = "method")]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "en")]
    pub lang: Lang,
    /// Size of the preliminary random batch.
    #[arg(long, default_value_t = 2000)]
    pub size: usize,
    #[arg(long, value_enum)]
    pub method: Option<InitMethod>,
    #[arg(long, required_if_eq("method", "keyword"))]
    pub keywords: Option<PathBuf>,
    /// Tweets drawn by the keyword or model method.
    #[arg(long, default_value_t = 8000)]
    pub method_n: usize,
    /// Random tweets added to the initial batch.
    #[arg(long, default_value_t = 2000)]
    pub random_n: usize,
    /// Probability window of the model method.
    #[arg(long, default_value_t = 0.2)]
    pub min_prob: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub work: PathBuf,
    /// `id,label` CSV with the true labels.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value = "oracle")]
    pub annotator: String,
    /// Chance of flipping each label.
    #[arg(long, default_value_t = 0.0)]
    pub error_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["work", "labels"])))]
pub struct TrainArgs {
    /// Train on the labels of a run.
    #[arg(long)]
    pub work: Option<PathBuf>,
    /// Train on an `id,label` CSV over `--corpus`.
    #[arg(long, requires = "corpus")]
    pub labels: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "en")]
    pub lang: Lang,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub work: PathBuf,
    /// Defaults to the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_kl: Option<usize>,
    #[arg(long)]
    pub n_rand: Option<usize>,
    #[arg(long)]
    pub gate: Option<f64>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["work", "error_rate"])))]
pub struct QcSimArgs {
    /// Review every closed lot of a run.
    #[arg(long, requires = "truth")]
    pub work: Option<PathBuf>,
    #[arg(long, requires = "work")]
    pub truth: Option<PathBuf>,
    /// Error rate of the annotator relabeling a rejected lot.
    #[arg(long, default_value_t = 0.0, requires = "work")]
    pub relabel_error_rate: f64,
    /// Simulate lots from an annotator with this true error rate.
    #[arg(long)]
    pub error_rate: Option<f64>,
    #[arg(long, default_value_t = 10_000, requires = "error_rate")]
    pub lots: usize,
    /// JSON report of the simulation.
    #[arg(long, requires = "error_rate")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "en")]
    pub lang: Lang,
    /// Committee manifest, or the directory holding it.
    #[arg(long)]
    pub models: PathBuf,
    /// `id,label` CSV.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    /// Use this corpus instead of a synthetic one.
    #[arg(long, requires = "truth")]
    pub corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 50_000, conflicts_with = "corpus")]
    pub n: usize,
    #[arg(long, default_value_t = 0.01, conflicts_with = "corpus")]
    pub rate: f64,
    #[arg(long, default_value = "en")]
    pub lang: Lang,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 8000)]
    pub base_train: usize,
    #[arg(long, default_value_t = 2000)]
    pub add_n: usize,
    #[arg(long, default_value_t = 2000)]
    pub test_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Rate,
    RoundRobin,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Scenario TOML.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario duration.
    #[arg(long)]
    pub hours: Option<f64>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Rate)]
    pub policy: PolicyArg,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "collect")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub work: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// What a command reports back.
#[derive(Debug, Default)]
pub struct Outcome {
    pub summary: String,
    pub seed: Option<u64>,
    pub touched: Touched,
}

/// Runs one command and, when asked, records it in the run manifest.
/// `argv` is the full command line including the program name.
pub fn run(cli: Cli, argv: &[String]) -> Result<Outcome> {
    let name = cli.command.name();
    let manifest = cli.manifest.clone();
    let out = commands::dispatch(&cli)?;
    if let Some(path) = manifest {
        let record = RunRecord {
            command: name.to_string(),
            args: strip_manifest_flag(argv.get(1..).unwrap_or_default()),
            seed: out.seed,
            inputs: digests(&out.touched.inputs)?,
            outputs: digests(&out.touched.outputs)?,
        };
        RunManifest::append(&path, record)?;
    }
    Ok(out)
}
