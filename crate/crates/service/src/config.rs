use std::path::{Path, PathBuf};

use annopipe::classify::{MemberSpec, TrainConfig, DEFAULT_DIM};
use annopipe::corpus::Lang;
use annopipe::ensemble::EnsembleConfig;
use annopipe::qc::QcPlan;
use annopipe::sampling::{ActiveLoopConfig, AnnotationBudget, QbcParams};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Prefix of the environment variables that override file settings.
pub const ENV_PREFIX: &str = "ANNOPIPE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub data_dir: PathBuf,
    /// Line-delimited tweet records.
    pub corpus: PathBuf,
    pub lang: Lang,
    /// Batch record files opened, in order, on the first start.
    pub initial_batches: Vec<PathBuf>,
    pub seed: u64,
    /// Write a snapshot after this many events; 0 disables snapshots.
    pub snapshot_every: u64,
    pub fsync: bool,
    pub test_fraction: f64,
    pub member_dim: u32,
    pub qbc: QbcParams,
    pub qc: QcPlan,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("data"),
            corpus: PathBuf::from("corpus.jsonl"),
            lang: Lang::En,
            initial_batches: Vec::new(),
            seed: 0,
            snapshot_every: 1000,
            fsync: true,
            test_fraction: 0.2,
            member_dim: DEFAULT_DIM,
            qbc: QbcParams::default(),
            qc: QcPlan::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ServiceError> {
    v.parse().map_err(|_| ServiceError::Config(format!("{ENV_PREFIX}{key}: cannot parse `{v}`")))
}

impl ServiceConfig {
    /// Reads the TOML file when given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// `ANNOPIPE_PORT`, `ANNOPIPE_DATA_DIR` and friends, one per scalar field.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        let var = |key: &str| get(&format!("{ENV_PREFIX}{key}"));
        if let Some(v) = var("BIND") {
            self.bind = v;
        }
        if let Some(v) = var("PORT") {
            self.port = parse("PORT", &v)?;
        }
        if let Some(v) = var("DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("CORPUS") {
            self.corpus = v.into();
        }
        if let Some(v) = var("LANG") {
            self.lang = parse("LANG", &v)?;
        }
        if let Some(v) = var("INITIAL_BATCHES") {
            self.initial_batches = v.split(',').filter(|s| !s.is_empty()).map(PathBuf::from).collect();
        }
        if let Some(v) = var("SEED") {
            self.seed = parse("SEED", &v)?;
        }
        if let Some(v) = var("SNAPSHOT_EVERY") {
            self.snapshot_every = parse("SNAPSHOT_EVERY", &v)?;
        }
        if let Some(v) = var("FSYNC") {
            self.fsync = parse("FSYNC", &v)?;
        }
        if let Some(v) = var("TEST_FRACTION") {
            self.test_fraction = parse("TEST_FRACTION", &v)?;
        }
        if let Some(v) = var("MEMBER_DIM") {
            self.member_dim = parse("MEMBER_DIM", &v)?;
        }
        if let Some(v) = var("N_KL") {
            self.qbc.n_kl = parse("N_KL", &v)?;
        }
        if let Some(v) = var("N_RAND") {
            self.qbc.n_rand = parse("N_RAND", &v)?;
        }
        if let Some(v) = var("GATE_THRESHOLD") {
            self.qbc.gate_threshold = parse("GATE_THRESHOLD", &v)?;
        }
        if let Some(v) = var("LOT_SIZE") {
            self.qc.lot_size = parse("LOT_SIZE", &v)?;
        }
        if let Some(v) = var("SAMPLE_SIZE") {
            self.qc.sample_size = parse("SAMPLE_SIZE", &v)?;
        }
        if let Some(v) = var("ACCEPT_MAX") {
            self.qc.accept_max = parse("ACCEPT_MAX", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.qc.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(ServiceError::Config(format!("test_fraction {} not in (0, 1)", self.test_fraction)));
        }
        if self.member_dim == 0 {
            return Err(ServiceError::Config("member_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn active(&self) -> ActiveLoopConfig {
        ActiveLoopConfig {
            specs: MemberSpec::defaults().into_iter().map(|s| s.with_dim(self.member_dim)).collect(),
            train: TrainConfig::sparse(),
            ensemble: EnsembleConfig::default(),
            qbc: self.qbc.clone(),
            budget: AnnotationBudget::default(),
            seed: self.seed,
        }
    }
}
