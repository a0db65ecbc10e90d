//! On-disk state of a scripted pipeline run.
//!
//! ```text
//! <work>/workspace.json   corpus path and language
//! <work>/loop.json        pool, labeled set, pending batch, batch log
//! <work>/lots.json        QC lot tracker
//! <work>/audit.jsonl      supervisor decisions
//! <work>/batches/<id>.tsv selected batches
//! <work>/labels/<id>.csv  oracle labels per batch
//! ```

use std::path::{Path, PathBuf};

use annopipe::corpus::{ingest, Corpus, Lang};
use annopipe::preprocess::Normalizer;
use annopipe::qc::LotTracker;
use annopipe::sampling::LoopState;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceInfo {
    pub corpus: PathBuf,
    pub lang: Lang,
}

pub struct Workspace {
    pub dir: PathBuf,
    pub info: WorkspaceInfo,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(value)?)?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl Workspace {
    pub fn create(dir: &Path, info: WorkspaceInfo) -> Result<Self> {
        if dir.join("workspace.json").exists() {
            bail!("{} already holds a pipeline run", dir.display());
        }
        std::fs::create_dir_all(dir.join("batches"))?;
        std::fs::create_dir_all(dir.join("labels"))?;
        write_json(&dir.join("workspace.json"), &info)?;
        Ok(Self { dir: dir.to_path_buf(), info })
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("workspace.json");
        if !path.exists() {
            bail!("{} is not a pipeline run; start one with `batch-init --corpus`", dir.display());
        }
        Ok(Self { dir: dir.to_path_buf(), info: read_json(&path)? })
    }

    pub fn info_path(&self) -> PathBuf {
        self.dir.join("workspace.json")
    }

    pub fn loop_path(&self) -> PathBuf {
        self.dir.join("loop.json")
    }

    pub fn lots_path(&self) -> PathBuf {
        self.dir.join("lots.json")
    }

    pub fn audit_path(&self) -> PathBuf {
        self.dir.join("audit.jsonl")
    }

    pub fn batch_path(&self, batch_id: &str) -> PathBuf {
        self.dir.join("batches").join(format!("{batch_id}.tsv"))
    }

    pub fn labels_path(&self, batch_id: &str) -> PathBuf {
        self.dir.join("labels").join(format!("{batch_id}.csv"))
    }

    pub fn corpus(&self) -> Result<Corpus> {
        let ing = ingest(&self.info.corpus, self.info.lang.clone(), &Normalizer::default())
            .with_context(|| format!("loading {}", self.info.corpus.display()))?;
        Ok(ing.corpus)
    }

    pub fn load_loop(&self) -> Result<LoopState> {
        read_json(&self.loop_path())
    }

    pub fn save_loop(&self, state: &LoopState) -> Result<()> {
        write_json(&self.loop_path(), state)
    }

    pub fn load_lots(&self, fresh: impl FnOnce() -> Result<LotTracker>) -> Result<LotTracker> {
        if self.lots_path().exists() {
            read_json(&self.lots_path())
        } else {
            fresh()
        }
    }

    pub fn save_lots(&self, lots: &LotTracker) -> Result<()> {
        write_json(&self.lots_path(), lots)
    }
}
