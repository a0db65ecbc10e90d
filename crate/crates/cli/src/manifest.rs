//! Run manifest: every command executed, with its seed and file digests.

use std::path::{Path, PathBuf};

use annopipe::checkpoint::sha256_hex;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self { path: path.to_string_lossy().replace('\\', "/"), sha256: sha256_hex(&bytes) })
    }
}

/// One executed command. `args` is the command line after the program name
/// with the manifest flag removed, so re-running it reproduces the outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub runs: Vec<RunRecord>,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self { version: MANIFEST_VERSION, runs: Vec::new() }
    }
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).context("parsing run manifest")?;
        if m.version != MANIFEST_VERSION {
            bail!("unsupported run manifest version {}", m.version);
        }
        Ok(m)
    }

    /// A missing file is an empty manifest.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn append(path: &Path, record: RunRecord) -> Result<()> {
        let mut m = Self::load(path)?;
        m.runs.push(record);
        m.save(path)
    }
}

/// Files and directories a command read and wrote. Directories are
/// expanded to their files in name order.
#[derive(Debug, Default)]
pub struct Touched {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for e in walkdir::WalkDir::new(p).sort_by_file_name() {
                let e = e?;
                if e.file_type().is_file() {
                    out.push(FileDigest::of(e.path())?);
                }
            }
        } else {
            out.push(FileDigest::of(p)?);
        }
    }
    Ok(out)
}

/// Drops `--manifest <path>` and `--manifest=<path>` from an argument list.
pub fn strip_manifest_flag(args: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--manifest" {
            skip = true;
        } else if !a.starts_with("--manifest=") {
            out.push(a.clone());
        }
    }
    out
}
