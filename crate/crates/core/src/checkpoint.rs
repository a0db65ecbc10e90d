//! Binary model checkpoints and the committee manifest that ties them
//! together with the combiner.
//!
//! Layout of a model file, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "APMODEL\0"
//! version   u16
//! hdr_len   u32
//! header    hdr_len bytes of JSON (ModelHeader)
//! payload   dense:  dim x f64
//!           sparse: nnz x (u32 index, f64 value), indices strictly increasing
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classify::{Committee, FeatureView, LogisticModel, Member, MemberKind, PerceptronModel};
use crate::ensemble::{EnsembleModel, Stack};

pub const MAGIC: &[u8; 8] = b"APMODEL\0";
pub const FORMAT_VERSION: u16 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "committee.json";
/// Refuses headers and dimensions beyond these on decode.
pub const MAX_HEADER_LEN: u32 = 1 << 20;
pub const MAX_DIM: u32 = 1 << 28;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("truncated checkpoint: {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("model `{0}` has not been trained")]
    Untrained(String),
    #[error("digest mismatch for {0}")]
    Digest(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub model_id: String,
    pub kind: MemberKind,
    pub view: FeatureView,
    pub dim: u32,
    pub hash_seed: u64,
    pub bias: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platt: Option<(f64, f64)>,
    pub encoding: Encoding,
    pub nnz: u64,
}

fn parts(member: &Member) -> (ModelHeader, &[f64], bool) {
    let (header, weights, trained) = match member {
        Member::Logistic(m) => (
            ModelHeader {
                model_id: m.model_id.clone(),
                kind: MemberKind::Logistic,
                view: m.view,
                dim: m.dim,
                hash_seed: m.hash_seed,
                bias: m.bias(),
                platt: None,
                encoding: Encoding::Dense,
                nnz: 0,
            },
            m.weights(),
            m.is_trained(),
        ),
        Member::Perceptron(m) => (
            ModelHeader {
                model_id: m.model_id.clone(),
                kind: MemberKind::AveragedPerceptron,
                view: m.view,
                dim: m.dim,
                hash_seed: m.hash_seed,
                bias: m.bias(),
                platt: Some(m.platt()),
                encoding: Encoding::Dense,
                nnz: 0,
            },
            m.weights(),
            m.is_trained(),
        ),
    };
    (header, weights, trained)
}

/// Serializes a trained member, choosing the smaller payload encoding.
pub fn encode_member(member: &Member) -> Result<Vec<u8>, CheckpointError> {
    let (mut header, weights, trained) = parts(member);
    if !trained {
        return Err(CheckpointError::Untrained(header.model_id));
    }
    let nnz = weights.iter().filter(|w| **w != 0.0).count();
    header.nnz = nnz as u64;
    header.encoding = if nnz * 12 < weights.len() * 8 { Encoding::Sparse } else { Encoding::Dense };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let mut out = Vec::with_capacity(14 + json.len() + nnz.max(weights.len()) * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    match header.encoding {
        Encoding::Dense => weights.iter().for_each(|w| out.extend_from_slice(&w.to_le_bytes())),
        Encoding::Sparse => {
            for (i, w) in weights.iter().enumerate().filter(|(_, w)| **w != 0.0) {
                out.extend_from_slice(&(i as u32).to_le_bytes());
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn finite(v: f64, what: &str) -> Result<f64, CheckpointError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CheckpointError::Malformed(format!("non-finite {what}")))
    }
}

/// Parses and validates a model checkpoint.
pub fn decode_member(bytes: &[u8]) -> Result<Member, CheckpointError> {
    let mut r = Reader { buf: bytes };
    if r.take(8, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let hdr_len = r.u32("header length")?;
    if hdr_len > MAX_HEADER_LEN {
        return Err(CheckpointError::Malformed(format!("header length {hdr_len} too large")));
    }
    let header: ModelHeader =
        serde_json::from_slice(r.take(hdr_len as usize, "header")?).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if header.dim == 0 || header.dim > MAX_DIM {
        return Err(CheckpointError::Malformed(format!("dimension {} out of range", header.dim)));
    }
    finite(header.bias, "bias")?;
    let dim = header.dim as usize;
    let mut weights = match header.encoding {
        Encoding::Dense => {
            if r.buf.len() != dim * 8 {
                return Err(CheckpointError::Malformed(format!("dense payload is {} bytes, expected {}", r.buf.len(), dim * 8)));
            }
            Vec::with_capacity(dim)
        }
        Encoding::Sparse => {
            if header.nnz > u64::from(header.dim) || r.buf.len() as u64 != header.nnz * 12 {
                return Err(CheckpointError::Malformed(format!("sparse payload is {} bytes for {} entries", r.buf.len(), header.nnz)));
            }
            vec![0.0; dim]
        }
    };
    match header.encoding {
        Encoding::Dense => {
            for _ in 0..dim {
                weights.push(finite(r.f64("weights")?, "weight")?);
            }
        }
        Encoding::Sparse => {
            let mut prev: Option<u32> = None;
            for _ in 0..header.nnz {
                let i = r.u32("index")?;
                let v = finite(r.f64("value")?, "weight")?;
                if i >= header.dim || prev.is_some_and(|p| i <= p) {
                    return Err(CheckpointError::Malformed(format!("sparse index {i} out of order or range")));
                }
                prev = Some(i);
                weights[i as usize] = v;
            }
        }
    }
    Ok(match header.kind {
        MemberKind::Logistic => {
            Member::Logistic(LogisticModel::from_parameters(header.model_id, header.view, header.hash_seed, weights, header.bias))
        }
        MemberKind::AveragedPerceptron => {
            let (a, b) = header.platt.ok_or_else(|| CheckpointError::Malformed("perceptron without calibration".into()))?;
            finite(a, "calibration")?;
            finite(b, "calibration")?;
            Member::Perceptron(PerceptronModel::from_parameters(header.model_id, header.view, header.hash_seed, weights, header.bias, (a, b)))
        }
    })
}

pub fn save_member(member: &Member, path: &Path) -> Result<String, CheckpointError> {
    let bytes = encode_member(member)?;
    write_atomic(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn load_member(path: &Path) -> Result<Member, CheckpointError> {
    decode_member(&std::fs::read(path)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub model_id: String,
    pub kind: MemberKind,
    /// Relative to the manifest's directory.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeManifest {
    pub version: u32,
    pub members: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleModel>,
}

impl CommitteeManifest {
    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let m: Self = serde_json::from_str(text).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), CheckpointError> {
        let bad = |s: String| Err(CheckpointError::Manifest(s));
        if self.version != MANIFEST_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.members.len() < 2 {
            return bad(format!("a committee needs at least 2 members, got {}", self.members.len()));
        }
        let mut ids = std::collections::HashSet::new();
        for e in &self.members {
            if !ids.insert(&e.model_id) {
                return bad(format!("duplicate member `{}`", e.model_id));
            }
            let p = Path::new(&e.file);
            if e.file.is_empty() || p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                return bad(format!("member file `{}` must be a plain relative path", e.file));
            }
        }
        if let Some(ens) = &self.ensemble {
            check_ensemble(ens, self.members.len())?;
        }
        Ok(())
    }
}

fn check_ensemble(m: &EnsembleModel, members: usize) -> Result<(), CheckpointError> {
    let ok = m.inputs == members
        && m.hidden > 0
        && m.w1.len() == m.inputs * m.hidden
        && m.b1.len() == m.hidden
        && m.w2.len() == m.hidden
        && (0.0..1.0).contains(&m.dropout)
        && m.w1.iter().chain(&m.b1).chain(&m.w2).chain(std::iter::once(&m.b2)).all(|v| v.is_finite());
    if ok {
        Ok(())
    } else {
        Err(CheckpointError::Manifest(format!("ensemble shape does not match {members} members")))
    }
}

/// Writes each member as `<model_id>.apm` plus the manifest into `dir`.
pub fn save_committee(dir: &Path, members: &[Member], ensemble: Option<&EnsembleModel>) -> Result<PathBuf, CheckpointError> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(members.len());
    for m in members {
        let file = format!("{}.apm", sanitize(m.model_id()));
        let sha256 = save_member(m, &dir.join(&file))?;
        let kind = match m {
            Member::Logistic(_) => MemberKind::Logistic,
            Member::Perceptron(_) => MemberKind::AveragedPerceptron,
        };
        entries.push(ManifestEntry { model_id: m.model_id().to_string(), kind, file, sha256 });
    }
    let manifest = CommitteeManifest { version: MANIFEST_VERSION, members: entries, ensemble: ensemble.cloned() };
    manifest.validate()?;
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    write_atomic(&path, &json)?;
    Ok(path)
}

pub fn save_stack(dir: &Path, stack: &Stack) -> Result<PathBuf, CheckpointError> {
    save_committee(dir, &stack.members, Some(&stack.ensemble))
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Loads and verifies every member listed in a manifest.
pub fn load_committee(manifest_path: &Path) -> Result<(CommitteeManifest, Vec<Member>), CheckpointError> {
    let manifest = CommitteeManifest::parse(&std::fs::read_to_string(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut members = Vec::with_capacity(manifest.members.len());
    for e in &manifest.members {
        let bytes = std::fs::read(dir.join(&e.file))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(CheckpointError::Digest(e.file.clone()));
        }
        let m = decode_member(&bytes)?;
        if m.model_id() != e.model_id {
            return Err(CheckpointError::Manifest(format!("`{}` holds model `{}`", e.file, m.model_id())));
        }
        members.push(m);
    }
    Ok((manifest, members))
}

/// Loads a manifest that includes the combiner.
pub fn load_stack(manifest_path: &Path) -> Result<Stack, CheckpointError> {
    let (manifest, members) = load_committee(manifest_path)?;
    let ensemble = manifest.ensemble.ok_or_else(|| CheckpointError::Manifest("no ensemble in manifest".into()))?;
    let committee = Committee::from_members(members.clone()).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    Ok(Stack { committee, members, ensemble })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic(weights: Vec<f64>) -> Member {
        Member::Logistic(LogisticModel::from_parameters("lr", FeatureView::WORD_1_4, 7, weights, -0.5))
    }

    #[test]
    fn sparse_and_dense_roundtrip() {
        let mut w = vec![0.0; 1000];
        w[3] = 1.5;
        w[999] = -2.0;
        let m = logistic(w);
        let bytes = encode_member(&m).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert!(bytes.len() < 1000);
        assert_eq!(decode_member(&bytes).unwrap(), m);

        let dense = logistic((0..64).map(|i| i as f64 * 0.1 + 0.05).collect());
        let bytes = encode_member(&dense).unwrap();
        assert_eq!(decode_member(&bytes).unwrap(), dense);

        let p = Member::Perceptron(PerceptronModel::from_parameters("p", FeatureView::CHAR_3_5, 1, vec![0.0, 1.0, 0.0, 0.0], 0.2, (1.3, -0.1)));
        assert_eq!(decode_member(&encode_member(&p).unwrap()).unwrap(), p);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode_member(&logistic(vec![0.25; 16])).unwrap();
        assert!(matches!(decode_member(b"nope"), Err(CheckpointError::Truncated(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_member(&bad), Err(CheckpointError::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(decode_member(&bad), Err(CheckpointError::Version(9))));
        assert!(decode_member(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_member(&long).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_member(&nan).is_err());
    }

    #[test]
    fn untrained_is_refused() {
        let m = Member::Logistic(LogisticModel::new("x", FeatureView::WORD_1_4, 8, 0));
        assert!(matches!(encode_member(&m), Err(CheckpointError::Untrained(_))));
    }

    #[test]
    fn manifest_roundtrip_and_digest() {
        let dir = tempfile::tempdir().unwrap();
        let a = logistic(vec![0.5, 0.0, 0.0, 0.0]);
        let b = Member::Logistic(LogisticModel::from_parameters("lr/char", FeatureView::CHAR_3_5, 1, vec![0.0, -1.0], 0.1));
        let mut ens = EnsembleModel::zeros(2);
        ens.w2[0] = 0.3;
        let path = save_committee(dir.path(), &[a.clone(), b.clone()], Some(&ens)).unwrap();
        let stack = load_stack(&path).unwrap();
        assert_eq!(stack.members, vec![a, b]);
        assert_eq!(stack.ensemble, ens);

        let (manifest, _) = load_committee(&path).unwrap();
        std::fs::write(dir.path().join(&manifest.members[0].file), b"tampered").unwrap();
        assert!(matches!(load_committee(&path), Err(CheckpointError::Digest(_))));
    }

    #[test]
    fn manifest_validation() {
        let entry = |id: &str, file: &str| ManifestEntry { model_id: id.into(), kind: MemberKind::Logistic, file: file.into(), sha256: String::new() };
        let ok = CommitteeManifest { version: 1, members: vec![entry("a", "a.apm"), entry("b", "b.apm")], ensemble: None };
        assert!(ok.validate().is_ok());
        let one = CommitteeManifest { members: vec![entry("a", "a.apm")], ..ok.clone() };
        assert!(one.validate().is_err());
        let escape = CommitteeManifest { members: vec![entry("a", "../a.apm"), entry("b", "b.apm")], ..ok.clone() };
        assert!(escape.validate().is_err());
        let wrong = CommitteeManifest { ensemble: Some(EnsembleModel::zeros(3)), ..ok };
        assert!(wrong.validate().is_err());
        assert!(CommitteeManifest::parse("{").is_err());
    }
}
