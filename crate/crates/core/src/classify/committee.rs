use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassifyError, Example, FitReport, LogisticModel, PerceptronModel, Scorer, TrainConfig, DEFAULT_DIM};
use super::FeatureView;
use crate::preprocess::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberKind {
    Logistic,
    AveragedPerceptron,
}

/// Blueprint for one committee member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSpec {
    pub model_id: String,
    pub kind: MemberKind,
    pub view: FeatureView,
    pub dim: u32,
    pub hash_seed: u64,
    /// Mixed into the training seed so identical specs can still differ.
    pub seed: u64,
}

impl MemberSpec {
    pub fn new(model_id: &str, kind: MemberKind, view: FeatureView) -> Self {
        Self { model_id: model_id.into(), kind, view, dim: DEFAULT_DIM, hash_seed: 0, seed: 0 }
    }

    /// Word n-gram logistic regression, character n-gram logistic
    /// regression and a word n-gram averaged perceptron.
    pub fn defaults() -> Vec<MemberSpec> {
        vec![
            MemberSpec::new("lr-word", MemberKind::Logistic, FeatureView::WORD_1_4),
            MemberSpec { seed: 1, ..MemberSpec::new("lr-char", MemberKind::Logistic, FeatureView::CHAR_3_5) },
            MemberSpec { seed: 2, ..MemberSpec::new("perceptron-word", MemberKind::AveragedPerceptron, FeatureView::WORD_1_4) },
        ]
    }

    pub fn with_dim(mut self, dim: u32) -> Self {
        self.dim = dim;
        self
    }

    pub fn build(&self) -> Member {
        match self.kind {
            MemberKind::Logistic => Member::Logistic(LogisticModel::new(&self.model_id, self.view, self.dim, self.hash_seed)),
            MemberKind::AveragedPerceptron => {
                Member::Perceptron(PerceptronModel::new(&self.model_id, self.view, self.dim, self.hash_seed))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Member {
    Logistic(LogisticModel),
    Perceptron(PerceptronModel),
}

impl Member {
    pub fn model_id(&self) -> &str {
        match self {
            Member::Logistic(m) => &m.model_id,
            Member::Perceptron(m) => &m.model_id,
        }
    }

    pub fn fit(&mut self, examples: &[Example<'_>], cfg: &TrainConfig) -> Result<FitReport, ClassifyError> {
        match self {
            Member::Logistic(m) => m.fit(examples, cfg),
            Member::Perceptron(m) => m.fit(examples, cfg),
        }
    }
}

impl Scorer for Member {
    fn predict_proba(&self, seq: &TokenSequence) -> Result<f64, ClassifyError> {
        match self {
            Member::Logistic(m) => m.predict_proba(seq),
            Member::Perceptron(m) => m.predict_proba(seq),
        }
    }
}

/// Classifiers trained on the same labeled pool that stand for competing
/// hypotheses. The ensemble combiner is never a member.
pub struct Committee {
    members: Vec<Box<dyn Scorer>>,
    ids: Vec<String>,
}

impl std::fmt::Debug for Committee {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Committee").field("members", &self.ids).finish()
    }
}

impl Committee {
    /// Wraps arbitrary scorers. At least two are required.
    pub fn from_scorers(members: Vec<(String, Box<dyn Scorer>)>) -> Result<Self, ClassifyError> {
        if members.len() < 2 {
            return Err(ClassifyError::TooFewMembers(members.len()));
        }
        let (ids, members) = members.into_iter().unzip();
        Ok(Self { members, ids })
    }

    pub fn from_members(members: Vec<Member>) -> Result<Self, ClassifyError> {
        Self::from_scorers(
            members.into_iter().map(|m| (m.model_id().to_string(), Box::new(m) as Box<dyn Scorer>)).collect(),
        )
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn member_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn member_probs(&self, seq: &TokenSequence) -> Result<Vec<f64>, ClassifyError> {
        self.members.iter().map(|m| m.predict_proba(seq)).collect()
    }
}

/// Trains every member on the full example set, members in parallel.
pub fn train_committee(
    examples: &[Example<'_>],
    specs: &[MemberSpec],
    cfg: &TrainConfig,
) -> Result<(Committee, Vec<Member>), ClassifyError> {
    if specs.len() < 2 {
        return Err(ClassifyError::TooFewMembers(specs.len()));
    }
    let members: Vec<Member> = specs
        .par_iter()
        .map(|spec| {
            let mut m = spec.build();
            m.fit(examples, &cfg.with_seed(cfg.seed ^ spec.seed.wrapping_mul(0x9e37_79b9)))?;
            Ok(m)
        })
        .collect::<Result<_, ClassifyError>>()?;
    let committee = Committee::from_members(members.clone())?;
    Ok((committee, members))
}
