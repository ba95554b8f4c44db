//! Shallow classifiers over fixed utterance embeddings.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

mod forest;
mod lda;
mod linalg;
mod logreg;

pub use forest::{train_forest, Forest, ForestConfig, Tree, TreeNode};
pub use lda::{train_lda, Lda, DEFAULT_SHRINKAGE};
pub use linalg::{cholesky, cholesky_solve};
pub use logreg::{train_logreg, LogReg, LogRegConfig};

use crate::checkpoint::{Checkpoint, ModelKind, NamedTensor};
use crate::codec::{put_f32, put_f64, put_u32, Reader};
use crate::embed::EmbeddingRecord;
use crate::error::FormatError;
use crate::{ClassScores, Error, Result};

/// A training example for a head.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub utterance_id: String,
    pub x: Vec<f64>,
    pub label: usize,
}

impl LabeledEmbedding {
    pub fn new(record: &EmbeddingRecord, label: usize) -> Self {
        LabeledEmbedding {
            utterance_id: record.utterance_id.clone(),
            x: record.to_f64(),
            label,
        }
    }
}

/// Common preconditions; returns the embedding dimension.
pub(crate) fn check_training(data: &[LabeledEmbedding], n_classes: usize) -> Result<usize> {
    if n_classes < 2 {
        return Err(Error::invalid("n_classes", "at least two classes required"));
    }
    let first = data.first().ok_or(Error::Empty("training embeddings"))?;
    let d = first.x.len();
    if d == 0 {
        return Err(Error::invalid("dim", "embeddings must have at least one dimension"));
    }
    for s in data {
        if s.x.len() != d {
            return Err(Error::ShapeMismatch {
                context: "embedding dimension",
                expected: d,
                actual: s.x.len(),
            });
        }
        if s.label >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                n_classes,
            });
        }
        if s.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training embedding"));
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum HeadKind {
    Logreg,
    Lda,
    Forest,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Logreg, HeadKind::Lda, HeadKind::Forest];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Logreg => "logreg",
            HeadKind::Lda => "lda",
            HeadKind::Forest => "forest",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("head", alloc::format!("unknown head {s:?} (logreg, lda, forest)")))
    }
}

/// Hyperparameters for all three heads.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadConfig {
    pub logreg: LogRegConfig,
    pub lda_shrinkage: Option<f64>,
    pub forest: ForestConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadModel {
    Logreg(LogReg),
    Lda(Lda),
    Forest(Forest),
}

impl HeadModel {
    pub fn train(kind: HeadKind, data: &[LabeledEmbedding], n_classes: usize, config: &HeadConfig) -> Result<Self> {
        Ok(match kind {
            HeadKind::Logreg => HeadModel::Logreg(train_logreg(data, n_classes, &config.logreg)?),
            HeadKind::Lda => HeadModel::Lda(train_lda(data, n_classes, config.lda_shrinkage.unwrap_or(DEFAULT_SHRINKAGE))?),
            HeadKind::Forest => HeadModel::Forest(train_forest(data, n_classes, &config.forest)?),
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            HeadModel::Logreg(_) => HeadKind::Logreg,
            HeadModel::Lda(_) => HeadKind::Lda,
            HeadModel::Forest(_) => HeadKind::Forest,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            HeadModel::Logreg(m) => m.n_classes,
            HeadModel::Lda(m) => m.n_classes,
            HeadModel::Forest(m) => m.n_classes,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            HeadModel::Logreg(m) => m.dim,
            HeadModel::Lda(m) => m.dim,
            HeadModel::Forest(m) => m.dim,
        }
    }

    pub fn predict_scores(&self, x: &[f64]) -> Result<ClassScores> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                context: "embedding dimension",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        match self {
            HeadModel::Logreg(m) => Ok(ClassScores::from_logits(&m.logits(x))),
            HeadModel::Lda(m) => Ok(ClassScores::from_logits(&m.discriminants(x))),
            HeadModel::Forest(m) => ClassScores::new(m.predict_proba(x)),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let k = self.n_classes();
        let d = self.dim();
        let mut config = Vec::new();
        put_u32(&mut config, d as u32);
        let (kind, tensors) = match self {
            HeadModel::Logreg(m) => (
                ModelKind::Logreg,
                alloc::vec![
                    NamedTensor::from_f64("weight", &[k, d], &m.weights),
                    NamedTensor::from_f64("bias", &[k], &m.bias),
                ],
            ),
            HeadModel::Lda(m) => {
                put_f64(&mut config, m.shrinkage);
                (
                    ModelKind::Lda,
                    alloc::vec![
                        NamedTensor::from_f64("means", &[k, d], &m.means),
                        NamedTensor::from_f64("priors", &[k], &m.priors),
                        NamedTensor::from_f64("cov_cholesky", &[d, d], &m.cov_cholesky),
                    ],
                )
            }
            HeadModel::Forest(m) => {
                put_u32(&mut config, m.trees.len() as u32);
                put_f64(&mut config, m.oob_accuracy.unwrap_or(f64::NAN));
                for tree in &m.trees {
                    put_u32(&mut config, tree.nodes.len() as u32);
                    for node in &tree.nodes {
                        put_u32(&mut config, node.feature as u32);
                        put_f32(&mut config, node.threshold);
                        put_u32(&mut config, node.left as u32);
                        put_u32(&mut config, node.right as u32);
                        node.counts.iter().for_each(|&c| put_u32(&mut config, c));
                    }
                }
                (ModelKind::Forest, Vec::new())
            }
        };
        Checkpoint {
            kind,
            n_classes: k as u32,
            config,
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let k = ck.n_classes as usize;
        if k < 2 {
            return Err(Error::invalid("checkpoint", "n_classes must be at least 2"));
        }
        let mut r = Reader::new(&ck.config);
        let d = r.u32("head dim")? as usize;
        if d == 0 {
            return Err(FormatError::InvalidField {
                field: "dim",
                reason: String::from("must be at least 1"),
            }
            .into());
        }
        let model = match ck.kind {
            ModelKind::Logreg => {
                let mut m = LogReg::zeros(k, d);
                m.weights = ck.tensor_values("weight", k * d)?;
                m.bias = ck.tensor_values("bias", k)?;
                HeadModel::Logreg(m)
            }
            ModelKind::Lda => {
                let shrinkage = r.f64("lda shrinkage")?;
                let means = ck.tensor_values("means", k * d)?;
                let priors = ck.tensor_values("priors", k)?;
                let chol = ck.tensor_values("cov_cholesky", d * d)?;
                HeadModel::Lda(Lda::from_parts(k, d, shrinkage, means, priors, chol)?)
            }
            ModelKind::Forest => {
                let n_trees = r.u32("forest tree count")? as usize;
                let oob = r.f64("forest oob accuracy")?;
                let node_len = 16 + 4 * k;
                let mut trees = Vec::new();
                for _ in 0..n_trees {
                    let n_nodes = r.u32("tree node count")? as usize;
                    if n_nodes > r.remaining() / node_len {
                        return Err(FormatError::Truncated("tree nodes").into());
                    }
                    let mut nodes = Vec::with_capacity(n_nodes);
                    for _ in 0..n_nodes {
                        let feature = r.i32("node feature")?;
                        let threshold = r.f32("node threshold")?;
                        let left = r.i32("node left")?;
                        let right = r.i32("node right")?;
                        let counts = (0..k).map(|_| r.u32("node counts")).collect::<core::result::Result<Vec<_>, _>>()?;
                        nodes.push(TreeNode {
                            feature,
                            threshold,
                            left,
                            right,
                            counts,
                        });
                    }
                    trees.push(Tree { nodes });
                }
                let forest = Forest {
                    n_classes: k,
                    dim: d,
                    trees,
                    oob_accuracy: (!oob.is_nan()).then_some(oob),
                };
                forest.validate()?;
                HeadModel::Forest(forest)
            }
            ModelKind::Cnn => {
                return Err(Error::invalid("checkpoint", "expected a head model, found cnn"));
            }
        };
        r.finish()?;
        Ok(model)
    }
}
