//! Training objectives over a batch score matrix.
//!
//! Every loss consumes a `B x M` score matrix (`M = B * (1 + K)`) and a
//! [`LabelMatrix`] with the same layout, and returns the scalar value together
//! with `dL/dS` and `dL/dbeta`. Column `i < B` holds query `i`'s labeled
//! document; columns `B + i*K .. B + (i+1)*K` hold its hard negatives. All
//! remaining entries of a row are in-batch negatives with label 0.
//!
//! | kind | family | bias |
//! |------|--------|------|
//! | [`LossKind::InfoNce`] | softmax, one positive | no |
//! | [`LossKind::SoftInfoNce`] | softmax, soft target | no |
//! | [`LossKind::Bixse`] | pointwise sigmoid BCE | yes |
//! | [`LossKind::MarginMse`] | margin regression, labeled columns only | cancels |
//! | [`LossKind::PairwiseBce`] | RankNet-style pairs | cancels |
//! | [`LossKind::LambdaNdcg1`], [`LossKind::LambdaNdcg2`] | NDCG-weighted pairs | cancels |

mod bce;
mod pairwise;
mod softmax;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::GradedRecord;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use bce::bixse;
pub use pairwise::{lambda_ndcg_loss, margin_mse, pairwise_bce, LambdaVariant};
pub use softmax::{infonce, positive_columns, soft_infonce};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[serde(rename = "infonce")]
    InfoNce,
    Bixse,
    #[serde(rename = "soft_infonce")]
    SoftInfoNce,
    MarginMse,
    PairwiseBce,
    LambdaNdcg1,
    LambdaNdcg2,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::InfoNce,
        LossKind::Bixse,
        LossKind::SoftInfoNce,
        LossKind::MarginMse,
        LossKind::PairwiseBce,
        LossKind::LambdaNdcg1,
        LossKind::LambdaNdcg2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::InfoNce => "infonce",
            LossKind::Bixse => "bixse",
            LossKind::SoftInfoNce => "soft_infonce",
            LossKind::MarginMse => "margin_mse",
            LossKind::PairwiseBce => "pairwise_bce",
            LossKind::LambdaNdcg1 => "lambda_ndcg1",
            LossKind::LambdaNdcg2 => "lambda_ndcg2",
        }
    }

    /// Only the pointwise BCE objective adds the logit bias to its scores.
    pub fn uses_bias(self) -> bool {
        matches!(self, LossKind::Bixse)
    }

    /// Whether the objective needs each row's labeled document to be a
    /// binary positive.
    pub fn needs_binary_positive(self) -> bool {
        matches!(self, LossKind::InfoNce)
    }

    pub fn evaluate(self, scores: &Matrix, labels: &LabelMatrix, opts: &LossOptions) -> Result<LossResult> {
        labels.check_shape(scores)?;
        match self {
            LossKind::InfoNce => {
                let pos = positive_columns(labels, opts.binarize_threshold)?;
                infonce(scores, &pos)
            }
            LossKind::Bixse => bixse(scores, labels),
            LossKind::SoftInfoNce => soft_infonce(scores, labels, opts.soft_target_hard_negatives),
            LossKind::MarginMse => margin_mse(scores, labels, opts.teacher_scale),
            LossKind::PairwiseBce => pairwise_bce(scores, labels),
            LossKind::LambdaNdcg1 => lambda_ndcg_loss(scores, labels, LambdaVariant::V1),
            LossKind::LambdaNdcg2 => lambda_ndcg_loss(scores, labels, LambdaVariant::V2),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown loss `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    /// Labeled documents with relevance at or above this are InfoNCE positives.
    pub binarize_threshold: f64,
    /// Multiplier on teacher label margins in MarginMSE.
    pub teacher_scale: f64,
    /// Whether Soft InfoNCE spreads target mass onto labeled hard negatives.
    pub soft_target_hard_negatives: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            binarize_threshold: 0.5,
            teacher_scale: crate::embed::DEFAULT_ALPHA,
            soft_target_hard_negatives: true,
        }
    }
}

/// Work counters filled in by every loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossCost {
    /// Score entries read.
    pub entries: usize,
    /// Candidate pairs examined.
    pub pairs: usize,
}

#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub d_scores: Matrix,
    pub d_beta: f64,
    pub cost: LossCost,
}

/// Graded labels laid out like the score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    z: Matrix,
    hard_negatives: usize,
}

impl LabelMatrix {
    /// Builds labels from each query's own relevance and its hard-negative
    /// relevances (`hard[i].len()` must equal `k` for every row).
    pub fn from_parts(own: &[f64], hard: &[Vec<f64>], k: usize) -> Result<Self> {
        let b = own.len();
        if hard.len() != b {
            return Err(Error::ShapeMismatch {
                expected: (b, k),
                actual: (hard.len(), k),
            });
        }
        let mut z = Matrix::zeros(b, b * (1 + k));
        for (i, (&zi, negs)) in own.iter().zip(hard).enumerate() {
            if negs.len() != k {
                return Err(Error::InconsistentK {
                    first: k,
                    other: negs.len(),
                });
            }
            check_label(zi)?;
            z[(i, i)] = zi;
            for (j, &zn) in negs.iter().enumerate() {
                check_label(zn)?;
                z[(i, b + i * k + j)] = zn;
            }
        }
        Ok(Self {
            z,
            hard_negatives: k,
        })
    }

    pub fn batch(&self) -> usize {
        self.z.rows()
    }

    pub fn hard_negatives(&self) -> usize {
        self.hard_negatives
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.z[(i, j)]
    }

    /// Column of query `i`'s `n`-th hard negative.
    pub fn hard_negative_column(&self, i: usize, n: usize) -> usize {
        self.batch() + i * self.hard_negatives + n
    }

    /// The labeled document column followed by the hard-negative columns.
    pub fn labeled_columns(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(i).chain((0..self.hard_negatives).map(move |n| self.hard_negative_column(i, n)))
    }

    pub fn labeled_count(&self) -> usize {
        self.batch() * (1 + self.hard_negatives)
    }

    pub(crate) fn check_shape(&self, scores: &Matrix) -> Result<()> {
        if scores.shape() != self.z.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.z.shape(),
                actual: scores.shape(),
            });
        }
        Ok(())
    }
}

fn check_label(z: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::LabelRange { value: z });
    }
    Ok(())
}

/// Label matrix for a batch whose records all carry exactly `k` hard negatives.
pub fn build_label_matrix(records: &[GradedRecord], k: usize) -> Result<LabelMatrix> {
    let own: Vec<f64> = records.iter().map(|r| r.relevance).collect();
    let hard: Vec<Vec<f64>> = records
        .iter()
        .map(|r| r.hard_negatives.iter().map(|h| h.relevance).collect())
        .collect();
    LabelMatrix::from_parts(&own, &hard, k)
}

/// `log(sigmoid(x))` without overflow for any finite `x`.
pub fn log_sigmoid(x: f64) -> f64 {
    -(-x.abs()).exp().ln_1p() - (-x).max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
