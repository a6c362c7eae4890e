//! Pairwise objectives: MarginMSE, RankNet-style pairwise BCE and the
//! NDCG-weighted LambdaLoss variants.

use super::{log_sigmoid, sigmoid, LabelMatrix, LossCost, LossResult};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Squared error between student score margins and scaled teacher label
/// margins, over each query's labeled columns only. In-batch columns are never
/// read and receive zero gradient.
pub fn margin_mse(scores: &Matrix, labels: &LabelMatrix, teacher_scale: f64) -> Result<LossResult> {
    labels.check_shape(scores)?;
    let k = labels.hard_negatives();
    if k == 0 {
        return Err(Error::NeedsHardNegatives);
    }
    let (b, m) = scores.shape();
    let norm = 1.0 / (b * k) as f64;
    let mut d_scores = Matrix::zeros(b, m);
    let mut value = 0.0;
    let mut entries = 0;
    for i in 0..b {
        let s_pos = scores[(i, i)];
        let z_pos = labels.get(i, i);
        entries += 1;
        for n in 0..k {
            let j = labels.hard_negative_column(i, n);
            entries += 1;
            let resid = (s_pos - scores[(i, j)]) - teacher_scale * (z_pos - labels.get(i, j));
            value += resid * resid;
            let g = 2.0 * resid * norm;
            d_scores[(i, i)] += g;
            d_scores[(i, j)] -= g;
        }
    }
    Ok(LossResult {
        value: value * norm,
        d_scores,
        d_beta: 0.0,
        cost: LossCost { entries, pairs: b * k },
    })
}

/// `-log sigmoid(S_a - S_b)` for every ordered pair `z_a > z_b` within a
/// row, averaged over all such pairs in the batch.
pub fn pairwise_bce(scores: &Matrix, labels: &LabelMatrix) -> Result<LossResult> {
    weighted_pairs(scores, labels, |_, _, _| 1.0, PairNorm::PerPair)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaVariant {
    /// `|G_a - G_b| / log2(1 + min(r_a, r_b))`
    V1,
    /// `|G_a - G_b| * |1/log2(1 + r_a) - 1/log2(1 + r_b)|`
    V2,
}

/// Exponential gain on the continuous relevance scale: `2^(4z) - 1`.
pub fn gain(z: f64) -> f64 {
    (4.0 * z).exp2() - 1.0
}

/// Pairwise logistic loss with NDCG-derived pair weights. Ranks come from the
/// current scores (descending, ties by column index) and are held constant in
/// the gradient. Each row is normalized by its ideal DCG; the batch value is
/// the mean over rows.
pub fn lambda_ndcg_loss(scores: &Matrix, labels: &LabelMatrix, variant: LambdaVariant) -> Result<LossResult> {
    labels.check_shape(scores)?;
    let m = scores.cols();
    let ranks: Vec<Vec<usize>> = (0..scores.rows()).map(|i| row_ranks(scores.row(i))).collect();
    let idcg: Vec<f64> = (0..scores.rows())
        .map(|i| ideal_dcg(labels.z().row(i)))
        .collect();
    debug_assert!(ranks.iter().all(|r| r.len() == m));

    weighted_pairs(
        scores,
        labels,
        |i, a, b| {
            let (ra, rb) = (ranks[i][a] as f64, ranks[i][b] as f64);
            let dg = (gain(labels.get(i, a)) - gain(labels.get(i, b))).abs();
            let w = match variant {
                LambdaVariant::V1 => dg / (1.0 + ra.min(rb)).log2(),
                LambdaVariant::V2 => dg * (1.0 / (1.0 + ra).log2() - 1.0 / (1.0 + rb).log2()).abs(),
            };
            w / idcg[i]
        },
        PairNorm::PerRow,
    )
}

/// 1-based rank of each column under descending score, ties by column.
fn row_ranks(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; row.len()];
    for (r, &j) in order.iter().enumerate() {
        ranks[j] = r + 1;
    }
    ranks
}

fn ideal_dcg(z: &[f64]) -> f64 {
    let mut gains: Vec<f64> = z.iter().map(|&v| gain(v)).collect();
    gains.sort_by(|a, b| b.total_cmp(a));
    gains
        .iter()
        .enumerate()
        .map(|(r, g)| g / ((r + 2) as f64).log2())
        .sum()
}

enum PairNorm {
    /// Divide by the total number of ordered pairs in the batch.
    PerPair,
    /// Divide by the batch size.
    PerRow,
}

fn weighted_pairs<W>(scores: &Matrix, labels: &LabelMatrix, weight: W, norm: PairNorm) -> Result<LossResult>
where
    W: Fn(usize, usize, usize) -> f64,
{
    labels.check_shape(scores)?;
    let (b, m) = scores.shape();
    if m < 2 {
        return Err(Error::NoOrderedPairs);
    }
    let mut d_scores = Matrix::zeros(b, m);
    let mut value = 0.0;
    let mut ordered = 0usize;
    let mut examined = 0usize;
    for i in 0..b {
        let s = scores.row(i);
        let z = labels.z().row(i);
        for a in 0..m {
            for c in (a + 1)..m {
                examined += 1;
                let (hi, lo) = if z[a] > z[c] {
                    (a, c)
                } else if z[c] > z[a] {
                    (c, a)
                } else {
                    continue;
                };
                ordered += 1;
                let w = weight(i, hi, lo);
                let margin = s[hi] - s[lo];
                value -= w * log_sigmoid(margin);
                let g = w * sigmoid(-margin);
                let out = d_scores.row_mut(i);
                out[hi] -= g;
                out[lo] += g;
            }
        }
    }
    if ordered == 0 {
        return Err(Error::NoOrderedPairs);
    }
    let scale = match norm {
        PairNorm::PerPair => 1.0 / ordered as f64,
        PairNorm::PerRow => 1.0 / b as f64,
    };
    d_scores.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
    Ok(LossResult {
        value: value * scale,
        d_scores,
        d_beta: 0.0,
        cost: LossCost {
            entries: b * m,
            pairs: examined,
        },
    })
}
