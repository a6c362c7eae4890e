use super::{LabelMatrix, LossCost, LossResult};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Column of each row's positive: the labeled document, if its relevance
/// reaches `threshold`.
pub fn positive_columns(labels: &LabelMatrix, threshold: f64) -> Result<Vec<usize>> {
    (0..labels.batch())
        .map(|i| {
            if labels.get(i, i) >= threshold {
                Ok(i)
            } else {
                Err(Error::NoPositive { row: i })
            }
        })
        .collect()
}

/// Softmax cross-entropy with one positive column per row.
pub fn infonce(scores: &Matrix, positives: &[usize]) -> Result<LossResult> {
    let (b, m) = scores.shape();
    if positives.len() != b {
        return Err(Error::ShapeMismatch {
            expected: (b, m),
            actual: (positives.len(), m),
        });
    }
    let mut targets = Matrix::zeros(b, m);
    for (i, &p) in positives.iter().enumerate() {
        if p >= m {
            return Err(Error::NoPositive { row: i });
        }
        targets[(i, p)] = 1.0;
    }
    Ok(softmax_cross_entropy(scores, &targets))
}

/// Softmax cross-entropy against each row's labeled relevance mass,
/// normalized to a distribution. In-batch columns get zero target mass;
/// hard-negative columns keep theirs only when `include_hard_negatives`.
pub fn soft_infonce(
    scores: &Matrix,
    labels: &LabelMatrix,
    include_hard_negatives: bool,
) -> Result<LossResult> {
    labels.check_shape(scores)?;
    let (b, m) = scores.shape();
    let mut targets = Matrix::zeros(b, m);
    for i in 0..b {
        let cols: Vec<usize> = if include_hard_negatives {
            labels.labeled_columns(i).collect()
        } else {
            vec![i]
        };
        let mass: f64 = cols.iter().map(|&j| labels.get(i, j)).sum();
        if mass <= 0.0 {
            return Err(Error::AllZeroRow { row: i });
        }
        for j in cols {
            targets[(i, j)] = labels.get(i, j) / mass;
        }
    }
    Ok(softmax_cross_entropy(scores, &targets))
}

/// `(1/B) sum_i [logsumexp(S_i) - <t_i, S_i>]`, gradient `(softmax - t) / B`.
fn softmax_cross_entropy(scores: &Matrix, targets: &Matrix) -> LossResult {
    let (b, m) = scores.shape();
    let inv_b = 1.0 / b as f64;
    let mut d_scores = Matrix::zeros(b, m);
    let mut value = 0.0;
    for i in 0..b {
        let row = scores.row(i);
        let t = targets.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|s| (s - max).exp()).sum();
        let lse = max + denom.ln();
        let target_score: f64 = row
            .iter()
            .zip(t)
            .filter(|(_, &w)| w != 0.0)
            .map(|(s, w)| w * s)
            .sum();
        value += lse - target_score;
        for (j, g) in d_scores.row_mut(i).iter_mut().enumerate() {
            let p = (row[j] - max).exp() / denom;
            *g = (p - t[j]) * inv_b;
        }
    }
    LossResult {
        value: value * inv_b,
        d_scores,
        d_beta: 0.0,
        cost: LossCost {
            entries: b * m,
            pairs: 0,
        },
    }
}
