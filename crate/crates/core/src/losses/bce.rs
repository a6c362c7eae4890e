use super::{log_sigmoid, sigmoid, LabelMatrix, LossCost, LossResult};
use crate::error::Result;
use crate::matrix::Matrix;

/// Pointwise binary cross-entropy over every query/document pair in the
/// batch, with graded targets on labeled slots and 0 elsewhere:
///
/// ```text
/// L = -(1/B) sum_ij [ z_ij log s(S_ij) + (1 - z_ij) log s(-S_ij) ]
/// dL/dS_ij = (s(S_ij) - z_ij) / B
/// ```
///
/// `scores` must already include the logit bias; `d_beta` is the sum of
/// `d_scores`.
pub fn bixse(scores: &Matrix, labels: &LabelMatrix) -> Result<LossResult> {
    labels.check_shape(scores)?;
    let (b, m) = scores.shape();
    let inv_b = 1.0 / b as f64;
    let mut d_scores = Matrix::zeros(b, m);
    let mut value = 0.0;
    let mut entries = 0;
    for i in 0..b {
        let row = scores.row(i);
        let z = labels.z().row(i);
        let out = d_scores.row_mut(i);
        for j in 0..m {
            let s = row[j];
            value -= z[j] * log_sigmoid(s) + (1.0 - z[j]) * log_sigmoid(-s);
            out[j] = (sigmoid(s) - z[j]) * inv_b;
            entries += 1;
        }
    }
    let d_beta = d_scores.sum();
    Ok(LossResult {
        value: value * inv_b,
        d_scores,
        d_beta,
        cost: LossCost { entries, pairs: 0 },
    })
}
