use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Batch, GradedRecord, HardNegative, Origin};
use crate::embed::{encode_batch, encoder_backward, score_matrix, EncoderGrads, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{build_label_matrix, LossKind, LossOptions};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub buckets: usize,
    pub dim: usize,
    pub batch: usize,
    pub hard_negatives: usize,
    pub alpha: f64,
    pub step: f64,
    /// Lower bound on the relative-error denominator, so parameters with
    /// near-zero gradient are judged on absolute error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            buckets: 64,
            dim: 8,
            batch: 4,
            hard_negatives: 2,
            alpha: crate::embed::DEFAULT_ALPHA,
            step: 1e-5,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub loss: LossKind,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub parameters: usize,
    pub beta_analytic: f64,
    pub beta_numeric: f64,
}

const WORDS: &[&str] = &[
    "amber", "basil", "cedar", "delta", "ember", "fjord", "grove", "harbor", "indigo", "juniper",
    "kelp", "lumen", "moss", "nectar", "onyx", "pebble",
];

fn text(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Seeded random batch with graded labels. Each labeled document is at
/// least 0.5 relevant, so every objective accepts it.
pub fn sample_batch(cfg: &GradCheckConfig) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let records = (0..cfg.batch)
        .map(|i| GradedRecord {
            query_id: format!("g{i}"),
            doc_id: format!("g{i}-p"),
            query: text(&mut rng, 2),
            doc: text(&mut rng, 5),
            task: "check".into(),
            relevance: [0.5, 0.75, 1.0][rng.random_range(0..3)],
            hard_negatives: (0..cfg.hard_negatives)
                .map(|k| HardNegative {
                    doc_id: format!("g{i}-n{k}"),
                    doc: text(&mut rng, 5),
                    relevance: [0.0, 0.25, 0.5, 0.75][rng.random_range(0..4)],
                })
                .collect(),
            origin: Origin::Synthetic,
        })
        .collect();
    Batch {
        records,
        hard_negatives: cfg.hard_negatives,
    }
}

/// Loss value and analytic gradients for one batch, exactly as the trainer
/// computes them.
pub fn batch_loss_and_grads(
    kind: LossKind,
    batch: &Batch,
    params: &EncoderParams,
    opts: &LossOptions,
    instructions: &std::collections::BTreeMap<String, String>,
) -> Result<(crate::losses::LossResult, EncoderGrads)> {
    let q = encode_batch(&batch.query_items(instructions), params)?;
    let d = encode_batch(&batch.doc_items(), params)?;
    let bias = kind.uses_bias();
    let scores = score_matrix(&q, &d, params, bias)?;
    let labels = build_label_matrix(&batch.records, batch.hard_negatives)?;
    let res = kind.evaluate(&scores, &labels, opts)?;
    let grads = encoder_backward(&res.d_scores, &q, &d, params, bias)?;
    Ok((res, grads))
}

/// Central finite differences over every table entry, `alpha` and `beta`.
pub fn grad_check(kind: LossKind, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.dim > 8 || cfg.batch > 4 || cfg.hard_negatives > 2 {
        return Err(Error::ConfigInvalid(
            "gradient check is limited to dim <= 8, batch <= 4, hard negatives <= 2".into(),
        ));
    }
    let params = EncoderParams::init(cfg.buckets, cfg.dim, cfg.alpha, cfg.seed, cfg.seed + 1, 1.0)?;
    let batch = sample_batch(cfg);
    let opts = LossOptions {
        teacher_scale: cfg.alpha,
        ..LossOptions::default()
    };
    let none = Default::default();
    let (_, grads) = batch_loss_and_grads(kind, &batch, &params, &opts, &none)?;
    let value = |p: &EncoderParams| -> Result<f64> {
        Ok(batch_loss_and_grads(kind, &batch, p, &opts, &none)?.0.value)
    };
    let h = cfg.step;

    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut record = |analytic: f64, numeric: f64| {
        let abs = (analytic - numeric).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / analytic.abs().max(numeric.abs()).max(cfg.floor));
    };

    let mut p = params.clone();
    let n = p.table.as_slice().len();
    for idx in 0..n {
        let orig = params.table.as_slice()[idx];
        p.table.as_mut_slice()[idx] = orig + h;
        let up = value(&p)?;
        p.table.as_mut_slice()[idx] = orig - h;
        let down = value(&p)?;
        p.table.as_mut_slice()[idx] = orig;
        record(grads.table.as_slice()[idx], (up - down) / (2.0 * h));
    }

    let mut pa = params.clone();
    pa.alpha = params.alpha + h;
    let up = value(&pa)?;
    pa.alpha = params.alpha - h;
    let down = value(&pa)?;
    record(grads.alpha, (up - down) / (2.0 * h));

    let mut pb = params.clone();
    pb.beta = params.beta + h;
    let up = value(&pb)?;
    pb.beta = params.beta - h;
    let down = value(&pb)?;
    let beta_numeric = (up - down) / (2.0 * h);
    record(grads.beta, beta_numeric);

    Ok(GradCheckReport {
        loss: kind,
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        parameters: n + 2,
        beta_analytic: grads.beta,
        beta_numeric,
    })
}
