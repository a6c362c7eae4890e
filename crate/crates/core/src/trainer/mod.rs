//! Optimization loop over seeded batches: encode, score, loss, backward,
//! Adam.

mod checkpoint;
mod gradcheck;
mod optim;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use gradcheck::{batch_loss_and_grads, grad_check, sample_batch, GradCheckConfig, GradCheckReport};
pub use optim::{lr_at_step, scale_lr, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::data::{make_batches, GradedRecord};
use crate::embed::{EncoderParams, TextItem, DEFAULT_ALPHA, DEFAULT_BUCKETS, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, Qrels};
use crate::losses::{LossKind, LossOptions};

pub const DEFAULT_BASE_LR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch: usize,
    pub hard_negatives: usize,
    /// Learning rate at batch size 16; the peak rate is scaled by
    /// `sqrt(batch / 16)`.
    pub base_lr: f64,
    pub beta_lr_multiplier: f64,
    pub alpha: f64,
    pub train_alpha: bool,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub binarize_threshold: f64,
    pub teacher_scale: Option<f64>,
    pub soft_target_hard_negatives: bool,
    pub buckets: usize,
    pub dim: usize,
    pub hash_seed: u64,
    pub init_scale: f64,
    pub task_conditioned: bool,
    /// Task name to instruction prefix for queries.
    pub instructions: BTreeMap<String, String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Bixse,
            epochs: 4,
            batch: 32,
            hard_negatives: 1,
            base_lr: DEFAULT_BASE_LR,
            beta_lr_multiplier: 100.0,
            alpha: DEFAULT_ALPHA,
            train_alpha: false,
            warmup_fraction: 0.05,
            seed: 7,
            binarize_threshold: 0.5,
            teacher_scale: None,
            soft_target_hard_negatives: true,
            buckets: DEFAULT_BUCKETS,
            dim: DEFAULT_DIM,
            hash_seed: 0,
            init_scale: 0.1,
            task_conditioned: true,
            instructions: BTreeMap::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::ConfigInvalid(m));
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch < 1 {
            return fail("batch must be at least 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.beta_lr_multiplier >= 0.0 && self.beta_lr_multiplier.is_finite()) {
            return fail(format!("beta_lr_multiplier must be non-negative, got {}", self.beta_lr_multiplier));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return fail(format!("warmup_fraction must lie in (0, 1), got {}", self.warmup_fraction));
        }
        if !(0.0..=1.0).contains(&self.binarize_threshold) {
            return fail(format!("binarize_threshold must lie in [0, 1], got {}", self.binarize_threshold));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return fail(format!("init_scale must be positive, got {}", self.init_scale));
        }
        if self.loss == LossKind::MarginMse && self.hard_negatives == 0 {
            return Err(Error::NeedsHardNegatives);
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            binarize_threshold: self.binarize_threshold,
            teacher_scale: self.teacher_scale.unwrap_or(self.alpha),
            soft_target_hard_negatives: self.soft_target_hard_negatives,
        }
    }

    pub fn peak_lr(&self) -> f64 {
        scale_lr(self.base_lr, self.batch)
    }

    pub fn init_params(&self) -> Result<EncoderParams> {
        EncoderParams::init(self.buckets, self.dim, self.alpha, self.hash_seed, self.seed, self.init_scale)
    }
}

/// Held-out queries used for per-epoch model selection.
#[derive(Debug, Clone)]
pub struct Validation {
    pub queries: Vec<TextItem>,
    pub corpus: Vec<TextItem>,
    pub qrels: Qrels,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub val_ndcg: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final parameters, or the best validation epoch when validating.
    pub params: EncoderParams,
    pub epochs: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    /// Records that remained after the objective's input requirements.
    pub records_used: usize,
}

/// Records the objective can consume. InfoNCE needs a positive at the
/// binarization threshold; Soft InfoNCE needs some labeled mass per row.
pub fn usable_records(records: &[GradedRecord], cfg: &TrainConfig) -> Vec<GradedRecord> {
    records
        .iter()
        .filter(|r| match cfg.loss {
            LossKind::InfoNce => r.relevance >= cfg.binarize_threshold,
            LossKind::SoftInfoNce => {
                let hard: f64 = if cfg.soft_target_hard_negatives {
                    r.hard_negatives.iter().take(cfg.hard_negatives).map(|h| h.relevance).sum()
                } else {
                    0.0
                };
                r.relevance + hard > 0.0
            }
            _ => true,
        })
        .cloned()
        .collect()
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn train(records: &[GradedRecord], cfg: &TrainConfig, validation: Option<&Validation>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let records = usable_records(records, cfg);
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    train_from(cfg.init_params()?, &records, cfg, validation)
}

fn train_from(
    mut params: EncoderParams,
    records: &[GradedRecord],
    cfg: &TrainConfig,
    validation: Option<&Validation>,
) -> Result<TrainOutcome> {
    // batch counts are identical across epochs; only membership changes
    let per_epoch = make_batches(records, cfg.batch, cfg.hard_negatives, epoch_seed(cfg.seed, 1), cfg.task_conditioned)?.len();
    if per_epoch == 0 {
        return Err(Error::EmptyDataset);
    }
    let total = per_epoch * cfg.epochs;
    let peak = cfg.peak_lr();
    let opts = cfg.loss_options();
    let mut adam = AdamState::new(&params);

    let mut step_losses = Vec::with_capacity(total);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, EncoderParams)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let batches = make_batches(
            records,
            cfg.batch,
            cfg.hard_negatives,
            epoch_seed(cfg.seed, epoch),
            cfg.task_conditioned,
        )?;
        let mut sum = 0.0;
        let mut lr = 0.0;
        for batch in &batches {
            step += 1;
            lr = lr_at_step(step, total, peak, cfg.warmup_fraction);
            let (res, grads) = batch_loss_and_grads(cfg.loss, batch, &params, &opts, &cfg.instructions)?;
            adam.step(&mut params, &grads, lr, lr * cfg.beta_lr_multiplier, cfg.train_alpha)?;
            sum += res.value;
            step_losses.push(res.value);
        }
        let val_ndcg = match validation {
            Some(v) => Some(evaluate_run(&params, &v.queries, &v.corpus, &v.qrels, v.k)?.0.ndcg),
            None => None,
        };
        if let Some(score) = val_ndcg {
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, params.clone()));
            }
        }
        epochs.push(EpochLog {
            epoch,
            steps: batches.len(),
            mean_loss: sum / batches.len().max(1) as f64,
            lr,
            alpha: params.alpha,
            beta: params.beta,
            val_ndcg,
        });
    }

    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, Some(e)),
        None => (params, None),
    };
    Ok(TrainOutcome {
        params,
        epochs,
        step_losses,
        best_epoch,
        records_used: records.len(),
    })
}
