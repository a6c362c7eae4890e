//! Controlled training sweeps over a synthetic dataset.
//!
//! Every sweep trains one model per grid cell and seed, evaluates nDCG@k on
//! the held-out test queries, and returns typed rows in grid order. Cells run
//! on a dedicated thread pool; each cell is single-threaded, so results do
//! not depend on the number of jobs.
//!
//! CSV headers:
//!
//! | sweep | header |
//! |-------|--------|
//! | noise | `loss,p,seed,ndcg@10` |
//! | cutoff | `loss,cutoff,seed,ndcg@10,retained_count` |
//! | batchgrid | `loss,hard_negatives,batch,seed,ndcg@10,status` |
//! | biaslr | `beta_lr_multiplier,seed,ndcg@10,beta` |
//! | gradcheck | `loss,max_rel_error,max_abs_error,parameters,beta_analytic,beta_numeric` |
//!
//! The `ndcg@10` column name follows the configured cutoff `k`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate_run;
use crate::data::{
    filter_by_cutoff, inject_label_noise, subsample_to_match, synth_generate, to_binary_pairs, CutoffMode,
    GradedRecord, SynthConfig, SynthData,
};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::trainer::{grad_check, train, GradCheckConfig, GradCheckReport, TrainConfig};

pub const DEFAULT_NOISE_GRID: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
pub const DEFAULT_CUTOFF_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 0.9];
/// `(hard_negatives, batch)` pairs holding `batch * (1 + hard_negatives)` at
/// 256 documents per step.
pub const DEFAULT_BATCH_GRID: [(usize, usize); 5] = [(15, 16), (7, 32), (3, 64), (1, 128), (0, 256)];
pub const DEFAULT_BIAS_LR_GRID: [f64; 4] = [0.01, 1.0, 100.0, 10000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub synth: SynthConfig,
    /// Template for every cell; `loss`, `seed` and the swept field are
    /// overridden per cell.
    pub train: TrainConfig,
    pub seeds: usize,
    /// Cell seeds are `first_seed .. first_seed + seeds`.
    pub first_seed: u64,
    pub k: usize,
    pub jobs: usize,
    /// Binarization threshold used to build the noise sweep's pairs.
    pub noise_threshold: f64,
    /// Scale epochs in the batch grid so every cell takes as many optimizer
    /// steps as the smallest batch size does.
    pub equal_steps: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            seeds: 5,
            first_seed: 1,
            k: 10,
            jobs: 1,
            noise_threshold: 0.5,
            equal_steps: false,
        }
    }
}

impl SweepConfig {
    /// Reference data and training settings for the label-noise sweep.
    pub fn noise_preset() -> Self {
        Self::default()
    }

    /// Cutoff sweep: one graded document per query with in-batch negatives
    /// only, and enough source queries that the strictest cutoff still keeps
    /// about as many records as the reference training set.
    pub fn cutoff_preset() -> Self {
        let mut cfg = Self::default();
        cfg.synth.queries = 10_000;
        cfg.train.hard_negatives = 0;
        cfg
    }

    /// Batch/negatives grid: up to 15 hard negatives per record and an equal
    /// number of optimizer steps per cell, so every cell spends the same
    /// compute at 256 documents per step.
    pub fn batch_grid_preset() -> Self {
        let mut cfg = Self::default();
        cfg.synth.hard_negatives = 15;
        cfg.equal_steps = true;
        cfg
    }

    pub fn bias_lr_preset() -> Self {
        Self::default()
    }

    fn seeds(&self) -> impl Iterator<Item = u64> + Clone {
        self.first_seed..self.first_seed + self.seeds as u64
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))
    }

    fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::ConfigInvalid("at least one seed is required".into()));
        }
        if self.k == 0 {
            return Err(Error::ConfigInvalid("k must be at least 1".into()));
        }
        self.train.validate()
    }
}

/// Trains on `records` and returns `(ndcg, beta)` on the test split.
fn run_cell(data: &SynthData, records: &[GradedRecord], cfg: &TrainConfig, k: usize) -> Result<(f64, f64)> {
    let out = train(records, cfg, None)?;
    let (row, _) = evaluate_run(&out.params, &data.queries, &data.corpus, &data.qrels, k)?;
    Ok((row.ndcg, out.params.beta))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn ndcg_header(k: usize) -> String {
    format!("ndcg@{k}")
}

// ---------------------------------------------------------------- noise

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRow {
    pub loss: LossKind,
    pub p: f64,
    pub seed: u64,
    pub ndcg: f64,
}

/// Flips positive and hard negative with probability `p` on binary pairs,
/// then trains InfoNCE and BiXSE with one hard negative.
pub fn sweep_noise(cfg: &SweepConfig, p_values: &[f64]) -> Result<Vec<NoiseRow>> {
    cfg.validate()?;
    let data = synth_generate(&cfg.synth)?;
    let pairs = to_binary_pairs(&data.records, cfg.noise_threshold);
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cells = Vec::new();
    for &p in p_values {
        for loss in [LossKind::InfoNce, LossKind::Bixse] {
            for seed in cfg.seeds() {
                cells.push((loss, p, seed));
            }
        }
    }
    cfg.pool()?.install(|| {
        cells
            .par_iter()
            .map(|&(loss, p, seed)| {
                let noisy = inject_label_noise(&pairs, p, seed)?;
                let tc = TrainConfig {
                    loss,
                    seed,
                    hard_negatives: 1,
                    ..cfg.train.clone()
                };
                let (ndcg, _) = run_cell(&data, &noisy, &tc, cfg.k)?;
                Ok(NoiseRow { loss, p, seed, ndcg })
            })
            .collect()
    })
}

pub fn noise_csv(rows: &[NoiseRow], k: usize) -> String {
    let mut out = format!("loss,p,seed,{}\n", ndcg_header(k));
    for r in rows {
        writeln!(out, "{},{},{},{}", r.loss, r.p, r.seed, r.ndcg).unwrap();
    }
    out
}

/// Median nDCG at the smallest `p` minus median nDCG at the largest.
pub fn noise_degradation(rows: &[NoiseRow], loss: LossKind) -> f64 {
    let at = |p: f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.loss == loss && r.p == p).map(|r| r.ndcg).collect();
        median(&v)
    };
    let ps = rows.iter().filter(|r| r.loss == loss).map(|r| r.p);
    let lo = ps.clone().fold(f64::INFINITY, f64::min);
    let hi = ps.fold(f64::NEG_INFINITY, f64::max);
    at(lo) - at(hi)
}

// --------------------------------------------------------------- cutoff

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffRow {
    pub loss: LossKind,
    pub cutoff: f64,
    pub seed: u64,
    pub ndcg: f64,
    pub retained: usize,
}

/// Filters the labeled pairs by minimum relevance (binarized for InfoNCE,
/// graded for BiXSE), subsamples every cutoff to a common size, trains and
/// evaluates.
pub fn sweep_cutoff(cfg: &SweepConfig, cutoffs: &[f64]) -> Result<Vec<CutoffRow>> {
    cfg.validate()?;
    let data = synth_generate(&cfg.synth)?;
    let mut prepared = Vec::new();
    for (loss, mode) in [(LossKind::InfoNce, CutoffMode::Binarize), (LossKind::Bixse, CutoffMode::KeepGraded)] {
        let mut per_seed = Vec::new();
        for seed in cfg.seeds() {
            let sets = cutoffs
                .iter()
                .map(|&c| filter_by_cutoff(&data.records, c, mode))
                .collect::<Result<Vec<_>>>()?;
            per_seed.push(subsample_to_match(&sets, seed));
        }
        prepared.push((loss, per_seed));
    }

    let mut cells = Vec::new();
    for (ci, &cutoff) in cutoffs.iter().enumerate() {
        for (li, (loss, _)) in prepared.iter().enumerate() {
            for (si, seed) in cfg.seeds().enumerate() {
                cells.push((*loss, cutoff, seed, &prepared[li].1[si][ci]));
            }
        }
    }
    cfg.pool()?.install(|| {
        cells
            .par_iter()
            .map(|&(loss, cutoff, seed, records)| {
                let tc = TrainConfig {
                    loss,
                    seed,
                    ..cfg.train.clone()
                };
                let (ndcg, _) = run_cell(&data, records, &tc, cfg.k)?;
                Ok(CutoffRow {
                    loss,
                    cutoff,
                    seed,
                    ndcg,
                    retained: records.len(),
                })
            })
            .collect()
    })
}

pub fn cutoff_csv(rows: &[CutoffRow], k: usize) -> String {
    let mut out = format!("loss,cutoff,seed,{},retained_count\n", ndcg_header(k));
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.loss, r.cutoff, r.seed, r.ndcg, r.retained).unwrap();
    }
    out
}

/// Median nDCG per cutoff for one loss, in grid order.
pub fn cutoff_medians(rows: &[CutoffRow], loss: LossKind) -> Vec<(f64, f64)> {
    let mut cutoffs: Vec<f64> = Vec::new();
    for r in rows.iter().filter(|r| r.loss == loss) {
        if !cutoffs.contains(&r.cutoff) {
            cutoffs.push(r.cutoff);
        }
    }
    cutoffs
        .into_iter()
        .map(|c| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.loss == loss && r.cutoff == c)
                .map(|r| r.ndcg)
                .collect();
            (c, median(&v))
        })
        .collect()
}

/// Grid index of the best median; ties go to the stricter cutoff, so two
/// cutoffs that select identical data never make the lower one look best.
pub fn best_index(medians: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(_, m)) in medians.iter().enumerate() {
        if best.is_none_or(|b| m >= medians[b].1) {
            best = Some(i);
        }
    }
    best
}

// ------------------------------------------------------------ batchgrid

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchGridRow {
    pub loss: LossKind,
    pub hard_negatives: usize,
    pub batch: usize,
    pub seed: u64,
    /// `None` when the cell failed; `status` names the error.
    pub ndcg: Option<f64>,
    pub status: String,
}

/// Trains each loss at each `(hard_negatives, batch)` grid point. Cells whose
/// objective rejects the configuration are reported as failed rows.
pub fn sweep_batch_grid(cfg: &SweepConfig, losses: &[LossKind], grid: &[(usize, usize)]) -> Result<Vec<BatchGridRow>> {
    cfg.validate()?;
    let max_k = grid.iter().map(|g| g.0).max().unwrap_or(0);
    if cfg.synth.hard_negatives < max_k {
        return Err(Error::NotEnoughNegatives {
            query_id: "*".into(),
            found: cfg.synth.hard_negatives,
            required: max_k,
        });
    }
    let data = synth_generate(&cfg.synth)?;
    let min_batch = grid.iter().map(|g| g.1).min().unwrap_or(1);
    let mut cells = Vec::new();
    for &loss in losses {
        for &(k, b) in grid {
            for seed in cfg.seeds() {
                cells.push((loss, k, b, seed));
            }
        }
    }
    cfg.pool()?.install(|| {
        cells
            .par_iter()
            .map(|&(loss, k, b, seed)| {
                let epochs = if cfg.equal_steps {
                    cfg.train.epochs * b / min_batch
                } else {
                    cfg.train.epochs
                };
                let tc = TrainConfig {
                    loss,
                    seed,
                    hard_negatives: k,
                    batch: b,
                    epochs,
                    ..cfg.train.clone()
                };
                let res = tc.validate().and_then(|_| run_cell(&data, &data.records, &tc, cfg.k));
                let (ndcg, status) = match res {
                    Ok((n, _)) => (Some(n), "ok".to_owned()),
                    Err(e) if e.is_user_error() => (None, error_tag(&e)),
                    Err(e) => return Err(e),
                };
                Ok(BatchGridRow {
                    loss,
                    hard_negatives: k,
                    batch: b,
                    seed,
                    ndcg,
                    status,
                })
            })
            .collect()
    })
}

fn error_tag(e: &Error) -> String {
    let dbg = format!("{e:?}");
    let name: String = dbg.chars().take_while(|c| c.is_alphanumeric()).collect();
    format!("failed:{name}")
}

pub fn batch_grid_csv(rows: &[BatchGridRow], k: usize) -> String {
    let mut out = format!("loss,hard_negatives,batch,seed,{},status\n", ndcg_header(k));
    for r in rows {
        let n = r.ndcg.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", r.loss, r.hard_negatives, r.batch, r.seed, n, r.status).unwrap();
    }
    out
}

/// Median nDCG per grid point for one loss, skipping failed cells.
pub fn batch_grid_medians(rows: &[BatchGridRow], loss: LossKind) -> Vec<((usize, usize), f64)> {
    let mut points: Vec<(usize, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.loss == loss) {
        if !points.contains(&(r.hard_negatives, r.batch)) {
            points.push((r.hard_negatives, r.batch));
        }
    }
    points
        .into_iter()
        .map(|pt| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.loss == loss && (r.hard_negatives, r.batch) == pt)
                .filter_map(|r| r.ndcg)
                .collect();
            (pt, median(&v))
        })
        .collect()
}

// --------------------------------------------------------------- biaslr

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasLrRow {
    pub multiplier: f64,
    pub seed: u64,
    pub ndcg: f64,
    pub beta: f64,
}

/// BiXSE trained at each bias learning-rate multiplier.
pub fn sweep_bias_lr(cfg: &SweepConfig, multipliers: &[f64]) -> Result<Vec<BiasLrRow>> {
    cfg.validate()?;
    let data = synth_generate(&cfg.synth)?;
    let mut cells = Vec::new();
    for &m in multipliers {
        for seed in cfg.seeds() {
            cells.push((m, seed));
        }
    }
    cfg.pool()?.install(|| {
        cells
            .par_iter()
            .map(|&(multiplier, seed)| {
                let tc = TrainConfig {
                    loss: LossKind::Bixse,
                    seed,
                    beta_lr_multiplier: multiplier,
                    ..cfg.train.clone()
                };
                let (ndcg, beta) = run_cell(&data, &data.records, &tc, cfg.k)?;
                Ok(BiasLrRow {
                    multiplier,
                    seed,
                    ndcg,
                    beta,
                })
            })
            .collect()
    })
}

pub fn bias_lr_csv(rows: &[BiasLrRow], k: usize) -> String {
    let mut out = format!("beta_lr_multiplier,seed,{},beta\n", ndcg_header(k));
    for r in rows {
        writeln!(out, "{},{},{},{}", r.multiplier, r.seed, r.ndcg, r.beta).unwrap();
    }
    out
}

// ------------------------------------------------------------ gradcheck

pub fn sweep_gradcheck(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    LossKind::ALL.iter().map(|&k| grad_check(k, cfg)).collect()
}

pub fn gradcheck_csv(rows: &[GradCheckReport]) -> String {
    let mut out = String::from("loss,max_rel_error,max_abs_error,parameters,beta_analytic,beta_numeric\n");
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{},{},{}",
            r.loss, r.max_rel_error, r.max_abs_error, r.parameters, r.beta_analytic, r.beta_numeric
        )
        .unwrap();
    }
    out
}
