//! Graded training records: ingestion, LLM score conversion, noise and
//! cutoff transforms, batching, and the synthetic corpus generator.

mod synth;
mod transforms;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::TextItem;
use crate::error::{Error, Result};

pub use synth::{snap_to_level, synth_generate, topic_mixture, SynthConfig, SynthData};
pub use transforms::{
    filter_by_cutoff, flip_record, inject_label_noise, make_batches, subsample_to_match,
    to_binary_pairs, Batch, CutoffMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Labeled,
    Converted,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardNegative {
    pub doc_id: String,
    pub doc: String,
    pub relevance: f64,
}

/// One query, its labeled document and relevance, and optional graded hard
/// negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedRecord {
    pub query_id: String,
    pub doc_id: String,
    pub query: String,
    pub doc: String,
    #[serde(default)]
    pub task: String,
    pub relevance: f64,
    #[serde(default)]
    pub hard_negatives: Vec<HardNegative>,
    pub origin: Origin,
}

impl GradedRecord {
    pub fn validate(&self) -> Result<()> {
        if self.query_id.is_empty() || self.doc_id.is_empty() {
            return Err(Error::InvalidItem("empty query_id or doc_id".into()));
        }
        check_unit(self.relevance)?;
        for h in &self.hard_negatives {
            if h.doc_id.is_empty() {
                return Err(Error::InvalidItem("empty hard-negative doc_id".into()));
            }
            check_unit(h.relevance)?;
        }
        Ok(())
    }

    pub fn query_item(&self, instruction: Option<&str>) -> TextItem {
        TextItem {
            id: self.query_id.clone(),
            text: self.query.clone(),
            instruction: instruction.map(str::to_owned),
            task: self.task.clone(),
        }
    }

    pub fn doc_item(&self) -> TextItem {
        TextItem {
            id: self.doc_id.clone(),
            text: self.doc.clone(),
            instruction: None,
            task: self.task.clone(),
        }
    }
}

fn check_unit(z: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::LabelRange { value: z });
    }
    Ok(())
}

/// Probability mass over a contiguous range of integer scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    probs: BTreeMap<i64, f64>,
}

impl ScoreDistribution {
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(probs: BTreeMap<i64, f64>) -> Result<Self> {
        let (Some(&lo), Some(&hi)) = (probs.keys().next(), probs.keys().next_back()) else {
            return Err(Error::BadDistribution("empty support".into()));
        };
        if (hi - lo + 1) as usize != probs.len() {
            return Err(Error::BadDistribution(format!(
                "support {lo}..={hi} is not contiguous"
            )));
        }
        if hi == lo {
            return Err(Error::BadDistribution("support needs two scores".into()));
        }
        let mut total = 0.0;
        for (&s, &p) in &probs {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::BadDistribution(format!("score {s} has mass {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::BadDistribution(format!("mass sums to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn from_pairs(pairs: &[(i64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().copied().collect())
    }

    /// Uniform mass over `lo..=hi`.
    pub fn uniform(lo: i64, hi: i64) -> Result<Self> {
        let n = (hi - lo + 1) as f64;
        Self::new((lo..=hi).map(|s| (s, 1.0 / n)).collect())
    }

    pub fn probs(&self) -> &BTreeMap<i64, f64> {
        &self.probs
    }

    pub fn min_score(&self) -> i64 {
        *self.probs.keys().next().expect("validated non-empty")
    }

    pub fn max_score(&self) -> i64 {
        *self.probs.keys().next_back().expect("validated non-empty")
    }
}

/// Expected score, rescaled affinely so the smallest score maps to 0 and the
/// largest to 1.
pub fn llm_scores_to_relevance(dist: &ScoreDistribution) -> f64 {
    let expected: f64 = dist.probs.iter().map(|(&s, &p)| s as f64 * p).sum();
    let (lo, hi) = (dist.min_score() as f64, dist.max_score() as f64);
    ((expected - lo) / (hi - lo)).clamp(0.0, 1.0)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    query_id: String,
    doc_id: String,
    query: String,
    doc: String,
    #[serde(default)]
    task: String,
    relevance: Option<f64>,
    score_probs: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    hard_negatives: Vec<RawNegative>,
    origin: Option<Origin>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNegative {
    doc_id: String,
    doc: String,
    relevance: Option<f64>,
    score_probs: Option<BTreeMap<String, f64>>,
}

enum LineError {
    Mixed,
    Other(Error),
}

fn resolve_relevance(
    relevance: Option<f64>,
    score_probs: Option<BTreeMap<String, f64>>,
) -> std::result::Result<(f64, bool), LineError> {
    match (relevance, score_probs) {
        (Some(_), Some(_)) => Err(LineError::Mixed),
        (Some(z), None) => {
            check_unit(z).map_err(LineError::Other)?;
            Ok((z, false))
        }
        (None, Some(raw)) => {
            let mut probs = BTreeMap::new();
            for (k, v) in raw {
                let s: i64 = k.trim().parse().map_err(|_| {
                    LineError::Other(Error::BadDistribution(format!("score key `{k}`")))
                })?;
                probs.insert(s, v);
            }
            let dist = ScoreDistribution::new(probs).map_err(LineError::Other)?;
            Ok((llm_scores_to_relevance(&dist), true))
        }
        (None, None) => Err(LineError::Other(Error::InvalidItem(
            "missing `relevance` or `score_probs`".into(),
        ))),
    }
}

fn parse_record(line: &str) -> std::result::Result<GradedRecord, LineError> {
    let raw: RawRecord = serde_json::from_str(line)
        .map_err(|e| LineError::Other(Error::InvalidItem(e.to_string())))?;
    let (relevance, converted) = resolve_relevance(raw.relevance, raw.score_probs)?;
    let hard_negatives = raw
        .hard_negatives
        .into_iter()
        .map(|n| {
            let (relevance, _) = resolve_relevance(n.relevance, n.score_probs)?;
            Ok(HardNegative {
                doc_id: n.doc_id,
                doc: n.doc,
                relevance,
            })
        })
        .collect::<std::result::Result<Vec<_>, LineError>>()?;
    let origin = raw.origin.unwrap_or(if converted {
        Origin::Converted
    } else {
        Origin::Labeled
    });
    let rec = GradedRecord {
        query_id: raw.query_id,
        doc_id: raw.doc_id,
        query: raw.query,
        doc: raw.doc,
        task: raw.task,
        relevance,
        hard_negatives,
        origin,
    };
    rec.validate().map_err(LineError::Other)?;
    Ok(rec)
}

/// Reads one record per non-blank line. A line may carry `relevance` in
/// `[0, 1]` or `score_probs` (integer score -> probability), never both.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<GradedRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(r) => out.push(r),
            Err(LineError::Mixed) => return Err(Error::MixedSchema { line: lineno }),
            Err(LineError::Other(Error::LabelRange { value })) => {
                return Err(Error::LabelRange { value })
            }
            Err(LineError::Other(e)) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn records_to_jsonl(records: &[GradedRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn items_to_jsonl(items: &[TextItem]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("items serialize"));
        out.push('\n');
    }
    out
}

pub fn load_items(path: impl AsRef<Path>) -> Result<Vec<TextItem>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: TextItem = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        item.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
