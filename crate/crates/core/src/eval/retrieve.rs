use std::collections::BTreeMap;

use serde::Serialize;

use super::{ndcg_at_k, sort_ranked, Qrels, RunRanking};
use crate::embed::{encode_batch, EncoderParams, TextItem};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Exhaustive cosine retrieval. Scale and bias are left out: they cannot
/// change the ordering.
pub fn retrieve_topk(
    queries: &[TextItem],
    corpus: &[TextItem],
    params: &EncoderParams,
    k: usize,
) -> Result<RunRanking> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if k == 0 {
        return Err(Error::ConfigInvalid("k must be at least 1".into()));
    }
    let q = encode_batch(queries, params)?;
    let d = encode_batch(corpus, params)?;
    let ids: Vec<&str> = corpus.iter().map(|c| c.id.as_str()).collect();
    Ok(rank_embeddings(queries, &q.rows, &ids, &d.rows, k, |s| s))
}

/// Ranks precomputed unit rows; `transform` is applied to every similarity
/// before sorting.
pub(crate) fn rank_embeddings(
    queries: &[TextItem],
    q: &Matrix,
    doc_ids: &[&str],
    d: &Matrix,
    k: usize,
    transform: impl Fn(f64) -> f64,
) -> RunRanking {
    let mut rankings = BTreeMap::new();
    for (i, item) in queries.iter().enumerate() {
        let qi = q.row(i);
        let mut list: Vec<(String, f64)> = doc_ids
            .iter()
            .zip(d.iter_rows())
            .map(|(id, row)| ((*id).to_owned(), transform(dot(qi, row))))
            .collect();
        sort_ranked(&mut list);
        list.truncate(k);
        rankings.insert(item.id.clone(), list);
    }
    RunRanking { rankings }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub k: usize,
    pub ndcg: f64,
    /// Queries with at least one relevant judgment, i.e. those averaged.
    pub evaluated: usize,
    pub skipped: usize,
    pub queries: usize,
    /// Fraction of retrieved documents that carry a judgment.
    pub judged_coverage: f64,
}

pub fn evaluate_run(
    params: &EncoderParams,
    queries: &[TextItem],
    corpus: &[TextItem],
    qrels: &Qrels,
    k: usize,
) -> Result<(MetricsRow, RunRanking)> {
    let run = retrieve_topk(queries, corpus, params, k)?;
    let report = ndcg_at_k(&run, qrels, k);
    let (mut judged, mut total) = (0usize, 0usize);
    for (q, list) in &run.rankings {
        total += list.len();
        judged += list.iter().filter(|(d, _)| qrels.grade(q, d).is_some()).count();
    }
    let row = MetricsRow {
        k,
        ndcg: report.mean,
        evaluated: report.per_query.len(),
        skipped: report.skipped,
        queries: queries.len(),
        judged_coverage: if total == 0 { 0.0 } else { judged as f64 / total as f64 },
    };
    Ok((row, run))
}
