//! Retrieval evaluation: TREC qrels and run files, exhaustive cosine
//! retrieval, nDCG@k, and the experiment sweeps.

mod metrics;
mod retrieve;
pub mod sweeps;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use metrics::{dcg, ndcg_at_k, NdcgReport};
pub use retrieve::{evaluate_run, retrieve_topk, MetricsRow};

/// Integer relevance grades per (query, document).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
    max_grade: u32,
}

impl Qrels {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.max_grade = self.max_grade.max(grade);
        self.judgments
            .entry(query_id.to_owned())
            .or_default()
            .insert(doc_id.to_owned(), grade);
    }

    pub(crate) fn set_max_grade(&mut self, g: u32) {
        self.max_grade = self.max_grade.max(g);
    }

    pub fn max_grade(&self) -> u32 {
        self.max_grade
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Parses `query_id 0 doc_id grade` lines. Blank lines are skipped.
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut q = Qrels::default();
        for (idx, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [qid, _, did, grade] = fields[..] else {
                return Err((idx + 1, format!("expected 4 fields, got {}", fields.len())));
            };
            let grade: i64 = grade
                .parse()
                .map_err(|_| (idx + 1, format!("grade `{grade}` is not an integer")))?;
            // negative grades are treated as unjudged-irrelevant
            q.insert(qid, did, grade.max(0) as u32);
        }
        Ok(q)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|(line, message)| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })
    }

    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                writeln!(out, "{q} 0 {d} {g}").unwrap();
            }
        }
        out
    }
}

/// Ranked retrieval output: per query, `(doc_id, score)` by descending score
/// with ties broken by ascending `doc_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRanking {
    pub rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunRanking {
    /// Sorts each query's list into canonical order and drops duplicate
    /// documents, keeping the best-scored copy.
    pub fn from_unsorted(raw: BTreeMap<String, Vec<(String, f64)>>) -> Self {
        let rankings = raw
            .into_iter()
            .map(|(q, mut list)| {
                sort_ranked(&mut list);
                let mut seen = std::collections::BTreeSet::new();
                list.retain(|(d, _)| seen.insert(d.clone()));
                (q, list)
            })
            .collect();
        Self { rankings }
    }

    /// TREC six-column format: `query_id Q0 doc_id rank score tag`.
    pub fn to_trec(&self, tag: &str) -> String {
        let mut out = String::new();
        for (q, list) in &self.rankings {
            for (r, (d, s)) in list.iter().enumerate() {
                writeln!(out, "{q} Q0 {d} {} {s} {tag}", r + 1).unwrap();
            }
        }
        out
    }
}

pub(crate) fn sort_ranked(list: &mut [(String, f64)]) {
    list.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}
