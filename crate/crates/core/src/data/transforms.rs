use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GradedRecord;
use crate::embed::TextItem;
use crate::error::{Error, Result};

/// Swaps the labeled document with the single hard negative. Labels stay
/// with their slots, so the new labeled document gets the old positive's
/// relevance. Applying it twice restores the record.
pub fn flip_record(rec: &GradedRecord) -> GradedRecord {
    let mut out = rec.clone();
    let neg = &mut out.hard_negatives[0];
    std::mem::swap(&mut out.doc_id, &mut neg.doc_id);
    std::mem::swap(&mut out.doc, &mut neg.doc);
    out
}

/// Independently flips each record with probability `p`.
pub fn inject_label_noise(records: &[GradedRecord], p: f64, seed: u64) -> Result<Vec<GradedRecord>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ConfigInvalid(format!("flip probability {p} outside [0, 1]")));
    }
    for r in records {
        if r.hard_negatives.len() != 1 {
            return Err(Error::NeedsOneNegative {
                found: r.hard_negatives.len(),
            });
        }
        for z in [r.relevance, r.hard_negatives[0].relevance] {
            if z != 0.0 && z != 1.0 {
                return Err(Error::NeedsBinary { value: z });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(records
        .iter()
        .map(|r| {
            if rng.random::<f64>() < p {
                flip_record(r)
            } else {
                r.clone()
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffMode {
    /// Survivors get relevance 1.0.
    Binarize,
    /// Survivors keep their graded relevance.
    KeepGraded,
}

/// Drops records whose labeled relevance is below `cutoff`. Hard negatives
/// are left untouched.
pub fn filter_by_cutoff(records: &[GradedRecord], cutoff: f64, mode: CutoffMode) -> Result<Vec<GradedRecord>> {
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(Error::ConfigInvalid(format!("cutoff {cutoff} outside [0, 1]")));
    }
    let out: Vec<GradedRecord> = records
        .iter()
        .filter(|r| r.relevance >= cutoff)
        .map(|r| {
            let mut r = r.clone();
            if mode == CutoffMode::Binarize {
                r.relevance = 1.0;
            }
            r
        })
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyResult { cutoff });
    }
    Ok(out)
}

/// Uniformly subsamples every set down to the smallest set's size. Selected
/// items keep their original relative order.
pub fn subsample_to_match<T: Clone>(sets: &[Vec<T>], seed: u64) -> Vec<Vec<T>> {
    let Some(target) = sets.iter().map(Vec::len).min() else {
        return Vec::new();
    };
    sets.iter()
        .enumerate()
        .map(|(s, set)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (s as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut idx: Vec<usize> = (0..set.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(target);
            idx.sort_unstable();
            idx.into_iter().map(|i| set[i].clone()).collect()
        })
        .collect()
}

/// Keeps records whose labeled relevance is at least `threshold`, relabels
/// them 1.0, and attaches the first hard negative with relevance 0.
/// Records without such a negative are dropped.
pub fn to_binary_pairs(records: &[GradedRecord], threshold: f64) -> Vec<GradedRecord> {
    records
        .iter()
        .filter(|r| r.relevance >= threshold)
        .filter_map(|r| {
            let neg = r.hard_negatives.iter().find(|h| h.relevance == 0.0)?;
            let mut out = r.clone();
            out.relevance = 1.0;
            out.hard_negatives = vec![neg.clone()];
            Some(out)
        })
        .collect()
}

/// A training batch whose records each carry exactly `hard_negatives`
/// negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub records: Vec<GradedRecord>,
    pub hard_negatives: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn query_items(&self, instructions: &BTreeMap<String, String>) -> Vec<TextItem> {
        self.records
            .iter()
            .map(|r| r.query_item(instructions.get(&r.task).map(String::as_str)))
            .collect()
    }

    /// Labeled documents first, then each query's hard negatives in order,
    /// matching the score and label matrix column layout.
    pub fn doc_items(&self) -> Vec<TextItem> {
        let mut docs: Vec<TextItem> = self.records.iter().map(GradedRecord::doc_item).collect();
        for r in &self.records {
            docs.extend(r.hard_negatives.iter().map(|h| TextItem {
                id: h.doc_id.clone(),
                text: h.doc.clone(),
                instruction: None,
                task: r.task.clone(),
            }));
        }
        docs
    }
}

/// Seeded shuffle into full batches of `batch_size`; trailing partial batches
/// are dropped. With `task_conditioned`, every batch is drawn from a single
/// task.
pub fn make_batches(
    records: &[GradedRecord],
    batch_size: usize,
    hard_negatives: usize,
    seed: u64,
    task_conditioned: bool,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::ConfigInvalid("batch size must be at least 1".into()));
    }
    for r in records {
        if r.hard_negatives.len() < hard_negatives {
            return Err(Error::NotEnoughNegatives {
                query_id: r.query_id.clone(),
                found: r.hard_negatives.len(),
                required: hard_negatives,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truncate = |r: &GradedRecord| {
        let mut r = r.clone();
        r.hard_negatives.truncate(hard_negatives);
        r
    };

    let groups: Vec<Vec<&GradedRecord>> = if task_conditioned {
        let mut by_task: BTreeMap<&str, Vec<&GradedRecord>> = BTreeMap::new();
        for r in records {
            by_task.entry(r.task.as_str()).or_default().push(r);
        }
        by_task.into_values().collect()
    } else {
        vec![records.iter().collect()]
    };

    let mut batches = Vec::new();
    for mut group in groups {
        group.shuffle(&mut rng);
        for chunk in group.chunks_exact(batch_size) {
            batches.push(Batch {
                records: chunk.iter().map(|r| truncate(r)).collect(),
                hard_negatives,
            });
        }
    }
    if task_conditioned {
        batches.shuffle(&mut rng);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{HardNegative, Origin};

    fn rec(i: usize, z: f64, negs: &[f64], task: &str) -> GradedRecord {
        GradedRecord {
            query_id: format!("q{i}"),
            doc_id: format!("d{i}"),
            query: format!("query {i}"),
            doc: format!("doc {i}"),
            task: task.into(),
            relevance: z,
            hard_negatives: negs
                .iter()
                .enumerate()
                .map(|(k, &r)| HardNegative {
                    doc_id: format!("n{i}-{k}"),
                    doc: format!("neg {i} {k}"),
                    relevance: r,
                })
                .collect(),
            origin: Origin::Labeled,
        }
    }

    fn binary_set(n: usize) -> Vec<GradedRecord> {
        (0..n).map(|i| rec(i, 1.0, &[0.0], "t")).collect()
    }

    #[test]
    fn noise_extremes() {
        let recs = binary_set(50);
        assert_eq!(inject_label_noise(&recs, 0.0, 1).unwrap(), recs);
        let all = inject_label_noise(&recs, 1.0, 1).unwrap();
        for (a, b) in recs.iter().zip(&all) {
            assert_eq!(b.doc_id, a.hard_negatives[0].doc_id);
            assert_eq!(b.hard_negatives[0].doc_id, a.doc_id);
            assert_eq!(b.relevance, 1.0);
            assert_eq!(b.hard_negatives[0].relevance, 0.0);
        }
    }

    #[test]
    fn noise_flip_count_binomial() {
        let recs = binary_set(10_000);
        let noisy = inject_label_noise(&recs, 0.3, 42).unwrap();
        let flips = recs.iter().zip(&noisy).filter(|(a, b)| a.doc_id != b.doc_id).count();
        let sigma = (10_000.0f64 * 0.3 * 0.7).sqrt();
        assert!((flips as f64 - 3000.0).abs() < 3.0 * sigma, "flips = {flips}");
        assert_eq!(noisy, inject_label_noise(&recs, 0.3, 42).unwrap());
    }

    #[test]
    fn flip_is_involution() {
        let r = rec(3, 1.0, &[0.0], "t");
        assert_ne!(flip_record(&r), r);
        assert_eq!(flip_record(&flip_record(&r)), r);
    }

    #[test]
    fn noise_preconditions() {
        let err = inject_label_noise(&[rec(0, 0.5, &[0.0], "t")], 0.1, 0).unwrap_err();
        assert!(matches!(err, Error::NeedsBinary { .. }));
        let err = inject_label_noise(&[rec(0, 1.0, &[0.0, 0.0], "t")], 0.1, 0).unwrap_err();
        assert!(matches!(err, Error::NeedsOneNegative { found: 2 }));
    }

    #[test]
    fn cutoff_examples() {
        let recs = vec![rec(0, 0.3, &[], "t"), rec(1, 0.7, &[0.2], "t"), rec(2, 0.95, &[], "t")];
        assert_eq!(filter_by_cutoff(&recs, 0.0, CutoffMode::KeepGraded).unwrap(), recs);
        let kept = filter_by_cutoff(&recs, 0.7, CutoffMode::Binarize).unwrap();
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|r| r.relevance == 1.0));
        assert_eq!(kept[0].hard_negatives[0].relevance, 0.2);
        let kept = filter_by_cutoff(&recs, 0.9, CutoffMode::KeepGraded).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].relevance, 0.95);
        assert!(matches!(
            filter_by_cutoff(&recs, 0.99, CutoffMode::KeepGraded),
            Err(Error::EmptyResult { .. })
        ));
    }

    #[test]
    fn subsample_examples() {
        let a: Vec<usize> = (0..100).collect();
        let b: Vec<usize> = (0..50).collect();
        let out = subsample_to_match(&[a.clone(), b.clone()], 9);
        assert_eq!(out[0].len(), 50);
        assert_eq!(out[1], b);
        assert_eq!(out, subsample_to_match(&[a.clone(), b], 9));
        let same = subsample_to_match(&[a.clone(), a.clone()], 3);
        assert_eq!(same[0], a);
        assert!(subsample_to_match::<u8>(&[], 0).is_empty());
    }

    #[test]
    fn batching_floor_and_determinism() {
        let recs: Vec<_> = (0..10).map(|i| rec(i, 1.0, &[0.0, 0.5], "t")).collect();
        let bs = make_batches(&recs, 4, 1, 7, false).unwrap();
        assert_eq!(bs.len(), 2);
        assert!(bs.iter().all(|b| b.len() == 4 && b.records.iter().all(|r| r.hard_negatives.len() == 1)));
        assert_eq!(bs, make_batches(&recs, 4, 1, 7, false).unwrap());
        assert_ne!(bs, make_batches(&recs, 4, 1, 8, false).unwrap());
        let err = make_batches(&recs, 4, 3, 7, false).unwrap_err();
        assert!(matches!(err, Error::NotEnoughNegatives { required: 3, .. }));
    }

    #[test]
    fn task_conditioned_batches_are_single_task() {
        let mut recs: Vec<_> = (0..6).map(|i| rec(i, 1.0, &[], "A")).collect();
        recs.extend((6..12).map(|i| rec(i, 1.0, &[], "B")));
        let bs = make_batches(&recs, 4, 0, 1, true).unwrap();
        assert_eq!(bs.len(), 2);
        for b in &bs {
            let task = &b.records[0].task;
            assert!(b.records.iter().all(|r| &r.task == task));
        }
    }

    #[test]
    fn doc_layout_matches_label_columns() {
        let recs = vec![rec(0, 1.0, &[0.1, 0.2], "t"), rec(1, 0.5, &[0.3, 0.4], "t")];
        let b = Batch {
            records: recs,
            hard_negatives: 2,
        };
        let ids: Vec<_> = b.doc_items().into_iter().map(|d| d.id).collect();
        assert_eq!(ids, ["d0", "d1", "n0-0", "n0-1", "n1-0", "n1-1"]);
        let mut ins = BTreeMap::new();
        ins.insert("t".to_string(), "find".to_string());
        assert_eq!(b.query_items(&ins)[0].encoder_input(), "find: query 0");
    }

    #[test]
    fn binary_pairs() {
        let recs = vec![rec(0, 1.0, &[0.5, 0.0], "t"), rec(1, 0.75, &[0.0], "t"), rec(2, 1.0, &[0.25], "t")];
        let out = to_binary_pairs(&recs, 1.0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].hard_negatives.len(), 1);
        assert_eq!(out[0].hard_negatives[0].doc_id, "n0-1");
    }
}
