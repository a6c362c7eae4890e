use std::collections::BTreeMap;

use super::{Qrels, RunRanking};

/// `sum_r (2^g_r - 1) / log2(1 + r)` over the first `k` grades.
pub fn dcg(grades: impl IntoIterator<Item = u32>, k: usize) -> f64 {
    grades
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(r, g)| ((g as f64).exp2() - 1.0) / ((r + 2) as f64).log2())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdcgReport {
    pub per_query: BTreeMap<String, f64>,
    /// Mean over scored queries; 0 when none were scored.
    pub mean: f64,
    /// Run queries skipped because they have no judged relevant document.
    pub skipped: usize,
}

/// nDCG@k per query. Unjudged retrieved documents count as grade 0; the
/// ideal ordering uses every judged document of the query.
pub fn ndcg_at_k(run: &RunRanking, qrels: &Qrels, k: usize) -> NdcgReport {
    let mut per_query = BTreeMap::new();
    let mut skipped = 0;
    for (qid, list) in &run.rankings {
        let Some(judged) = qrels.get(qid) else {
            skipped += 1;
            continue;
        };
        let mut ideal: Vec<u32> = judged.values().copied().collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg(ideal, k);
        if idcg <= 0.0 {
            skipped += 1;
            continue;
        }
        let got = dcg(list.iter().map(|(d, _)| judged.get(d).copied().unwrap_or(0)), k);
        per_query.insert(qid.clone(), got / idcg);
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    NdcgReport {
        per_query,
        mean,
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(grades_in_run: &[u32], judged: &[(usize, u32)]) -> (RunRanking, Qrels) {
        let mut raw = BTreeMap::new();
        raw.insert(
            "q".to_string(),
            grades_in_run
                .iter()
                .enumerate()
                .map(|(i, _)| (format!("d{i}"), -(i as f64)))
                .collect(),
        );
        let mut q = Qrels::default();
        for &(i, g) in judged {
            q.insert("q", &format!("d{i}"), g);
        }
        (RunRanking::from_unsorted(raw), q)
    }

    fn run_of(grades: &[u32]) -> (RunRanking, Qrels) {
        let judged: Vec<_> = grades.iter().copied().enumerate().collect();
        single(grades, &judged)
    }

    #[test]
    fn ideal_is_one() {
        let (run, q) = run_of(&[3, 2, 1, 0]);
        assert!((ndcg_at_k(&run, &q, 10).mean - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_examples() {
        let (run, q) = run_of(&[0, 3]);
        let r = ndcg_at_k(&run, &q, 2).mean;
        assert!((r - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((r - 0.6309).abs() < 1e-4);

        // DCG = 7/log2(3) + 3/2, IDCG = 7 + 3/log2(3)
        let (run, q) = run_of(&[0, 3, 2]);
        let r = ndcg_at_k(&run, &q, 3).mean;
        let want = (7.0 / 3f64.log2() + 1.5) / (7.0 + 3.0 / 3f64.log2());
        assert!((r - want).abs() < 1e-12);
        assert!((r - 0.6653).abs() < 1e-4);
    }

    #[test]
    fn unjudged_and_skipped() {
        // d0 unjudged, d1 grade 1
        let (run, q) = single(&[0, 0], &[(1, 1)]);
        let r = ndcg_at_k(&run, &q, 10);
        assert!((r.mean - 1.0 / 3f64.log2()).abs() < 1e-12);

        let (run, q) = single(&[0, 0], &[(0, 0)]);
        let r = ndcg_at_k(&run, &q, 10);
        assert_eq!(r.skipped, 1);
        assert!(r.per_query.is_empty());
        assert_eq!(r.mean, 0.0);

        let r = ndcg_at_k(&run, &Qrels::default(), 10);
        assert_eq!(r.skipped, 1);
    }

    proptest! {
        #[test]
        fn bounded_and_swap_monotone(grades in proptest::collection::vec(0u32..4, 2..15),
                                     k in 1usize..12, pos in 0usize..14) {
            let (run, q) = run_of(&grades);
            let base = ndcg_at_k(&run, &q, k);
            if let Some(v) = base.per_query.get("q") {
                prop_assert!((0.0..=1.0 + 1e-12).contains(v));
                let i = pos % (grades.len() - 1);
                if grades[i] < grades[i + 1] {
                    let mut swapped = grades.clone();
                    swapped.swap(i, i + 1);
                    let judged: Vec<_> = swapped.iter().copied().enumerate().collect();
                    let (run2, q2) = single(&swapped, &judged);
                    let after = ndcg_at_k(&run2, &q2, k).per_query["q"];
                    prop_assert!(after >= v - 1e-12);
                }
            }
        }
    }
}
