//! Synthetic graded-relevance corpus.
//!
//! The vocabulary is split into `topics` equal blocks. A document has a
//! dominant topic carrying weight `w` (a relevance level); the remaining
//! `1 - w` is spread evenly over all topics, and each token is drawn by
//! first picking a topic from that mixture and then a word uniformly inside
//! the topic's block. A query draws all of its tokens from one topic block.
//! The relevance of a document to a query is the document's mixture weight
//! on the query's topic, snapped to the nearest configured level.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GradedRecord, HardNegative, Origin};
use crate::embed::TextItem;
use crate::error::{Error, Result};
use crate::eval::Qrels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub topics: usize,
    pub vocab: usize,
    pub doc_len: usize,
    pub query_len: usize,
    /// Documents in the retrieval corpus used for evaluation.
    pub corpus_size: usize,
    /// Training queries; one record each.
    pub queries: usize,
    /// Held-out test queries scored against the corpus.
    pub eval_queries: usize,
    /// Held-out validation queries used for model selection.
    pub val_queries: usize,
    /// Hard negatives attached to each training record.
    pub hard_negatives: usize,
    /// Probability that a hard negative shares the query's dominant topic.
    pub hard_negative_topic_rate: f64,
    /// Sorted relevance levels; must contain 0 and 1.
    pub levels: Vec<f64>,
    /// Sampling weight of each level; uniform when empty.
    pub level_weights: Vec<f64>,
    /// Distinct task tags assigned round-robin to training queries.
    pub tasks: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topics: 8,
            vocab: 512,
            doc_len: 24,
            query_len: 4,
            corpus_size: 2000,
            queries: 2000,
            eval_queries: 200,
            val_queries: 100,
            hard_negatives: 3,
            hard_negative_topic_rate: 0.5,
            levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            level_weights: Vec::new(),
            tasks: 1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.topics < 2 {
            return bad("need at least two topics".into());
        }
        if self.vocab == 0 || self.vocab % self.topics != 0 {
            return bad(format!("vocab {} not divisible by topics {}", self.vocab, self.topics));
        }
        if self.doc_len == 0 || self.query_len == 0 {
            return bad("lengths must be at least 1".into());
        }
        if self.tasks == 0 {
            return bad("need at least one task".into());
        }
        if self.levels.len() < 2 {
            return bad("need at least two relevance levels".into());
        }
        if self.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return bad(format!("levels {:?} not strictly increasing", self.levels));
        }
        if self.levels[0] != 0.0 || *self.levels.last().unwrap() != 1.0 {
            return bad(format!("levels {:?} must span 0 and 1", self.levels));
        }
        if !self.level_weights.is_empty() {
            if self.level_weights.len() != self.levels.len() {
                return bad("one weight per level required".into());
            }
            if self.level_weights.iter().any(|w| !(*w >= 0.0)) || self.level_weights.iter().sum::<f64>() <= 0.0 {
                return bad("level weights must be nonnegative with positive sum".into());
            }
        }
        if !(0.0..=1.0).contains(&self.hard_negative_topic_rate) {
            return bad("hard_negative_topic_rate outside [0, 1]".into());
        }
        Ok(())
    }

    pub fn level_probabilities(&self) -> Vec<f64> {
        let w: Vec<f64> = if self.level_weights.is_empty() {
            vec![1.0; self.levels.len()]
        } else {
            self.level_weights.clone()
        };
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub corpus: Vec<TextItem>,
    /// Test queries.
    pub queries: Vec<TextItem>,
    pub val_queries: Vec<TextItem>,
    pub records: Vec<GradedRecord>,
    /// Grades of corpus documents for test and validation queries.
    pub qrels: Qrels,
    pub vocab: Vec<String>,
}

impl SynthData {
    /// Topic block of a vocabulary word, if it belongs to the vocabulary.
    pub fn word_topic(&self, word: &str, topics: usize) -> Option<usize> {
        let block = self.vocab.len() / topics;
        self.vocab.iter().position(|w| w == word).map(|i| i / block)
    }
}

/// Weight `w` on `dominant` plus `(1 - w) / topics` on every topic.
pub fn topic_mixture(topics: usize, dominant: usize, w: f64) -> Vec<f64> {
    let rest = (1.0 - w) / topics as f64;
    (0..topics)
        .map(|t| if t == dominant { w + rest } else { rest })
        .collect()
}

/// Index of the level nearest to `w`; ties go to the lower level.
pub fn snap_to_level(w: f64, levels: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in levels.iter().enumerate() {
        if (w - l).abs() < (w - levels[best]).abs() {
            best = i;
        }
    }
    best
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    vocab: Vec<String>,
    levels: WeightedIndex<f64>,
}

struct Doc {
    text: String,
    mixture: Vec<f64>,
}

impl Generator<'_> {
    fn block(&self) -> usize {
        self.cfg.vocab / self.cfg.topics
    }

    fn word(&mut self, topic: usize) -> &str {
        let i = topic * self.block() + self.rng.random_range(0..self.block());
        &self.vocab[i]
    }

    fn doc(&mut self, dominant: usize, w: f64) -> Doc {
        let mixture = topic_mixture(self.cfg.topics, dominant, w);
        let pick = WeightedIndex::new(&mixture).expect("mixture has positive mass");
        let words: Vec<String> = (0..self.cfg.doc_len)
            .map(|_| {
                let t = pick.sample(&mut self.rng);
                self.word(t).to_owned()
            })
            .collect();
        Doc {
            text: words.join(" "),
            mixture,
        }
    }

    fn query(&mut self, topic: usize) -> String {
        let words: Vec<String> = (0..self.cfg.query_len).map(|_| self.word(topic).to_owned()).collect();
        words.join(" ")
    }

    fn level(&mut self) -> usize {
        self.levels.sample(&mut self.rng)
    }

    fn relevance(&self, doc: &Doc, topic: usize) -> usize {
        snap_to_level(doc.mixture[topic], &self.cfg.levels)
    }
}

/// Distinct pronounceable-ish lowercase words, so trigram features rarely
/// collide across words.
fn make_vocab(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    const C: &[u8] = b"bcdfghjklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(C[rng.random_range(0..C.len())] as char);
            w.push(V[rng.random_range(0..V.len())] as char);
        }
        if rng.random_bool(0.5) {
            w.push(C[rng.random_range(0..C.len())] as char);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = make_vocab(cfg.vocab, &mut rng);
    let levels = WeightedIndex::new(cfg.level_probabilities())
        .map_err(|e| Error::ConfigInvalid(format!("level weights: {e}")))?;
    let mut g = Generator {
        cfg,
        rng,
        vocab,
        levels,
    };
    let top = cfg.levels.len() - 1;

    let mut records = Vec::with_capacity(cfg.queries);
    for qi in 0..cfg.queries {
        let topic = g.rng.random_range(0..cfg.topics);
        let query = g.query(topic);
        let li = g.level();
        let doc = g.doc(topic, cfg.levels[li]);
        let relevance = cfg.levels[g.relevance(&doc, topic)];
        let mut hard_negatives = Vec::with_capacity(cfg.hard_negatives);
        for k in 0..cfg.hard_negatives {
            let dominant = if g.rng.random_bool(cfg.hard_negative_topic_rate) {
                topic
            } else {
                let other = g.rng.random_range(0..cfg.topics - 1);
                if other >= topic {
                    other + 1
                } else {
                    other
                }
            };
            let lk = g.level();
            let neg = g.doc(dominant, cfg.levels[lk]);
            hard_negatives.push(HardNegative {
                doc_id: format!("t{qi}-n{k}"),
                relevance: cfg.levels[g.relevance(&neg, topic)],
                doc: neg.text,
            });
        }
        records.push(GradedRecord {
            query_id: format!("t{qi}"),
            doc_id: format!("t{qi}-p"),
            query,
            doc: doc.text,
            task: format!("synth{}", qi % cfg.tasks),
            relevance,
            hard_negatives,
            origin: Origin::Synthetic,
        });
    }

    let mut corpus_docs = Vec::with_capacity(cfg.corpus_size);
    let mut corpus = Vec::with_capacity(cfg.corpus_size);
    for ci in 0..cfg.corpus_size {
        let dominant = g.rng.random_range(0..cfg.topics);
        let li = g.level();
        let doc = g.doc(dominant, cfg.levels[li]);
        corpus.push(TextItem::new(format!("c{ci}"), doc.text.clone()));
        corpus_docs.push(doc);
    }

    let mut qrels = Qrels::default();
    let mut held_out = |prefix: &str, n: usize, g: &mut Generator| {
        let mut items = Vec::with_capacity(n);
        for qi in 0..n {
            let topic = g.rng.random_range(0..cfg.topics);
            let id = format!("{prefix}{qi}");
            items.push(TextItem::new(id.clone(), g.query(topic)));
            for (ci, doc) in corpus_docs.iter().enumerate() {
                let grade = g.relevance(doc, topic);
                if grade > 0 {
                    qrels.insert(&id, &format!("c{ci}"), grade as u32);
                }
            }
        }
        items
    };
    let queries = held_out("e", cfg.eval_queries, &mut g);
    let val_queries = held_out("v", cfg.val_queries, &mut g);
    qrels.set_max_grade(top as u32);

    Ok(SynthData {
        corpus,
        queries,
        val_queries,
        records,
        qrels,
        vocab: g.vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            queries: 300,
            corpus_size: 200,
            eval_queries: 20,
            val_queries: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&small()).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.qrels, b.qrels);
        let c = synth_generate(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn config_validation() {
        let bad = [
            SynthConfig { vocab: 500, ..small() },
            SynthConfig { doc_len: 0, ..small() },
            SynthConfig { levels: vec![0.0, 0.5], ..small() },
            SynthConfig { levels: vec![0.0, 0.7, 0.5, 1.0], ..small() },
            SynthConfig { levels: vec![0.2, 1.0], ..small() },
            SynthConfig { level_weights: vec![1.0], ..small() },
        ];
        for cfg in bad {
            assert!(matches!(synth_generate(&cfg), Err(Error::ConfigInvalid(_))), "{cfg:?}");
        }
    }

    #[test]
    fn snapping() {
        let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
        assert_eq!(snap_to_level(1.0, &levels), 4);
        assert_eq!(snap_to_level(0.0, &levels), 0);
        assert_eq!(snap_to_level(0.125, &levels), 0);
        assert_eq!(snap_to_level(0.13, &levels), 1);
        assert_eq!(snap_to_level(0.7, &levels), 3);
    }

    #[test]
    fn endpoint_relevance() {
        let cfg = small();
        let data = synth_generate(&cfg).unwrap();
        for r in &data.records {
            let qt = data.word_topic(r.query.split(' ').next().unwrap(), cfg.topics).unwrap();
            let on_topic = r
                .doc
                .split(' ')
                .filter(|w| data.word_topic(w, cfg.topics) == Some(qt))
                .count();
            if r.relevance == 1.0 {
                assert_eq!(on_topic, cfg.doc_len);
            }
        }
    }

    #[test]
    fn mixture_snaps_back_to_its_level() {
        let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
        for (i, &w) in levels.iter().enumerate() {
            let m = topic_mixture(8, 3, w);
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(snap_to_level(m[3], &levels), i);
            assert_eq!(snap_to_level(m[5], &levels), 0);
        }
        // all mass elsewhere
        assert_eq!(topic_mixture(8, 3, 1.0)[0], 0.0);
    }

    #[test]
    fn every_query_word_shares_a_topic() {
        let cfg = small();
        let data = synth_generate(&cfg).unwrap();
        for q in data.queries.iter().chain(&data.val_queries) {
            let topics: BTreeSet<_> = q.text.split(' ').map(|w| data.word_topic(w, cfg.topics)).collect();
            assert_eq!(topics.len(), 1);
        }
        assert_eq!(data.qrels.max_grade(), 4);
    }

    #[test]
    fn level_histogram_matches_sampler() {
        let cfg = SynthConfig {
            queries: 10_000,
            corpus_size: 0,
            eval_queries: 0,
            val_queries: 0,
            hard_negatives: 0,
            level_weights: vec![1.0, 2.0, 3.0, 2.0, 2.0],
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        let probs = cfg.level_probabilities();
        let n = data.records.len() as f64;
        for (l, p) in cfg.levels.iter().zip(&probs) {
            let count = data.records.iter().filter(|r| r.relevance == *l).count() as f64;
            let sigma = (n * p * (1.0 - p)).sqrt();
            assert!((count - n * p).abs() < 3.0 * sigma, "level {l}: {count} vs {}", n * p);
        }
    }
}
