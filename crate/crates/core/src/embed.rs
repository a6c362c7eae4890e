//! Toy bi-encoder: hashed character trigrams, a mean-pooled embedding table
//! and L2 normalization.
//!
//! Queries and documents share one table. A score between query `i` and
//! document `j` is `alpha * <q_i, d_j> + beta`, where both embeddings are unit
//! norm. [`encoder_backward`] carries a score-gradient matrix back through the
//! normalization and pooling into a dense table gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Vectors whose norm falls below this are rejected instead of clamped.
pub const NORM_FLOOR: f64 = 1e-12;

pub const DEFAULT_BUCKETS: usize = 4096;
pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_ALPHA: f64 = 20.0;

/// Joins a task instruction to the query text.
pub const INSTRUCTION_SEPARATOR: &str = ": ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextItem {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default)]
    pub task: String,
}

impl TextItem {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            instruction: None,
            task: String::new(),
        }
    }

    pub fn with_instruction(mut self, instruction: impl Into<String>) -> Self {
        self.instruction = Some(instruction.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidItem("empty id".into()));
        }
        if self.text.trim().is_empty() {
            return Err(Error::InvalidItem(format!("item `{}` has empty text", self.id)));
        }
        Ok(())
    }

    /// Text fed to the tokenizer, instruction included.
    pub fn encoder_input(&self) -> String {
        match &self.instruction {
            Some(ins) if !ins.is_empty() => format!("{ins}{INSTRUCTION_SEPARATOR}{}", self.text),
            _ => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `buckets x dim` feature embeddings.
    pub table: Matrix,
    pub alpha: f64,
    pub beta: f64,
    pub hash_seed: u64,
}

impl EncoderParams {
    /// Gaussian table with entries of standard deviation `init_scale`,
    /// `beta = 0`.
    pub fn init(
        buckets: usize,
        dim: usize,
        alpha: f64,
        hash_seed: u64,
        init_seed: u64,
        init_scale: f64,
    ) -> Result<Self> {
        if buckets == 0 || dim == 0 {
            return Err(Error::ConfigInvalid("buckets and dim must be positive".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::ConfigInvalid(format!("alpha must be positive, got {alpha}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let normal = Normal::new(0.0, init_scale)
            .map_err(|e| Error::ConfigInvalid(format!("init scale: {e}")))?;
        let data = (0..buckets * dim).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            table: Matrix::from_vec(buckets, dim, data),
            alpha,
            beta: 0.0,
            hash_seed,
        })
    }

    pub fn buckets(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite() && self.table.is_finite()
    }
}

/// Unit-norm rows plus, when produced by [`encode_batch`], the
/// pre-normalization state needed by [`encoder_backward`].
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    pub rows: Matrix,
    cache: Option<ForwardCache>,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    raw: Matrix,
    norms: Vec<f64>,
    features: Vec<Vec<usize>>,
}

impl EmbeddingMatrix {
    /// Wraps already-normalized rows; the result cannot be back-propagated.
    pub fn from_unit_rows(rows: Matrix) -> Result<Self> {
        for r in rows.iter_rows() {
            let n = dot(r, r).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidItem(format!("row norm {n} is not 1")));
            }
        }
        Ok(Self { rows, cache: None })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Pre-normalization norm of row `i`, if cached.
    pub fn raw_norm(&self, i: usize) -> Option<f64> {
        self.cache.as_ref().map(|c| c.norms[i])
    }
}

/// Per-word character trigrams of the lowercased text. Each whitespace word
/// `w` is padded as `^w$`, so a word of `n` characters yields `n` trigrams.
pub fn trigrams(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for word in lower.split_whitespace() {
        let padded: Vec<char> = std::iter::once('^')
            .chain(word.chars())
            .chain(std::iter::once('$'))
            .collect();
        for w in padded.windows(3) {
            out.push(w.iter().collect());
        }
    }
    out
}

/// Feature ids in `[0, buckets)` for every trigram of `text`, in order.
pub fn tokenize(text: &str, buckets: usize, seed: u64) -> Vec<usize> {
    trigrams(text)
        .iter()
        .map(|g| (feature_hash(g.as_bytes(), seed) % buckets as u64) as usize)
        .collect()
}

/// Seeded FNV-1a followed by a splitmix64 finalizer. Stable across platforms
/// and toolchains, unlike `std`'s `DefaultHasher`.
fn feature_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = dot(v, v).sqrt();
    if !(norm >= NORM_FLOOR) {
        return Err(Error::ZeroVector { norm });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn encode_batch(items: &[TextItem], params: &EncoderParams) -> Result<EmbeddingMatrix> {
    let dim = params.dim();
    let n = items.len();
    let mut rows = Matrix::zeros(n, dim);
    let mut raw = Matrix::zeros(n, dim);
    let mut norms = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);

    for (i, item) in items.iter().enumerate() {
        let feats = tokenize(&item.encoder_input(), params.buckets(), params.hash_seed);
        if feats.is_empty() {
            return Err(Error::EmptyText {
                id: item.id.clone(),
            });
        }
        let inv = 1.0 / feats.len() as f64;
        let r = raw.row_mut(i);
        for &f in &feats {
            for (acc, w) in r.iter_mut().zip(params.table.row(f)) {
                *acc += w;
            }
        }
        r.iter_mut().for_each(|x| *x *= inv);
        let unit = l2_normalize(r)?;
        norms.push(dot(r, r).sqrt());
        rows.row_mut(i).copy_from_slice(&unit);
        features.push(feats);
    }

    Ok(EmbeddingMatrix {
        rows,
        cache: Some(ForwardCache {
            raw,
            norms,
            features,
        }),
    })
}

/// `S[i][j] = alpha * <q_i, d_j> + (beta if use_bias)`.
pub fn score_matrix(
    queries: &EmbeddingMatrix,
    docs: &EmbeddingMatrix,
    params: &EncoderParams,
    use_bias: bool,
) -> Result<Matrix> {
    if queries.dim() != docs.dim() {
        return Err(Error::DimMismatch {
            expected: queries.dim(),
            actual: docs.dim(),
        });
    }
    let bias = if use_bias { params.beta } else { 0.0 };
    let mut s = Matrix::zeros(queries.len(), docs.len());
    for (i, q) in queries.rows.iter_rows().enumerate() {
        let out = s.row_mut(i);
        for (j, d) in docs.rows.iter_rows().enumerate() {
            out[j] = params.alpha * dot(q, d) + bias;
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub table: Matrix,
    pub alpha: f64,
    pub beta: f64,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            table: Matrix::zeros(params.buckets(), params.dim()),
            alpha: 0.0,
            beta: 0.0,
        }
    }
}

/// Chain rule from `dL/dS` to the table, `alpha` and `beta`.
///
/// The normalization Jacobian is applied as `(I - x x^T) / |raw|`, and each
/// item's raw-vector gradient is scattered onto its feature rows with weight
/// `1 / n_features`. Accumulation runs queries first, then documents, in item
/// order.
pub fn encoder_backward(
    d_scores: &Matrix,
    queries: &EmbeddingMatrix,
    docs: &EmbeddingMatrix,
    params: &EncoderParams,
    use_bias: bool,
) -> Result<EncoderGrads> {
    let expected = (queries.len(), docs.len());
    if d_scores.shape() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            actual: d_scores.shape(),
        });
    }
    let (qc, dc) = match (&queries.cache, &docs.cache) {
        (Some(q), Some(d)) => (q, d),
        _ => return Err(Error::StaleCache),
    };
    if queries.dim() != params.dim() || docs.dim() != params.dim() {
        return Err(Error::DimMismatch {
            expected: params.dim(),
            actual: queries.dim(),
        });
    }

    let dim = params.dim();
    let alpha = params.alpha;
    let mut grads = EncoderGrads::zeros_like(params);

    let mut d_alpha = 0.0;
    let mut d_q = Matrix::zeros(queries.len(), dim);
    let mut d_d = Matrix::zeros(docs.len(), dim);
    for i in 0..queries.len() {
        let q = queries.rows.row(i);
        for j in 0..docs.len() {
            let g = d_scores[(i, j)];
            if g == 0.0 {
                continue;
            }
            let d = docs.rows.row(j);
            d_alpha += g * dot(q, d);
            let ga = g * alpha;
            for (acc, x) in d_q.row_mut(i).iter_mut().zip(d) {
                *acc += ga * x;
            }
            for (acc, x) in d_d.row_mut(j).iter_mut().zip(q) {
                *acc += ga * x;
            }
        }
    }
    grads.alpha = d_alpha;
    grads.beta = if use_bias { d_scores.sum() } else { 0.0 };

    scatter(&mut grads.table, &d_q, &queries.rows, qc);
    scatter(&mut grads.table, &d_d, &docs.rows, dc);
    Ok(grads)
}

fn scatter(table_grad: &mut Matrix, d_unit: &Matrix, unit: &Matrix, cache: &ForwardCache) {
    let dim = unit.cols();
    let mut d_raw = vec![0.0; dim];
    for i in 0..unit.rows() {
        let g = d_unit.row(i);
        let x = unit.row(i);
        let proj = dot(g, x);
        let inv_norm = 1.0 / cache.norms[i];
        for k in 0..dim {
            d_raw[k] = (g[k] - proj * x[k]) * inv_norm;
        }
        let feats = &cache.features[i];
        let w = 1.0 / feats.len() as f64;
        for &f in feats {
            for (acc, v) in table_grad.row_mut(f).iter_mut().zip(&d_raw) {
                *acc += w * v;
            }
        }
    }
    debug_assert_eq!(cache.raw.rows(), unit.rows());
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(buckets: usize, dim: usize, seed: u64) -> EncoderParams {
        EncoderParams::init(buckets, dim, DEFAULT_ALPHA, 11, seed, 1.0).unwrap()
    }

    #[test]
    fn empty_text_has_no_features() {
        assert!(tokenize("", 4096, 0).is_empty());
        assert!(tokenize("   ", 4096, 0).is_empty());
    }

    #[test]
    fn cat_trigrams_by_hand() {
        // "^cat$" -> ^ca, cat, at$
        assert_eq!(trigrams("cat"), vec!["^ca", "cat", "at$"]);
        assert_eq!(trigrams("Cat"), trigrams("cat"));
        assert_eq!(tokenize("cat", 4096, 3).len(), 3);
        // one trigram per character of each word
        assert_eq!(trigrams("a bc").len(), 3);
        assert_eq!(trigrams("a bc"), vec!["^a$", "^bc", "bc$"]);
    }

    #[test]
    fn tokenize_is_deterministic_and_seeded() {
        let a = tokenize("the quick brown fox", 4096, 5);
        assert_eq!(a, tokenize("the quick brown fox", 4096, 5));
        assert!(a.iter().all(|&f| f < 4096));
        assert_ne!(a, tokenize("the quick brown fox", 4096, 6));
    }

    #[test]
    fn normalize_basics() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        let u = [0.0, 1.0, 0.0];
        assert_eq!(l2_normalize(&u).unwrap(), u.to_vec());
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroVector { .. })));
        assert!(matches!(l2_normalize(&[1e-13, 0.0]), Err(Error::ZeroVector { .. })));
    }

    #[test]
    fn single_bucket_mean_is_that_row() {
        let mut p = params(1, 3, 0);
        p.table = Matrix::from_rows(&[[1.0, 0.0, 0.0]]);
        let e = encode_batch(&[TextItem::new("a", "hello world")], &p).unwrap();
        assert_eq!(e.rows.row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn identical_items_identical_rows() {
        let p = params(256, 8, 1);
        let a = TextItem::new("a", "foo bar").with_instruction("find");
        let b = TextItem::new("b", "foo bar").with_instruction("find");
        let c = TextItem::new("c", "foo bar");
        let e = encode_batch(&[a, b, c], &p).unwrap();
        assert_eq!(e.rows.row(0), e.rows.row(1));
        assert_ne!(e.rows.row(0), e.rows.row(2));
    }

    #[test]
    fn encode_rejects_featureless_item() {
        let p = params(16, 4, 0);
        let err = encode_batch(&[TextItem::new("x", " ")], &p).unwrap_err();
        assert!(matches!(err, Error::EmptyText { .. }));
    }

    #[test]
    fn score_identical_and_orthogonal() {
        let mut p = params(4, 2, 0);
        let q = EmbeddingMatrix::from_unit_rows(Matrix::from_rows(&[[1.0, 0.0]])).unwrap();
        let d = EmbeddingMatrix::from_unit_rows(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]))
            .unwrap();
        let s = score_matrix(&q, &d, &p, false).unwrap();
        assert_eq!(s[(0, 0)], 20.0);
        p.beta = -1.0;
        let s = score_matrix(&q, &d, &p, true).unwrap();
        assert_eq!(s[(0, 1)], -1.0);
    }

    #[test]
    fn score_dim_mismatch() {
        let p = params(4, 2, 0);
        let q = EmbeddingMatrix::from_unit_rows(Matrix::from_rows(&[[1.0, 0.0]])).unwrap();
        let d = EmbeddingMatrix::from_unit_rows(Matrix::from_rows(&[[1.0, 0.0, 0.0]])).unwrap();
        assert!(matches!(score_matrix(&q, &d, &p, true), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn score_matches_triple_loop() {
        let p = {
            let mut p = params(64, 5, 4);
            p.beta = 0.37;
            p
        };
        let q = encode_batch(
            &[
                TextItem::new("q1", "alpha beta"),
                TextItem::new("q2", "gamma"),
                TextItem::new("q3", "delta epsilon zeta"),
            ],
            &p,
        )
        .unwrap();
        let d = encode_batch(
            &[
                TextItem::new("d1", "beta gamma"),
                TextItem::new("d2", "eta theta"),
                TextItem::new("d3", "alpha zeta"),
            ],
            &p,
        )
        .unwrap();
        let s = score_matrix(&q, &d, &p, true).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += q.rows[(i, k)] * d.rows[(j, k)];
                }
                let want = p.alpha * acc + p.beta;
                assert!((s[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_zero_and_beta_sum() {
        let p = params(32, 4, 2);
        let q = encode_batch(&[TextItem::new("q", "abc def")], &p).unwrap();
        let d = encode_batch(&[TextItem::new("a", "abc"), TextItem::new("b", "xyz")], &p).unwrap();
        let g = encoder_backward(&Matrix::zeros(1, 2), &q, &d, &p, true).unwrap();
        assert_eq!(g, EncoderGrads::zeros_like(&p));

        let ds = Matrix::from_rows(&[[0.25, -1.5]]);
        let g = encoder_backward(&ds, &q, &d, &p, true).unwrap();
        assert_eq!(g.beta, -1.25);
        let g = encoder_backward(&ds, &q, &d, &p, false).unwrap();
        assert_eq!(g.beta, 0.0);
    }

    #[test]
    fn backward_shape_and_cache_errors() {
        let p = params(32, 2, 2);
        let q = encode_batch(&[TextItem::new("q", "abc")], &p).unwrap();
        let err = encoder_backward(&Matrix::zeros(2, 1), &q, &q, &p, true).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
        let bare = EmbeddingMatrix::from_unit_rows(Matrix::from_rows(&[[1.0, 0.0]])).unwrap();
        let err = encoder_backward(&Matrix::zeros(1, 1), &bare, &q, &p, true).unwrap_err();
        assert!(matches!(err, Error::StaleCache));
    }

    /// Full chain through encode -> score -> sum(w * S) against central
    /// differences on every touched table coordinate and on alpha and beta.
    #[test]
    fn backward_matches_finite_differences() {
        let mut p = params(48, 6, 9);
        p.beta = 0.3;
        p.alpha = 3.0;
        let qs = [TextItem::new("q1", "red fox"), TextItem::new("q2", "blue whale")];
        let ds = [TextItem::new("d1", "red whale"), TextItem::new("d2", "fox")];
        let w = Matrix::from_rows(&[[0.7, -0.2], [0.1, 0.9]]);
        let objective = |p: &EncoderParams| {
            let q = encode_batch(&qs, p).unwrap();
            let d = encode_batch(&ds, p).unwrap();
            let s = score_matrix(&q, &d, p, true).unwrap();
            s.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>()
        };
        let q = encode_batch(&qs, &p).unwrap();
        let d = encode_batch(&ds, &p).unwrap();
        let g = encoder_backward(&w, &q, &d, &p, true).unwrap();

        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for idx in 0..p.table.as_slice().len() {
            let mut plus = p.clone();
            plus.table.as_mut_slice()[idx] += h;
            let mut minus = p.clone();
            minus.table.as_mut_slice()[idx] -= h;
            let num = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let ana = g.table.as_slice()[idx];
            assert!(rel(ana, num) < 1e-4, "table[{idx}]: {ana} vs {num}");
        }
        let mut plus = p.clone();
        plus.alpha += h;
        let mut minus = p.clone();
        minus.alpha -= h;
        let num = (objective(&plus) - objective(&minus)) / (2.0 * h);
        assert!(rel(g.alpha, num) < 1e-6);
        assert!((g.beta - w.sum()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rows_are_unit_norm(texts in proptest::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,4}", 1..6),
                              seed in 0u64..50) {
            let p = params(128, 8, seed);
            let items: Vec<_> = texts.iter().enumerate()
                .map(|(i, t)| TextItem::new(format!("i{i}"), t.clone()))
                .collect();
            let e = encode_batch(&items, &p).unwrap();
            for r in e.rows.iter_rows() {
                prop_assert!((dot(r, r).sqrt() - 1.0).abs() < 1e-9);
            }
            for i in 0..items.len() {
                prop_assert!(e.raw_norm(i).unwrap() > 0.0);
            }
        }

        #[test]
        fn scores_bounded(texts in proptest::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,3}", 2..6),
                          beta in -5.0f64..5.0) {
            let mut p = params(64, 4, 1);
            p.beta = beta;
            let items: Vec<_> = texts.iter().enumerate()
                .map(|(i, t)| TextItem::new(format!("i{i}"), t.clone()))
                .collect();
            let e = encode_batch(&items, &p).unwrap();
            let s = score_matrix(&e, &e, &p, true).unwrap();
            let bound = p.alpha.abs() + beta.abs() + 1e-9;
            prop_assert!(s.as_slice().iter().all(|v| v.abs() <= bound));
        }

        #[test]
        fn permuting_items_permutes_rows(texts in proptest::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,3}", 2..6),
                                         rot in 0usize..5) {
            let p = params(64, 4, 3);
            let items: Vec<_> = texts.iter().enumerate()
                .map(|(i, t)| TextItem::new(format!("i{i}"), t.clone()))
                .collect();
            let n = items.len();
            let mut rotated = items.clone();
            rotated.rotate_left(rot % n);
            let a = encode_batch(&items, &p).unwrap();
            let b = encode_batch(&rotated, &p).unwrap();
            for i in 0..n {
                prop_assert_eq!(b.rows.row(i), a.rows.row((i + rot % n) % n));
            }
        }
    }
}
