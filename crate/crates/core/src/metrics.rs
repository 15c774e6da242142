//! Corpus metrics: offline embeddings, diversity, n-gram contamination
//! screening and the small folds behind SER and SA.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::sql::Level;

pub const EMBED_DIM: usize = 256;
pub const DEFAULT_NGRAM_N: usize = 8;
pub const DEFAULT_NGRAM_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum::<f64>())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hashed character-trigram counts in [`EMBED_DIM`] buckets, L2-normalized.
/// Strings shorter than three characters map to the zero vector.
pub fn embed_offline(text: &str) -> EmbeddingVector {
    let mut values = alloc::vec![0.0; EMBED_DIM];
    let chars: Vec<char> = text.chars().collect();
    let mut buf = [0u8; 12];
    for w in chars.windows(3) {
        let mut len = 0;
        for c in w {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        values[(fnv1a(&buf[..len]) % EMBED_DIM as u64) as usize] += 1.0;
    }
    let v = EmbeddingVector { values };
    let n = v.norm();
    if n == 0.0 {
        return v;
    }
    EmbeddingVector { values: v.values.into_iter().map(|x| x / n).collect() }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub mean_l2: f64,
    pub one_nn: f64,
    /// Vectors that took part (zero vectors are left out).
    pub used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("diversity needs at least 2 non-empty embeddings, got {0}")]
pub struct TooFewSamples(pub usize);

/// Mean pairwise L2 distance and mean nearest-neighbour distance.
pub fn diversity(vectors: &[EmbeddingVector]) -> Result<Diversity, TooFewSamples> {
    let live: Vec<&EmbeddingVector> = vectors.iter().filter(|v| v.norm() > 0.0).collect();
    if live.len() < vectors.len() {
        log::warn!("{} zero embeddings left out of diversity", vectors.len() - live.len());
    }
    let n = live.len();
    if n < 2 {
        return Err(TooFewSamples(n));
    }
    let mut nearest = alloc::vec![f64::INFINITY; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = l2_distance(&live[i].values, &live[j].values);
            total += d;
            nearest[i] = nearest[i].min(d);
            nearest[j] = nearest[j].min(d);
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(Diversity { mean_l2: total / pairs, one_nn: nearest.iter().sum::<f64>() / n as f64, used: n })
}

/// Lowercased runs of alphanumerics and underscores.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Token n-grams of `text`. A text with fewer than `n` tokens yields its
/// whole token sequence as a single gram.
pub fn ngrams(text: &str, n: usize) -> BTreeSet<Vec<String>> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return BTreeSet::new();
    }
    if tokens.len() < n {
        return core::iter::once(tokens).collect();
    }
    tokens.windows(n).map(<[String]>::to_vec).collect()
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Question,
    Sql,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairText<'a> {
    pub question: &'a str,
    pub sql: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    /// Position in the screened corpus.
    pub index: usize,
    /// Position of the best-matching evaluation instance.
    pub eval_index: usize,
    pub field: Field,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub removed: Vec<Removal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("n-gram size must be at least 2, got {0}")]
pub struct InvalidNgramSize(pub usize);

/// Removes every sample whose question or SQL n-gram set has Jaccard
/// similarity strictly above `threshold` with the same field of any
/// evaluation instance. Each removal records the highest-scoring match.
pub fn contamination_filter(
    corpus: &[PairText<'_>],
    eval: &[PairText<'_>],
    n: usize,
    threshold: f64,
) -> Result<FilterOutcome, InvalidNgramSize> {
    if n < 2 {
        return Err(InvalidNgramSize(n));
    }
    let eval_grams: Vec<_> = eval.iter().map(|e| (ngrams(e.question, n), ngrams(e.sql, n))).collect();
    let mut out = FilterOutcome::default();
    for (index, s) in corpus.iter().enumerate() {
        let q = ngrams(s.question, n);
        let sql = ngrams(s.sql, n);
        let mut best: Option<Removal> = None;
        for (eval_index, (eq, es)) in eval_grams.iter().enumerate() {
            for (field, score) in [(Field::Question, jaccard(&q, eq)), (Field::Sql, jaccard(&sql, es))] {
                if score > threshold && best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(Removal { index, eval_index, field, score });
                }
            }
        }
        match best {
            Some(r) => out.removed.push(r),
            None => out.kept.push(index),
        }
    }
    Ok(out)
}

/// Successful executions over total; zero for an empty corpus.
pub fn ser(successes: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        successes as f64 / total as f64
    }
}

/// Share of `1` labels, or `None` when nothing was judged.
pub fn sa(labels: &[u8]) -> Option<f64> {
    if labels.is_empty() {
        None
    } else {
        Some(labels.iter().filter(|l| **l == 1).count() as f64 / labels.len() as f64)
    }
}

/// Counts per level, with every level present.
pub fn histogram(levels: impl IntoIterator<Item = Level>) -> BTreeMap<Level, usize> {
    let mut h: BTreeMap<Level, usize> = Level::ALL.into_iter().map(|l| (l, 0)).collect();
    for l in levels {
        *h.entry(l).or_default() += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn brute(vs: &[Vec<f64>]) -> (f64, f64) {
        let n = vs.len();
        let mut sum = 0.0;
        let mut pairs = 0.0;
        let mut nn = 0.0;
        for i in 0..n {
            let mut best = f64::INFINITY;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = libm::sqrt(vs[i].iter().zip(&vs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
                best = best.min(d);
                if j > i {
                    sum += d;
                    pairs += 1.0;
                }
            }
            nn += best;
        }
        (sum / pairs, nn / n as f64)
    }

    #[test]
    fn three_unit_vectors_match_brute_force() {
        let raw = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.6, 0.8, 0.0]];
        let vs: Vec<EmbeddingVector> = raw.iter().map(|v| EmbeddingVector { values: v.clone() }).collect();
        let d = diversity(&vs).unwrap();
        let (m, nn) = brute(&raw);
        assert!((d.mean_l2 - m).abs() < 1e-9);
        assert!((d.one_nn - nn).abs() < 1e-9);
    }

    #[test]
    fn single_pair_and_coincident() {
        let a = EmbeddingVector { values: vec![0.0, 3.0] };
        let b = EmbeddingVector { values: vec![4.0, 0.0] };
        let d = diversity(&[a, b]).unwrap();
        assert!((d.mean_l2 - 5.0).abs() < 1e-12 && (d.one_nn - 5.0).abs() < 1e-12);
        let e = embed_offline("SELECT 1");
        let d = diversity(&[e.clone(), e]).unwrap();
        assert_eq!((d.mean_l2, d.one_nn), (0.0, 0.0));
        assert_eq!(diversity(&[embed_offline("SELECT 1")]), Err(TooFewSamples(1)));
    }

    #[test]
    fn empty_string_embeds_to_zero() {
        let e = embed_offline("");
        assert_eq!(e.dimension(), EMBED_DIM);
        assert_eq!(e.norm(), 0.0);
        assert_eq!(embed_offline("ab").norm(), 0.0);
    }

    #[test]
    fn disjoint_single_trigrams_are_sqrt2_apart() {
        let (a, b) = ("abc", "xyz");
        let ha = fnv1a(a.as_bytes()) % EMBED_DIM as u64;
        let hb = fnv1a(b.as_bytes()) % EMBED_DIM as u64;
        assert_ne!(ha, hb, "pick strings whose trigrams land in different buckets");
        let d = l2_distance(&embed_offline(a).values, &embed_offline(b).values);
        assert!((d - libm::sqrt(2.0)).abs() < 1e-12);
    }

    #[test]
    fn filter_self_match_and_disjoint() {
        let eval = [PairText {
            question: "How many schools are in Alameda county?",
            sql: "SELECT COUNT(*) FROM schools WHERE County = 'Alameda'",
        }];
        let corpus = [
            PairText { question: "How many schools are in Alameda county?", sql: "SELECT 1" },
            PairText { question: "zebra quartz", sql: "SELECT sname FROM satscores" },
        ];
        let out = contamination_filter(&corpus, &eval, 8, 0.6).unwrap();
        assert_eq!(out.kept, vec![1]);
        assert_eq!(out.removed.len(), 1);
        assert_eq!(out.removed[0].score, 1.0);
        assert_eq!(out.removed[0].field, Field::Question);
        assert_eq!(contamination_filter(&corpus, &eval, 1, 0.6), Err(InvalidNgramSize(1)));
    }

    #[test]
    fn tokenizer_folds_case_and_splits_punctuation() {
        assert_eq!(tokenize("SELECT t1.County, COUNT(*)"), vec!["select", "t1", "county", "count"]);
        assert_eq!(ngrams("a b", 8).len(), 1);
    }

    #[test]
    fn folds() {
        assert_eq!(ser(3, 4), 0.75);
        assert_eq!(sa(&[]), None);
        assert_eq!(sa(&[1, 0]), Some(0.5));
        let h = histogram([Level::L1, Level::L1, Level::L3]);
        assert_eq!(h[&Level::L1], 2);
        assert_eq!(h[&Level::L2], 0);
        assert_eq!(h.values().sum::<usize>(), 3);
    }

    fn arb_vectors() -> impl Strategy<Value = Vec<EmbeddingVector>> {
        proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 2..8).prop_map(|vs| {
            vs.into_iter()
                .map(|mut v| {
                    v[0] += 2.0;
                    EmbeddingVector { values: v }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn diversity_is_order_invariant(vs in arb_vectors(), rot in 0usize..8) {
            let a = diversity(&vs).unwrap();
            let mut shuffled = vs.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let b = diversity(&shuffled).unwrap();
            prop_assert!((a.mean_l2 - b.mean_l2).abs() < 1e-9);
            prop_assert!((a.one_nn - b.one_nn).abs() < 1e-9);
        }

        #[test]
        fn one_nn_bounded_by_max_pair(vs in arb_vectors()) {
            let d = diversity(&vs).unwrap();
            let mut max = 0.0f64;
            for i in 0..vs.len() { for j in 0..vs.len() { max = max.max(l2_distance(&vs[i].values, &vs[j].values)); } }
            prop_assert!(d.one_nn >= 0.0 && d.mean_l2 >= 0.0);
            prop_assert!(d.one_nn <= max + 1e-12);
        }

        #[test]
        fn embedding_is_unit_or_zero(s in ".{0,40}") {
            let n = embed_offline(&s).norm();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
            prop_assert_eq!(embed_offline(&s), embed_offline(&s));
        }

        #[test]
        fn lower_threshold_removes_superset(words in proptest::collection::vec("[a-e]{1,2}", 1..12), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let texts: Vec<String> = (0..6).map(|i| words.iter().skip(i).cloned().collect::<Vec<_>>().join(" ")).collect();
            let corpus: Vec<PairText> = texts.iter().map(|t| PairText { question: t, sql: "" }).collect();
            let eval_text = format!("{} x", words.join(" "));
            let eval = [PairText { question: &eval_text, sql: "y" }];
            let a = contamination_filter(&corpus, &eval, 2, lo).unwrap();
            let b = contamination_filter(&corpus, &eval, 2, hi).unwrap();
            let ra: BTreeSet<usize> = a.removed.iter().map(|r| r.index).collect();
            let rb: BTreeSet<usize> = b.removed.iter().map(|r| r.index).collect();
            prop_assert!(rb.is_subset(&ra));
        }
    }
}
