//! Tokenization and string similarity primitives.
//!
//! All scores are similarities in `[0, 1]`; `1.0` means identical. The
//! character-level measures operate on Unicode scalar values.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// A lowercased token sequence with character spans into the source text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    /// `(start, end)` character offsets, end exclusive.
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined tokens.
    pub fn normalized(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

/// Splits on whitespace, lowercases, and emits every non-alphanumeric
/// character as its own token.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut seq = TokenSeq::default();
    let mut current = String::new();
    let mut start = 0;

    let flush = |seq: &mut TokenSeq, current: &mut String, start: usize, end: usize| {
        if !current.is_empty() {
            seq.tokens.push(std::mem::take(current));
            seq.offsets.push((start, end));
        }
    };

    for (i, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            if current.is_empty() {
                start = i;
            }
            current.extend(ch.to_lowercase());
        } else {
            flush(&mut seq, &mut current, start, i);
            if !ch.is_whitespace() {
                seq.tokens.push(ch.to_lowercase().collect());
                seq.offsets.push((i, i + 1));
            }
        }
    }
    let n = text.chars().count();
    flush(&mut seq, &mut current, start, n);
    seq
}

/// Tokenize and rejoin with single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).normalized()
}

/// True when every character of the token is neither alphabetic nor numeric.
pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && !token.chars().any(char::is_alphanumeric)
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - lev(a, b) / max(|a|, |b|)`, with two empty strings scoring 1.
pub fn levenshtein_ratio(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

pub fn jaro(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }

    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut a_matched = vec![false; a.len()];
    let mut b_matched = vec![false; b.len()];
    let mut matches = 0usize;

    for (i, ca) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_matched[j] && b[j] == *ca {
                a_matched[i] = true;
                b_matched[j] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }

    let a_seq = a.iter().zip(&a_matched).filter(|(_, m)| **m).map(|(c, _)| c);
    let b_seq = b.iter().zip(&b_matched).filter(|(_, m)| **m).map(|(c, _)| c);
    let out_of_order = a_seq.zip(b_seq).filter(|(x, y)| x != y).count();
    let t = out_of_order as f64 / 2.0;
    let m = matches as f64;

    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

const WINKLER_PREFIX_CAP: usize = 4;
const WINKLER_SCALING: f64 = 0.1;

pub fn jaro_winkler(a: &str, b: &str) -> f64 {
    let j = jaro(a, b);
    let prefix = a
        .chars()
        .zip(b.chars())
        .take(WINKLER_PREFIX_CAP)
        .take_while(|(x, y)| x == y)
        .count();
    j + prefix as f64 * WINKLER_SCALING * (1.0 - j)
}

/// Static token vectors with a reserved fallback for unknown tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
    unknown: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(vectors: HashMap<String, Vec<f64>>, unknown: Vec<f64>) -> Self {
        Self { vectors, unknown }
    }

    /// Identity embeddings: every listed token gets its own axis, unknown
    /// tokens share one more.
    pub fn one_hot<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut distinct: Vec<&str> = tokens.into_iter().collect();
        distinct.sort_unstable();
        distinct.dedup();
        let dim = distinct.len() + 1;
        let vectors = distinct
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut v = vec![0.0; dim];
                v[i] = 1.0;
                (t.to_string(), v)
            })
            .collect();
        let mut unknown = vec![0.0; dim];
        unknown[dim - 1] = 1.0;
        Self { vectors, unknown }
    }

    pub fn vector(&self, token: &str) -> &[f64] {
        self.vectors.get(token).map_or(&self.unknown, Vec::as_slice)
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (u, v) = (self.vector(a), self.vector(b));
        let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu == 0.0 || nv == 0.0 {
            return 0.0;
        }
        dot / (nu * nv)
    }
}

/// Greedy-matching F1 over token embeddings: each token is matched to its
/// most similar counterpart on the other side. Negative cosines count as 0.
pub fn greedy_semantic_f1(
    candidate: &TokenSeq,
    reference: &TokenSeq,
    embeddings: &EmbeddingTable,
) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let best = |from: &TokenSeq, to: &TokenSeq| -> f64 {
        from.iter()
            .map(|x| {
                to.iter()
                    .map(|y| embeddings.cosine(x, y))
                    .fold(f64::NEG_INFINITY, f64::max)
                    .clamp(0.0, 1.0)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    let precision = best(candidate, reference);
    let recall = best(reference, candidate);
    if precision + recall == 0.0 {
        return 0.0;
    }
    (2.0 * precision * recall / (precision + recall)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> TokenSeq {
        tokenize(&words.join(" "))
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Avalon Hotel").tokens, vec!["avalon", "hotel"]);
        assert_eq!(tokenize("A & B").tokens, vec!["a", "&", "b"]);
        assert!(tokenize("").is_empty());
        let t = tokenize("Open 9:30, daily!");
        assert_eq!(t.tokens, vec!["open", "9", ":", "30", ",", "daily", "!"]);
        assert_eq!(t.offsets[0], (0, 4));
        assert_eq!(t.offsets[2], (6, 7));
    }

    #[test]
    fn levenshtein_ratio_examples() {
        assert_eq!(levenshtein_ratio("hotel", "hotel"), 1.0);
        assert!((levenshtein_ratio("hotel", "hotle") - 0.6).abs() < 1e-12);
        assert_eq!(levenshtein_ratio("a", "z"), 0.0);
        assert_eq!(levenshtein_ratio("", ""), 1.0);
        assert!((levenshtein_ratio("gonville", "gonvile") - 0.875).abs() < 1e-12);
    }

    #[test]
    fn jaro_examples() {
        assert_eq!(jaro("abc", "abc"), 1.0);
        assert_eq!(jaro("abc", "xyz"), 0.0);
        assert!((jaro("martha", "marhta") - 0.944_444).abs() < 1e-4);
        assert_eq!(jaro("", ""), 1.0);
    }

    #[test]
    fn jaro_winkler_examples() {
        assert!((jaro_winkler("martha", "marhta") - 0.961_111).abs() < 1e-4);
        assert_eq!(jaro_winkler("dixon", "dixon"), 1.0);
        assert_eq!(jaro_winkler("abc", "xyz"), 0.0);
    }

    #[test]
    fn greedy_f1_examples() {
        let emb = EmbeddingTable::one_hot(["a", "b", "c", "d"]);
        assert_eq!(greedy_semantic_f1(&toks(&["a", "b"]), &toks(&["a", "b"]), &emb), 1.0);
        assert_eq!(greedy_semantic_f1(&toks(&["a", "b"]), &toks(&["c", "d"]), &emb), 0.0);
        assert!((greedy_semantic_f1(&toks(&["a", "b"]), &toks(&["a", "c"]), &emb) - 0.5).abs() < 1e-12);
        assert_eq!(greedy_semantic_f1(&toks(&[]), &toks(&["a"]), &emb), 0.0);
    }

    proptest! {
        #[test]
        fn similarities_symmetric_and_bounded(a in "[a-e]{0,8}", b in "[a-e]{0,8}") {
            for f in [levenshtein_ratio, jaro, jaro_winkler] {
                let (x, y) = (f(&a, &b), f(&b, &a));
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&x));
            }
            prop_assert!(jaro_winkler(&a, &b) >= jaro(&a, &b) - 1e-15);
            if a.chars().next() != b.chars().next() {
                prop_assert_eq!(jaro_winkler(&a, &b), jaro(&a, &b));
            }
        }

        #[test]
        fn greedy_f1_permutation_invariant(
            cand in proptest::collection::vec("[a-f]", 1..6),
            reference in proptest::collection::vec("[a-f]", 1..6),
        ) {
            let emb = EmbeddingTable::one_hot(["a", "b", "c"]);
            let c = tokenize(&cand.join(" "));
            let r = tokenize(&reference.join(" "));
            let mut cr = cand.clone();
            cr.reverse();
            let mut rr = reference.clone();
            rr.rotate_left(1);
            let base = greedy_semantic_f1(&c, &r, &emb);
            let permuted = greedy_semantic_f1(&tokenize(&cr.join(" ")), &tokenize(&rr.join(" ")), &emb);
            prop_assert!((base - permuted).abs() < 1e-12);
        }
    }
}
