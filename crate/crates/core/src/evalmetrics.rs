//! Classification, ranking and text-overlap metrics.
//!
//! Text metrics take token slices; callers tokenize with
//! [`crate::textsim::tokenize`] so that every metric sees the same units.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn precision_recall_f1(pred: &[bool], gold: &[bool]) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    let tp = pred.iter().zip(gold).filter(|(p, g)| **p && **g).count() as f64;
    let pp = pred.iter().filter(|p| **p).count() as f64;
    let gp = gold.iter().filter(|g| **g).count() as f64;
    let precision = if pp > 0.0 { tp / pp } else { 0.0 };
    let recall = if gp > 0.0 { tp / gp } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Prf {
        precision,
        recall,
        f1,
    })
}

/// Mean of `1/rank` over queries whose gold rank (1-based) is within `k`.
/// `None` means the gold was not ranked at all.
pub fn mrr_at_k(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks
        .iter()
        .map(|r| match r {
            Some(r) if *r >= 1 && *r <= k => 1.0 / *r as f64,
            _ => 0.0,
        })
        .sum::<f64>()
        / ranks.len() as f64
}

pub fn recall_at_k(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks
        .iter()
        .filter(|r| matches!(r, Some(r) if *r >= 1 && *r <= k))
        .count() as f64
        / ranks.len() as f64
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate n-gram total.
fn clipped<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let matched = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuOptions {
    /// Add one to numerator and denominator of orders ≥ 2.
    pub add_one_smoothing: bool,
}

fn bleu_from_counts(matched: &[usize], totals: &[usize], cand_len: usize, ref_len: usize, opts: BleuOptions) -> f64 {
    if cand_len == 0 {
        return 0.0;
    }
    let n = matched.len();
    let mut log_sum = 0.0;
    for i in 0..n {
        let (m, t) = if opts.add_one_smoothing && i > 0 {
            (matched[i] as f64 + 1.0, totals[i] as f64 + 1.0)
        } else {
            (matched[i] as f64, totals[i] as f64)
        };
        if m == 0.0 || t == 0.0 {
            return 0.0;
        }
        log_sum += (m / t).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    bp * (log_sum / n as f64).exp()
}

/// Single-reference sentence BLEU with uniform weights over orders `1..=n`.
pub fn bleu_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    bleu_n_with(candidate, reference, n, BleuOptions::default())
}

pub fn bleu_n_with<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize, opts: BleuOptions) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order {n} outside 1..=4");
    let (matched, totals): (Vec<usize>, Vec<usize>) = (1..=n).map(|i| clipped(candidate, reference, i)).unzip();
    bleu_from_counts(&matched, &totals, candidate.len(), reference.len(), opts)
}

/// Corpus BLEU: n-gram statistics and lengths are summed before combining.
pub fn corpus_bleu<T: Eq + Hash>(pairs: &[(Vec<T>, Vec<T>)], n: usize, opts: BleuOptions) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order {n} outside 1..=4");
    let mut matched = vec![0; n];
    let mut totals = vec![0; n];
    let (mut c_len, mut r_len) = (0, 0);
    for (c, r) in pairs {
        for i in 0..n {
            let (m, t) = clipped(c, r, i + 1);
            matched[i] += m;
            totals[i] += t;
        }
        c_len += c.len();
        r_len += r.len();
    }
    bleu_from_counts(&matched, &totals, c_len, r_len, opts)
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// n-gram overlap F1.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    let r = ngram_counts(reference, n);
    let r_total: usize = r.values().sum();
    let c = ngram_counts(candidate, n);
    let c_total: usize = c.values().sum();
    if r_total == 0 || c_total == 0 {
        return 0.0;
    }
    let overlap: usize = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    f1(overlap as f64 / c_total as f64, overlap as f64 / r_total as f64)
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence F1.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    if reference.is_empty() || candidate.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    f1(l / candidate.len() as f64, l / reference.len() as f64)
}

/// Evaluation summary; absent fields are left out of the JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrr_at_5: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_at_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_at_5: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu_2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu_3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu_4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
}

impl MetricReport {
    pub fn with_prf(mut self, prf: Prf) -> Self {
        self.precision = Some(prf.precision);
        self.recall = Some(prf.recall);
        self.f1 = Some(prf.f1);
        self
    }

    pub fn with_ranking(mut self, ranks: &[Option<usize>]) -> Self {
        self.mrr_at_5 = Some(mrr_at_k(ranks, 5));
        self.recall_at_1 = Some(recall_at_k(ranks, 1));
        self.recall_at_5 = Some(recall_at_k(ranks, 5));
        self
    }

    /// Corpus BLEU-1..4 and mean sentence ROUGE over tokenized
    /// `(candidate, reference)` pairs.
    pub fn with_text(mut self, pairs: &[(Vec<String>, Vec<String>)]) -> Self {
        let opts = BleuOptions::default();
        self.bleu_1 = Some(corpus_bleu(pairs, 1, opts));
        self.bleu_2 = Some(corpus_bleu(pairs, 2, opts));
        self.bleu_3 = Some(corpus_bleu(pairs, 3, opts));
        self.bleu_4 = Some(corpus_bleu(pairs, 4, opts));
        let n = pairs.len().max(1) as f64;
        self.rouge_1 = Some(pairs.iter().map(|(c, r)| rouge_n(c, r, 1)).sum::<f64>() / n);
        self.rouge_2 = Some(pairs.iter().map(|(c, r)| rouge_n(c, r, 2)).sum::<f64>() / n);
        self.rouge_l = Some(pairs.iter().map(|(c, r)| rouge_l(c, r)).sum::<f64>() / n);
        self
    }
}
