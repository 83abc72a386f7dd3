use serde::{Deserialize, Serialize};

use super::GenerationHypothesis;
use crate::textsim::{greedy_semantic_f1, jaro_winkler, normalize, tokenize, EmbeddingTable};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankWeights {
    pub nll: f64,
    pub bert: f64,
    pub jwd: f64,
}

impl Default for RerankWeights {
    fn default() -> Self {
        Self {
            nll: 1.0,
            bert: 1.0,
            jwd: 1.0,
        }
    }
}

/// Min-max normalization; a degenerate set maps to all ones.
pub fn normalize_scores(log_probs: &[f64]) -> Vec<f64> {
    let lo = log_probs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![1.0; log_probs.len()];
    }
    log_probs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

pub fn combined_score(s_nll: f64, s_bert: f64, s_jwd: f64, w: &RerankWeights) -> f64 {
    w.nll * s_nll + w.bert * s_bert - w.jwd * s_jwd
}

/// Index of the best total; the earliest index wins ties.
pub fn best_index(totals: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in totals.iter().enumerate() {
        if best.map_or(true, |b| *t > totals[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores every candidate against the knowledge answer, fills the `s_*`
/// fields, and returns the winning index.
pub fn postprocess_rerank(
    candidates: &mut [GenerationHypothesis],
    answer: &str,
    embeddings: &EmbeddingTable,
    w: &RerankWeights,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Contract("nothing to rerank".into()));
    }
    let nll = normalize_scores(&candidates.iter().map(|c| c.log_prob).collect::<Vec<_>>());
    let reference = tokenize(answer);
    let reference_text = normalize(answer);
    for (c, s_nll) in candidates.iter_mut().zip(nll) {
        let part = c.knowledge_text();
        c.s_nll = s_nll;
        c.s_bert = greedy_semantic_f1(&tokenize(&part), &reference, embeddings);
        c.s_jwd = jaro_winkler(&normalize(&part), &reference_text);
        c.s_total = combined_score(c.s_nll, c.s_bert, c.s_jwd, w);
    }
    let totals: Vec<f64> = candidates.iter().map(|c| c.s_total).collect();
    Ok(best_index(&totals).expect("non-empty"))
}
