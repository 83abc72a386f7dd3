//! Value-level distributions and losses. The training graph computes the
//! same quantities; these are used at the edges and for cross-checks.

use serde::{Deserialize, Serialize};

use super::CopySource;
use crate::neural::{sigmoid, Mat, MiniModel};

/// Floor applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-10;

fn softmax(x: &[f64]) -> Vec<f64> {
    Mat::row_vector(x.to_vec()).softmax_rows(None).data().to_vec()
}

/// `softmax(W3 · GELU(W2 h + b2) + b3)` over the plain vocabulary.
pub fn decoder_vocab_distribution(model: &MiniModel, h: &[f64]) -> Vec<f64> {
    let x = Mat::row_vector(h.to_vec());
    let a = MiniModel::gelu_value(&model.apply_linear(&x, model.heads.lang_hidden));
    softmax(model.apply_linear(&a, model.heads.lang_out).data())
}

/// Copy distribution over the extended vocabulary from one row of
/// head-averaged last-layer attention. `None` when nothing can be copied.
pub fn knowledge_attention_distribution(attention_row: &[f64], source: &CopySource) -> Option<Vec<f64>> {
    if !source.is_enabled() {
        return None;
    }
    let mut mass: Vec<f64> = if source.uniform {
        vec![1.0; source.positions.len()]
    } else {
        source.positions.iter().map(|&p| attention_row[p]).collect()
    };
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        mass.iter_mut().for_each(|m| *m = 1.0);
    }
    let total: f64 = mass.iter().sum();
    let mut out = vec![0.0; source.ext_len()];
    for (m, &id) in mass.iter().zip(&source.ext_ids) {
        out[id] += m / total;
    }
    Some(out)
}

/// `σ(W_p [k_m ∘ h ; k_m ; h] + b_p)` with `k_m` the mean knowledge state;
/// 1 when there is no knowledge.
pub fn copy_gate(model: &MiniModel, h: &[f64], knowledge_hidden: &Mat) -> f64 {
    if knowledge_hidden.rows() == 0 {
        return 1.0;
    }
    let d = h.len();
    let mut km = vec![0.0; d];
    for i in 0..knowledge_hidden.rows() {
        for (k, v) in km.iter_mut().zip(knowledge_hidden.row(i)) {
            *k += v / knowledge_hidden.rows() as f64;
        }
    }
    let mut feat: Vec<f64> = km.iter().zip(h).map(|(a, b)| a * b).collect();
    feat.extend_from_slice(&km);
    feat.extend_from_slice(h);
    sigmoid(model.apply_linear(&Mat::row_vector(feat), model.heads.gate).item())
}

/// `gate · P_lang + (1 − gate) · P_att` over the longer of the two supports.
pub fn mixed_distribution(p_lang: &[f64], p_att: Option<&[f64]>, gate: f64) -> Vec<f64> {
    let Some(att) = p_att else {
        return p_lang.to_vec();
    };
    let n = p_lang.len().max(att.len());
    (0..n)
        .map(|w| gate * p_lang.get(w).copied().unwrap_or(0.0) + (1.0 - gate) * att.get(w).copied().unwrap_or(0.0))
        .collect()
}

/// `softmax(W_1 h_z + b_1)`.
pub fn bow_distribution(model: &MiniModel, h_z: &[f64]) -> Vec<f64> {
    softmax(model.apply_linear(&Mat::row_vector(h_z.to_vec()), model.heads.bow).data())
}

pub fn bow_loss(f: &[f64], gold: &[usize]) -> f64 {
    -gold.iter().map(|&w| f[w].max(LOG_EPS).ln()).sum::<f64>()
}

/// `−Σ ln P_t(gold_t)` over per-step distributions.
pub fn sequence_nll(steps: &[Vec<f64>], gold: &[usize]) -> f64 {
    -steps.iter().zip(gold).map(|(p, &w)| p[w].max(LOG_EPS).ln()).sum::<f64>()
}

/// `Σ q ln(q / p)` with `0 · ln 0 = 0` and `p` floored at [`LOG_EPS`].
pub fn kld_loss(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(qi, _)| **qi > 0.0)
        .map(|(qi, pi)| qi * (qi.ln() - pi.max(LOG_EPS).ln()))
        .sum()
}

pub fn norm_loss(gates: &[f64]) -> f64 {
    gates.iter().map(|g| g * g).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub nll: f64,
    pub bow: f64,
    pub kld: f64,
    pub norm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            nll: 1.0,
            bow: 1.0,
            kld: 1.0,
            norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub nll: f64,
    pub bow: f64,
    pub kld: f64,
    pub norm: f64,
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    w.nll * parts.nll + w.bow * parts.bow + w.kld * parts.kld + w.norm * parts.norm
}
