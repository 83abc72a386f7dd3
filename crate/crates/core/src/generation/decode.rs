use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::decoder::decoder_outputs;
use super::{CopySource, GenerationInput};
use crate::neural::{Encoded, Mat, MaskKind, MaskSpec, MiniModel, BOS, EOS, PAD, SEP, SP1, SP2};
use crate::{Error, Result};

/// Next-token scores for a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// Natural-log probabilities; `-inf` marks tokens that cannot follow.
    pub log_probs: Vec<f64>,
    pub gate: f64,
}

pub trait SequenceScorer {
    fn step(&self, prefix: &[usize]) -> Result<Step>;
    fn eos(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Emitted ids, without the closing end token.
    pub tokens: Vec<usize>,
    pub step_log_probs: Vec<f64>,
    pub gates: Vec<f64>,
    pub log_prob: f64,
    /// Closed at the length limit without an end token.
    pub hit_max_len: bool,
}

impl Hypothesis {
    pub fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            step_log_probs: Vec::new(),
            gates: Vec::new(),
            log_prob: 0.0,
            hit_max_len: false,
        }
    }

    fn extend(&self, token: usize, lp: f64, gate: f64, eos: usize) -> Self {
        let mut h = self.clone();
        if token != eos {
            h.tokens.push(token);
        }
        h.step_log_probs.push(lp);
        h.gates.push(gate);
        h.log_prob += lp;
        h
    }
}

/// Higher score first, then the lexicographically smaller id sequence.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

pub fn beam_search<S: SequenceScorer + ?Sized>(scorer: &S, beam: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
    beam_search_from(scorer, Hypothesis::empty(), beam, max_len)
}

/// Beam search continuing `init`. `max_len` bounds the number of steps,
/// the end token included. Returns at most `beam` hypotheses, best first.
pub fn beam_search_from<S: SequenceScorer + ?Sized>(
    scorer: &S,
    init: Hypothesis,
    beam: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if beam == 0 {
        return Err(Error::InvalidConfig("beam width must be positive".into()));
    }
    let eos = scorer.eos();
    let mut live = vec![init];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let start = live[0].step_log_probs.len();
    for _ in start..max_len {
        let mut cands: Vec<(f64, Vec<usize>, usize, usize, f64, f64)> = Vec::new();
        for (b, h) in live.iter().enumerate() {
            let step = scorer.step(&h.tokens)?;
            for (w, &lp) in step.log_probs.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut seq = h.tokens.clone();
                seq.push(w);
                cands.push((h.log_prob + lp, seq, b, w, lp, step.gate));
            }
        }
        cands.sort_by(|a, b| rank((a.0, &a.1), (b.0, &b.1)));
        cands.truncate(beam);
        let mut next = Vec::with_capacity(cands.len());
        for (_, _, b, w, lp, gate) in cands {
            let h = live[b].extend(w, lp, gate, eos);
            if w == eos {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        if finished.len() >= beam {
            let mut scores: Vec<f64> = finished.iter().map(|h| h.log_prob).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let kth = scores[beam - 1];
            if live.iter().all(|h| h.log_prob < kth) {
                live.clear();
                break;
            }
        }
    }
    for mut h in live {
        h.hit_max_len = true;
        finished.push(h);
    }
    let mut pool = finished;
    pool.sort_by(|a, b| rank((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)));
    pool.truncate(beam);
    Ok(pool)
}

/// Argmax at every step, lowest id on ties.
pub fn greedy_decode<S: SequenceScorer + ?Sized>(scorer: &S, max_len: usize) -> Result<Hypothesis> {
    let eos = scorer.eos();
    let mut h = Hypothesis::empty();
    for _ in 0..max_len {
        let step = scorer.step(&h.tokens)?;
        let mut best = 0;
        for (w, lp) in step.log_probs.iter().enumerate() {
            if *lp > step.log_probs[best] {
                best = w;
            }
        }
        h = h.extend(best, step.log_probs[best], step.gate, eos);
        if best == eos {
            return Ok(h);
        }
    }
    h.hit_max_len = true;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfbsOutput {
    /// Group-major: all beams of the first group, then the second, …
    pub hypotheses: Vec<Hypothesis>,
    /// First token of each group.
    pub first_tokens: Vec<usize>,
    /// Fewer than the requested number of groups could be formed.
    pub fewer_groups: bool,
}

/// First-word-fixed beam search: the `groups` most likely non-end first
/// tokens each seed an independent beam search of width `beams`.
pub fn ffbs_decode<S: SequenceScorer + ?Sized>(
    scorer: &S,
    groups: usize,
    beams: usize,
    max_len: usize,
) -> Result<FfbsOutput> {
    if groups == 0 || max_len == 0 {
        return Err(Error::InvalidConfig("groups and max_len must be positive".into()));
    }
    let eos = scorer.eos();
    let first = scorer.step(&[])?;
    let mut order: Vec<usize> = (0..first.log_probs.len())
        .filter(|&w| w != eos && first.log_probs[w] > f64::NEG_INFINITY)
        .collect();
    order.sort_by(|&a, &b| first.log_probs[b].total_cmp(&first.log_probs[a]).then(a.cmp(&b)));
    order.truncate(groups);
    let mut hypotheses = Vec::with_capacity(groups * beams);
    for &w in &order {
        let seed = Hypothesis::empty().extend(w, first.log_probs[w], first.gate, eos);
        hypotheses.extend(beam_search_from(scorer, seed, beams, max_len)?);
    }
    Ok(FfbsOutput {
        fewer_groups: order.len() < groups,
        first_tokens: order,
        hypotheses,
    })
}

/// Per-step distributions of a trained generator.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistributions {
    pub p_lang: Vec<f64>,
    pub p_att: Option<Vec<f64>>,
    pub gate: f64,
    pub mixed: Vec<f64>,
}

/// Scores continuations of a fixed generator input under a fixed latent.
pub struct GeneratorScorer<'m> {
    model: &'m MiniModel,
    base: Encoded,
    copy: CopySource,
    h_z: Mat,
}

/// Tokens never produced while decoding.
const BANNED: [usize; 5] = [BOS, PAD, SEP, SP1, SP2];

impl<'m> GeneratorScorer<'m> {
    /// `max_len` decoding steps are reserved within the model's length limit.
    pub fn new(model: &'m MiniModel, input: &GenerationInput, z: usize, copy: bool, max_len: usize) -> Result<Self> {
        if input.response.is_some() {
            return Err(Error::Contract("decoding input must not contain a response".into()));
        }
        if z >= model.config.latent_k {
            return Err(Error::Contract(format!("latent {z} out of range")));
        }
        let budget = model
            .config
            .max_seq
            .checked_sub(max_len)
            .filter(|b| *b > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("max_len {max_len} leaves no room for the input")))?;
        let base = input.builder().build(&model.vocab, MaskKind::Bidirectional, budget)?;
        let copy = if copy {
            CopySource::new(&base, &model.vocab)
        } else {
            CopySource::disabled(&model.vocab)
        };
        let h_z = Mat::row_vector(model.params.get(model.heads.latent).row(z).to_vec());
        Ok(Self {
            model,
            base,
            copy,
            h_z,
        })
    }

    pub fn copy_source(&self) -> &CopySource {
        &self.copy
    }

    pub fn encoded(&self) -> &Encoded {
        &self.base
    }

    pub fn token(&self, id: usize) -> &str {
        self.copy.token(&self.model.vocab, id)
    }

    /// Input ids and mask with `prefix` appended as the response so far.
    pub fn sequence(&self, prefix: &[usize]) -> (Vec<usize>, MaskSpec) {
        let n = self.base.len();
        let mut ids = self.base.ids.clone();
        ids.extend(prefix.iter().map(|&w| self.copy.input_id(w)));
        let mask = if prefix.is_empty() {
            self.base.mask.clone()
        } else {
            MaskSpec {
                kind: MaskKind::Trapezoidal,
                knowledge: self.base.mask.knowledge.clone(),
                context: self.base.mask.context.clone(),
                response: n..n + prefix.len(),
            }
        };
        (ids, mask)
    }

    pub fn distributions(&self, prefix: &[usize]) -> Result<StepDistributions> {
        let (ids, mask) = self.sequence(prefix);
        let enc = Encoded {
            tokens: Vec::new(),
            truncated: self.base.truncated,
            ids,
            mask,
        };
        let last = enc.len() - 1;
        let mut g = self.model.graph();
        let h_z = g.constant(self.h_z.clone());
        let out = decoder_outputs(self.model, &mut g, &enc, &self.copy, h_z, last..last + 1)?;
        Ok(StepDistributions {
            p_lang: g.value(out.p_lang).data().to_vec(),
            p_att: out.p_att.map(|v| g.value(v).data().to_vec()),
            gate: out.gates.map_or(1.0, |v| g.scalar(v)),
            mixed: g.value(out.mixed).data().to_vec(),
        })
    }
}

impl SequenceScorer for GeneratorScorer<'_> {
    fn step(&self, prefix: &[usize]) -> Result<Step> {
        let d = self.distributions(prefix)?;
        let mut log_probs: Vec<f64> = d.mixed.iter().map(|p| p.ln()).collect();
        for b in BANNED {
            log_probs[b] = f64::NEG_INFINITY;
        }
        Ok(Step {
            log_probs,
            gate: d.gate,
        })
    }

    fn eos(&self) -> usize {
        EOS
    }
}
