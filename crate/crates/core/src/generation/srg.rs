use super::decode::{beam_search, ffbs_decode, GeneratorScorer, Hypothesis};
use super::latent::{argmax, prior_z};
use super::{DecodeConfig, GenerationHypothesis, GenerationInput};
use crate::neural::MiniModel;
use crate::textsim::{is_punctuation, tokenize};
use crate::Result;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "do", "for", "from", "i", "in", "is", "it", "of", "on",
    "or", "that", "the", "there", "they", "this", "to", "with", "you", "your",
];

fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .tokens
        .into_iter()
        .filter(|t| !is_punctuation(t) && !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Splits a response into its knowledge part and a trailing greeting. The
/// last sentence counts as greeting when it shares no content token with
/// the answer; a single-sentence response has no greeting.
pub fn split_response(response: &str, answer: &str) -> (String, String) {
    let trimmed = response.trim_end();
    let body = trimmed.trim_end_matches(['.', '?', '!']);
    let cut = body
        .char_indices()
        .filter(|&(i, c)| matches!(c, '.' | '?' | '!') && body[i + c.len_utf8()..].starts_with(char::is_whitespace))
        .map(|(i, c)| i + c.len_utf8())
        .last();
    let Some(cut) = cut else {
        return (trimmed.to_string(), String::new());
    };
    let (head, tail) = (trimmed[..cut].trim(), trimmed[cut..].trim());
    let answer_words = content_tokens(answer);
    if content_tokens(tail).iter().any(|t| answer_words.contains(t)) {
        (trimmed.to_string(), String::new())
    } else {
        (head.to_string(), tail.to_string())
    }
}

fn prior_latent(model: &MiniModel, input: &GenerationInput) -> Result<usize> {
    Ok(argmax(&prior_z(model, &input.without_response())?))
}

/// Candidates from one generator: FFBS, or plain beam search when
/// `cfg.ffbs` is off.
pub fn decode_candidates(
    model: &MiniModel,
    input: &GenerationInput,
    z: usize,
    copy: bool,
    cfg: &DecodeConfig,
) -> Result<Vec<GenerationHypothesis>> {
    let scorer = GeneratorScorer::new(model, input, z, copy, cfg.max_len)?;
    let hyps = if cfg.ffbs {
        ffbs_decode(&scorer, cfg.groups, cfg.beams, cfg.max_len)?.hypotheses
    } else {
        beam_search(&scorer, cfg.groups * cfg.beams, cfg.max_len)?
    };
    Ok(hyps.iter().map(|h| to_candidate(&scorer, h)).collect())
}

fn to_candidate(scorer: &GeneratorScorer<'_>, h: &Hypothesis) -> GenerationHypothesis {
    let tokens: Vec<String> = h.tokens.iter().map(|&w| scorer.token(w).to_string()).collect();
    GenerationHypothesis {
        knowledge_len: tokens.len(),
        tokens,
        step_log_probs: h.step_log_probs.clone(),
        gates: h.gates.clone(),
        log_prob: h.log_prob,
        hit_max_len: h.hit_max_len,
        greeting_only: false,
        s_nll: 0.0,
        s_bert: 0.0,
        s_jwd: 0.0,
        s_total: 0.0,
    }
}

/// Knowledge candidates from `knowledge` (copy on), each completed by the
/// best greeting from `greeting` (copy off) conditioned on it.
pub fn segmented_generate(
    knowledge: &MiniModel,
    greeting: &MiniModel,
    input: &GenerationInput,
    cfg: &DecodeConfig,
) -> Result<Vec<GenerationHypothesis>> {
    let z = prior_latent(knowledge, input)?;
    let mut out = decode_candidates(knowledge, input, z, true, cfg)?;
    for cand in &mut out {
        let ginput = input.with_prefix(cand.tokens.clone());
        let gz = prior_latent(greeting, &ginput)?;
        let scorer = GeneratorScorer::new(greeting, &ginput, gz, false, cfg.max_len)?;
        let best = beam_search(&scorer, cfg.beams, cfg.max_len)?.remove(0);
        cand.greeting_only = cand.tokens.is_empty();
        cand.tokens.extend(best.tokens.iter().map(|&w| scorer.token(w).to_string()));
        cand.step_log_probs.extend(&best.step_log_probs);
        cand.gates.extend(&best.gates);
        cand.log_prob += best.log_prob;
        cand.hit_max_len |= best.hit_max_len;
    }
    Ok(out)
}

/// Single-generator path: the whole response is the knowledge part.
pub fn single_generate(model: &MiniModel, input: &GenerationInput, cfg: &DecodeConfig) -> Result<Vec<GenerationHypothesis>> {
    let z = prior_latent(model, input)?;
    decode_candidates(model, input, z, cfg.copy, cfg)
}
