//! Response generation: a latent-variable decoder over the shared encoder
//! with a knowledge copy mechanism, first-word-fixed beam search, a
//! separate greeting generator, and similarity reranking.

mod decode;
mod decoder;
mod dist;
mod input;
mod latent;
mod rerank;
mod srg;

pub use decode::{
    beam_search, beam_search_from, ffbs_decode, greedy_decode, FfbsOutput, GeneratorScorer, Hypothesis,
    SequenceScorer, Step, StepDistributions,
};
pub use decoder::{
    bow_graph, decoder_outputs, generation_inputs, generation_losses, kld_graph, latent_losses, train_generator,
    DecoderOut, GenExample, GenLosses, GenObjective, LatentLosses, ResponsePart, GENERATOR_HEAD,
};
pub use dist::{
    bow_distribution, bow_loss, copy_gate, decoder_vocab_distribution, kld_loss, knowledge_attention_distribution,
    mixed_distribution, norm_loss, sequence_nll, total_loss, LossParts, LossWeights, LOG_EPS,
};
pub use input::{CopySource, GenerationInput};
pub use latent::{argmax, latent_state, posterior_graph, posterior_z, prior_graph, prior_z, LatentState};
pub use rerank::{best_index, combined_score, normalize_scores, postprocess_rerank, RerankWeights};
pub use srg::{decode_candidates, segmented_generate, single_generate, split_response};

use serde::{Deserialize, Serialize};

use crate::neural::MiniModel;
use crate::textsim::tokenize;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub groups: usize,
    pub beams: usize,
    pub max_len: usize,
    /// First-word-fixed groups; plain beam search of width
    /// `groups × beams` otherwise.
    pub ffbs: bool,
    /// Copy mechanism for the single-generator path.
    pub copy: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            groups: 4,
            beams: 2,
            max_len: 40,
            ffbs: true,
            copy: true,
        }
    }
}

/// One decoded response with its rerank scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationHypothesis {
    pub tokens: Vec<String>,
    /// Leading tokens that form the knowledge part.
    pub knowledge_len: usize,
    pub step_log_probs: Vec<f64>,
    pub gates: Vec<f64>,
    pub log_prob: f64,
    pub hit_max_len: bool,
    /// The knowledge part came out empty.
    pub greeting_only: bool,
    pub s_nll: f64,
    pub s_bert: f64,
    pub s_jwd: f64,
    pub s_total: f64,
}

impl GenerationHypothesis {
    /// A bare candidate, mostly for tests and external candidate lists.
    pub fn from_text(text: &str, log_prob: f64) -> Self {
        let tokens = tokenize(text).tokens;
        Self {
            knowledge_len: tokens.len(),
            tokens,
            step_log_probs: Vec::new(),
            gates: Vec::new(),
            log_prob,
            hit_max_len: false,
            greeting_only: false,
            s_nll: 0.0,
            s_bert: 0.0,
            s_jwd: 0.0,
            s_total: 0.0,
        }
    }

    pub fn text(&self) -> String {
        detokenize(&self.tokens)
    }

    pub fn knowledge_text(&self) -> String {
        detokenize(&self.tokens[..self.knowledge_len])
    }
}

/// Joins tokens with spaces, attaching closing punctuation to the left.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    for t in tokens {
        let attach = matches!(t.as_str(), "." | "," | "?" | "!" | ";" | ":" | ")" | "'");
        if !out.is_empty() && !attach && !out.ends_with(['(', '-']) {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub text: String,
    pub s_nll: f64,
    pub s_bert: f64,
    pub s_jwd: f64,
    pub s_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub response: String,
    pub candidates: Vec<CandidateScore>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub decode: DecodeConfig,
    pub loss: LossWeights,
    pub rerank: RerankWeights,
}

/// Decodes, reranks against `answer`, and returns the chosen response with
/// every scored candidate. `greeting` enables segmented generation.
pub fn generate(
    knowledge: &MiniModel,
    greeting: Option<&MiniModel>,
    input: &GenerationInput,
    answer: &str,
    cfg: &GenerationConfig,
) -> Result<GenerationOutput> {
    knowledge.require_trained(GENERATOR_HEAD)?;
    let mut candidates = match greeting {
        Some(gm) => {
            gm.require_trained(GENERATOR_HEAD)?;
            segmented_generate(knowledge, gm, input, &cfg.decode)?
        }
        None => single_generate(knowledge, input, &cfg.decode)?,
    };
    let best = postprocess_rerank(&mut candidates, answer, &knowledge.embedding_table(), &cfg.rerank)?;
    Ok(GenerationOutput {
        response: candidates[best].text(),
        candidates: candidates
            .iter()
            .map(|c| CandidateScore {
                text: c.text(),
                s_nll: c.s_nll,
                s_bert: c.s_bert,
                s_jwd: c.s_jwd,
                s_total: c.s_total,
            })
            .collect(),
    })
}
