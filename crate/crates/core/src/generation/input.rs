use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueLog, Speaker};
use crate::neural::{Encoded, MaskKind, SequenceBuilder, Span, Vocab, SPECIALS, UNK};
use crate::textsim::{is_punctuation, tokenize};
use crate::Result;

/// Generator input before encoding:
/// `<bos> k_a <sp1> s1 <sp2> s2 … <sp2> [prefix <sep>] r <eos>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationInput {
    pub knowledge: Vec<String>,
    pub context: Vec<(Speaker, Vec<String>)>,
    /// System-side tokens placed after the final `<sp2>` and closed by
    /// `<sep>`. The greeting model reads the knowledge response here.
    pub prefix: Option<Vec<String>>,
    pub response: Option<Vec<String>>,
}

impl GenerationInput {
    pub fn new(knowledge: Vec<String>, context: Vec<(Speaker, Vec<String>)>) -> Self {
        Self {
            knowledge,
            context,
            prefix: None,
            response: None,
        }
    }

    pub fn from_dialogue(dialogue: &DialogueLog, answer: &str, response: Option<&str>) -> Self {
        let context = dialogue
            .turns
            .iter()
            .map(|t| (t.speaker, tokenize(&t.text).tokens))
            .collect();
        Self {
            knowledge: tokenize(answer).tokens,
            context,
            prefix: None,
            response: response.map(|r| tokenize(r).tokens),
        }
    }

    pub fn with_response(&self, tokens: Vec<String>) -> Self {
        Self {
            response: Some(tokens),
            ..self.clone()
        }
    }

    pub fn without_response(&self) -> Self {
        Self {
            response: None,
            ..self.clone()
        }
    }

    pub fn with_prefix(&self, tokens: Vec<String>) -> Self {
        Self {
            prefix: Some(tokens),
            ..self.clone()
        }
    }

    pub fn builder(&self) -> SequenceBuilder {
        let mut b = SequenceBuilder::new();
        b.push(Span::Knowledge, std::iter::once("<bos>".to_string()).chain(self.knowledge.iter().cloned()));
        for (speaker, tokens) in &self.context {
            let head = match speaker {
                Speaker::U => "<sp1>",
                Speaker::S => "<sp2>",
            };
            b.push_utterance(Some(head), tokens.iter().cloned());
        }
        let mut tail = vec!["<sp2>".to_string()];
        if let Some(p) = &self.prefix {
            tail.extend(p.iter().cloned());
            tail.push("<sep>".into());
        }
        b.push(Span::Context, tail);
        if let Some(r) = &self.response {
            b.push(Span::Response, r.iter().cloned().chain(std::iter::once("<eos>".to_string())));
        }
        b
    }

    /// Trapezoidal when a response is present, bidirectional otherwise.
    pub fn encode(&self, vocab: &Vocab, max_seq: usize) -> Result<Encoded> {
        let kind = if self.response.is_some() {
            MaskKind::Trapezoidal
        } else {
            MaskKind::Bidirectional
        };
        self.builder().build(vocab, kind, max_seq)
    }
}

/// Where copied tokens come from, and the extended vocabulary they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct CopySource {
    /// Knowledge tokens after `<bos>`.
    pub knowledge: Range<usize>,
    /// Positions the copy distribution spreads over.
    pub positions: Vec<usize>,
    /// Extended id of the token at each of `positions`.
    pub ext_ids: Vec<usize>,
    /// Knowledge tokens outside the vocabulary; `oov[i]` has id `vocab_len + i`.
    pub oov: Vec<String>,
    pub vocab_len: usize,
    /// The knowledge is all punctuation, so attention is replaced by a
    /// uniform distribution over its positions.
    pub uniform: bool,
}

impl CopySource {
    /// Copy targets of an encoded input: non-punctuation knowledge tokens,
    /// or every knowledge token when all of them are punctuation.
    pub fn new(enc: &Encoded, vocab: &Vocab) -> Self {
        let knowledge = 1.min(enc.mask.knowledge.end)..enc.mask.knowledge.end;
        let mut oov: Vec<String> = Vec::new();
        let is_special = |t: &str| SPECIALS.contains(&t);
        let mut positions: Vec<usize> = knowledge
            .clone()
            .filter(|&i| !is_punctuation(&enc.tokens[i]) && !is_special(&enc.tokens[i]))
            .collect();
        let uniform = positions.is_empty();
        if uniform {
            positions = knowledge.clone().filter(|&i| !is_special(&enc.tokens[i])).collect();
        }
        let ext_ids = positions
            .iter()
            .map(|&i| {
                let t = &enc.tokens[i];
                vocab.get(t).unwrap_or_else(|| {
                    let k = oov.iter().position(|o| o == t).unwrap_or_else(|| {
                        oov.push(t.clone());
                        oov.len() - 1
                    });
                    vocab.len() + k
                })
            })
            .collect();
        Self {
            knowledge,
            positions,
            ext_ids,
            oov,
            vocab_len: vocab.len(),
            uniform,
        }
    }

    /// No copying: an empty source over the plain vocabulary.
    pub fn disabled(vocab: &Vocab) -> Self {
        Self {
            knowledge: 0..0,
            positions: Vec::new(),
            ext_ids: Vec::new(),
            oov: Vec::new(),
            vocab_len: vocab.len(),
            uniform: false,
        }
    }

    pub fn is_enabled(&self) -> bool {
        !self.positions.is_empty()
    }

    pub fn ext_len(&self) -> usize {
        self.vocab_len + self.oov.len()
    }

    /// Extended id of a token; unknown tokens map to `<unk>`.
    pub fn ext_id(&self, vocab: &Vocab, token: &str) -> usize {
        vocab
            .get(token)
            .or_else(|| self.oov.iter().position(|o| o == token).map(|k| self.vocab_len + k))
            .unwrap_or(UNK)
    }

    pub fn token<'a>(&'a self, vocab: &'a Vocab, id: usize) -> &'a str {
        if id < self.vocab_len {
            vocab.token(id)
        } else {
            &self.oov[id - self.vocab_len]
        }
    }

    /// Vocabulary id fed back into the encoder for an extended id.
    pub fn input_id(&self, id: usize) -> usize {
        if id < self.vocab_len {
            id
        } else {
            UNK
        }
    }
}
