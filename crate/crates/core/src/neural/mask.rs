use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::Vocab;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    Bidirectional,
    Causal,
    /// Knowledge and context see each other but never the response; the
    /// response sees all of knowledge and context and itself causally.
    Trapezoidal,
}

/// Attention pattern plus the three spans it refers to. The spans must be
/// contiguous, in knowledge → context → response order, and together cover
/// the whole sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub knowledge: Range<usize>,
    pub context: Range<usize>,
    pub response: Range<usize>,
}

impl MaskSpec {
    /// Everything is context.
    pub fn plain(kind: MaskKind, len: usize) -> Self {
        Self {
            kind,
            knowledge: 0..0,
            context: 0..len,
            response: len..len,
        }
    }

    pub fn len(&self) -> usize {
        self.response.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, seq_len: usize) -> Result<()> {
        let spans = [
            ("knowledge", &self.knowledge),
            ("context", &self.context),
            ("response", &self.response),
        ];
        for (name, s) in spans {
            if s.start > s.end {
                return Err(Error::Mask(format!("{name} span {s:?} is reversed")));
            }
        }
        for (i, (a_name, a)) in spans.iter().enumerate() {
            for (b_name, b) in &spans[i + 1..] {
                if a.start < b.end && b.start < a.end {
                    return Err(Error::Mask(format!("{a_name} span {a:?} overlaps {b_name} span {b:?}")));
                }
            }
        }
        if self.knowledge.start != 0
            || self.knowledge.end != self.context.start
            || self.context.end != self.response.start
            || self.response.end != seq_len
        {
            return Err(Error::Mask(format!(
                "spans {:?}/{:?}/{:?} do not partition a sequence of length {seq_len}",
                self.knowledge, self.context, self.response
            )));
        }
        if self.kind == MaskKind::Trapezoidal && self.response.is_empty() {
            return Err(Error::Mask("trapezoidal mask without a response span".into()));
        }
        Ok(())
    }

    /// Can position `i` attend to position `j`?
    pub fn visible(&self, i: usize, j: usize) -> bool {
        match self.kind {
            MaskKind::Bidirectional => true,
            MaskKind::Causal => j <= i,
            MaskKind::Trapezoidal => {
                let r = self.response.start;
                if i < r {
                    j < r
                } else {
                    j <= i
                }
            }
        }
    }
}

/// Row-major `seq_len × seq_len` visibility matrix.
pub fn build_mask(spec: &MaskSpec, seq_len: usize) -> Result<Vec<bool>> {
    spec.validate(seq_len)?;
    let mut out = Vec::with_capacity(seq_len * seq_len);
    for i in 0..seq_len {
        for j in 0..seq_len {
            out.push(spec.visible(i, j));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Span {
    Knowledge,
    Context,
    Response,
}

#[derive(Debug, Clone)]
struct Part {
    span: Span,
    head: Vec<String>,
    tokens: Vec<String>,
    droppable: bool,
}

/// A model input before it is fitted to `max_seq`.
#[derive(Debug, Clone, Default)]
pub struct SequenceBuilder {
    parts: Vec<Part>,
}

/// A fitted, id-mapped model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub tokens: Vec<String>,
    pub mask: MaskSpec,
    /// Set when context was dropped to fit `max_seq`.
    pub truncated: bool,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl SequenceBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// A fixed segment that is never truncated.
    pub fn push<S: Into<String>>(&mut self, span: Span, tokens: impl IntoIterator<Item = S>) -> &mut Self {
        self.parts.push(Part {
            span,
            head: Vec::new(),
            tokens: tokens.into_iter().map(Into::into).collect(),
            droppable: false,
        });
        self
    }

    /// A context utterance. Under length pressure the oldest utterances are
    /// removed whole (with their `head` marker), then the oldest surviving
    /// one loses tokens from its left.
    pub fn push_utterance<S: Into<String>>(
        &mut self,
        head: Option<&str>,
        tokens: impl IntoIterator<Item = S>,
    ) -> &mut Self {
        self.parts.push(Part {
            span: Span::Context,
            head: head.map(|h| vec![h.to_string()]).unwrap_or_default(),
            tokens: tokens.into_iter().map(Into::into).collect(),
            droppable: true,
        });
        self
    }

    /// Every token in order, before truncation.
    pub fn tokens(&self) -> Vec<String> {
        self.parts
            .iter()
            .flat_map(|p| p.head.iter().chain(&p.tokens).cloned())
            .collect()
    }

    pub fn build(&self, vocab: &Vocab, kind: MaskKind, max_seq: usize) -> Result<Encoded> {
        let mut parts = self.parts.clone();
        let total = |parts: &[Part]| parts.iter().map(|p| p.head.len() + p.tokens.len()).sum::<usize>();
        let len = total(&parts);
        let mut truncated = false;
        while total(&parts) > max_seq {
            let droppable: Vec<usize> = (0..parts.len()).filter(|&i| parts[i].droppable).collect();
            match droppable.as_slice() {
                [] => return Err(Error::TooLong { len, max_seq }),
                [only] => {
                    let excess = total(&parts) - max_seq;
                    let p = &mut parts[*only];
                    if excess >= p.tokens.len() {
                        return Err(Error::TooLong { len, max_seq });
                    }
                    p.tokens.drain(..excess);
                }
                [oldest, ..] => {
                    parts.remove(*oldest);
                }
            }
            truncated = true;
        }

        let mut tokens = Vec::new();
        let mut bounds = [0usize; 3];
        let mut last = Span::Knowledge;
        for p in &parts {
            if (p.span as u8) < (last as u8) {
                return Err(Error::Mask(format!("{:?} segment after {:?}", p.span, last)));
            }
            last = p.span;
            tokens.extend(p.head.iter().cloned());
            tokens.extend(p.tokens.iter().cloned());
            bounds[p.span as usize] = tokens.len();
        }
        let k_end = bounds[0];
        let c_end = bounds[1].max(k_end);
        let mask = MaskSpec {
            kind,
            knowledge: 0..k_end,
            context: k_end..c_end,
            response: c_end..tokens.len(),
        };
        mask.validate(tokens.len())?;
        let ids = tokens.iter().map(|t| vocab.id(t)).collect();
        Ok(Encoded {
            ids,
            tokens,
            mask,
            truncated,
        })
    }
}
