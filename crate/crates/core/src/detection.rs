//! Knowledge-seeking turn detection.
//!
//! The input is `<bos> s_1 … s_{n-1} <sep> s_n dom <eos>`, where `dom` is
//! the domain of the best entity match (or a taxi/train keyword). The
//! pooled `<bos>` state is concatenated with a one-bit knowledge flag before
//! the classification head.

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueLog, KnowledgeBase};
use crate::evalmetrics::{precision_recall_f1, Prf};
use crate::neural::{
    train, Encoded, Graph, Mat, MaskKind, MiniModel, Objective, SequenceBuilder, Span, TrainConfig, TrainReport,
    Var, Vocab,
};
use crate::retrieval::{domain_keywords, retrieve_entities, RetrievalConfig};
use crate::textsim::tokenize;
use crate::{Error, Result};

pub const DETECTION_DOMAINS: [&str; 5] = ["taxi", "train", "hotel", "restaurant", "other"];
pub const HEAD: &str = "detect";

/// Maps a knowledge-base domain onto the detection tag set.
pub fn domain_tag(domain: &str) -> &'static str {
    DETECTION_DOMAINS
        .iter()
        .find(|d| **d == domain)
        .copied()
        .unwrap_or("other")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionInput {
    pub history: Vec<Vec<String>>,
    pub last: Vec<String>,
    pub dom: &'static str,
    pub knowledge_flag: bool,
}

impl DetectionInput {
    /// The full token sequence, before any truncation.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = vec!["<bos>".to_string()];
        for u in &self.history {
            out.extend(u.iter().cloned());
        }
        out.push("<sep>".into());
        out.extend(self.last.iter().cloned());
        out.push(self.dom.into());
        out.push("<eos>".into());
        out
    }

    pub fn encode(&self, vocab: &Vocab, max_seq: usize) -> Result<Encoded> {
        let mut b = SequenceBuilder::new();
        b.push(Span::Context, ["<bos>"]);
        for u in &self.history {
            b.push_utterance(None, u.iter().cloned());
        }
        b.push(Span::Context, ["<sep>"]);
        b.push_utterance(None, self.last.iter().cloned());
        b.push(Span::Context, [self.dom, "<eos>"]);
        b.build(vocab, MaskKind::Bidirectional, max_seq)
    }
}

pub fn format_detection_input(dialogue: &DialogueLog, kb: &KnowledgeBase, cfg: &RetrievalConfig) -> DetectionInput {
    let n = dialogue.turns.len();
    let history = dialogue.turns[..n - 1].iter().map(|t| tokenize(&t.text).tokens).collect();
    let last = tokenize(&dialogue.last().text).tokens;

    let matches = retrieve_entities(dialogue, kb, cfg);
    let (dom, knowledge_flag) = match matches.first() {
        Some(m) => (domain_tag(&m.entity.domain), true),
        None => {
            let window: Vec<String> = dialogue
                .window(cfg.fuzzy_window)
                .iter()
                .flat_map(|t| tokenize(&t.text).tokens)
                .collect();
            let hit = ["taxi", "train"]
                .into_iter()
                .find(|d| domain_keywords(d).iter().any(|k| window.iter().any(|w| w == k)));
            match hit {
                Some(d) => (domain_tag(d), true),
                None => ("other", false),
            }
        }
    };
    DetectionInput {
        history,
        last,
        dom,
        knowledge_flag,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub target: bool,
    pub prob: f64,
}

/// Logit of the detection head for one encoded input.
pub fn detection_logit<'m>(model: &'m MiniModel, g: &mut Graph<'m>, enc: &Encoded, flag: bool) -> Result<Var> {
    let f = model.forward(g, &enc.ids, &enc.mask, None)?;
    let pooled = g.slice_rows(f.hidden, 0, 1);
    let bit = g.constant(Mat::scalar(if flag { 1.0 } else { 0.0 }));
    let x = g.concat_cols(&[pooled, bit]);
    Ok(g.linear(x, model.heads.detect.w, model.heads.detect.b))
}

pub fn detect(model: &MiniModel, input: &DetectionInput) -> Result<Detection> {
    model.require_trained(HEAD)?;
    let enc = input.encode(&model.vocab, model.config.max_seq)?;
    let mut g = model.graph();
    let logit = detection_logit(model, &mut g, &enc, input.knowledge_flag)?;
    let prob = crate::neural::sigmoid(g.scalar(logit));
    Ok(Detection {
        target: prob >= 0.5,
        prob,
    })
}

/// One encoded training example.
#[derive(Debug, Clone)]
pub struct DetectionExample {
    pub encoded: Encoded,
    pub flag: bool,
    pub target: bool,
}

/// Binary cross-entropy on the detection head.
pub struct DetectionObjective;

/// `−ln σ(s·x)` for label sign `s`, computed stably as a graph.
pub(crate) fn bce_with_logit<'m>(g: &mut Graph<'m>, logit: Var, target: bool) -> Var {
    let signed = if target { logit } else { g.scale(logit, -1.0) };
    let p = g.sigmoid(signed);
    let lp = g.log(p, 1e-10);
    let s = g.sum(lp);
    g.scale(s, -1.0)
}

impl Objective for DetectionObjective {
    type Example = DetectionExample;

    fn heads(&self) -> &[&'static str] {
        &[HEAD]
    }

    fn loss<'m>(&self, model: &'m MiniModel, g: &mut Graph<'m>, ex: &DetectionExample) -> Result<Var> {
        let logit = detection_logit(model, g, &ex.encoded, ex.flag)?;
        Ok(bce_with_logit(g, logit, ex.target))
    }
}

fn labeled_target(d: &DialogueLog, i: usize) -> Result<bool> {
    d.target().ok_or(Error::Unlabeled(i))
}

pub fn detection_examples(
    model: &MiniModel,
    dialogues: &[DialogueLog],
    kb: &KnowledgeBase,
    cfg: &RetrievalConfig,
) -> Result<Vec<DetectionExample>> {
    dialogues
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let input = format_detection_input(d, kb, cfg);
            Ok(DetectionExample {
                encoded: input.encode(&model.vocab, model.config.max_seq)?,
                flag: input.knowledge_flag,
                target: labeled_target(d, i)?,
            })
        })
        .collect()
}

pub fn train_detection(
    model: &mut MiniModel,
    dialogues: &[DialogueLog],
    kb: &KnowledgeBase,
    rcfg: &RetrievalConfig,
    tcfg: &TrainConfig,
) -> Result<TrainReport> {
    let examples = detection_examples(model, dialogues, kb, rcfg)?;
    train(model, &examples, &DetectionObjective, tcfg)
}

pub fn evaluate_detection(
    model: &MiniModel,
    dialogues: &[DialogueLog],
    kb: &KnowledgeBase,
    cfg: &RetrievalConfig,
) -> Result<Prf> {
    let mut pred = Vec::with_capacity(dialogues.len());
    let mut gold = Vec::with_capacity(dialogues.len());
    for (i, d) in dialogues.iter().enumerate() {
        gold.push(labeled_target(d, i)?);
        pred.push(detect(model, &format_detection_input(d, kb, cfg))?.target);
    }
    precision_recall_f1(&pred, &gold)
}
