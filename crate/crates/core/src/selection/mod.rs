//! Knowledge selection: retrieve & rank, the domain → entity → document
//! cascade, their ensemble, and dialogue augmentation for training.

mod augment;
mod cascade;
mod rank;

pub use augment::{augment_dialogues, augment_with_sources, AugmentedDialogue};
pub use cascade::{
    cascade_select, ensemble_select, three_step_select, train_three_step, CascadeResult, LevelExample,
    LevelObjective, LevelScorer, RankScorer, StaticLevels, ThreeStepScorer,
};
pub use rank::{
    rank_examples, retrieve_and_rank, sample_negatives, train_rank, RankExample, RankObjective,
};

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueLog, KnowledgeKey, KnowledgeSnippet};
use crate::evalmetrics::MetricReport;
use crate::neural::{Encoded, Graph, Linear, MaskKind, MiniModel, SequenceBuilder, Span, Var};
use crate::textsim::tokenize;
use crate::{Error, Result};

/// The scoring heads used by selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    /// A whole snippet, scored by the retrieve & rank head.
    Rank,
    Domain,
    Entity,
    Document,
}

impl Level {
    pub fn head_name(self) -> &'static str {
        match self {
            Level::Rank => "rank",
            Level::Domain => "domain",
            Level::Entity => "entity",
            Level::Document => "document",
        }
    }

    pub fn head(self, model: &MiniModel) -> Linear {
        match self {
            Level::Rank => model.heads.rank,
            Level::Domain => model.heads.domain,
            Level::Entity => model.heads.entity,
            Level::Document => model.heads.document,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub snippet: KnowledgeSnippet,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Descending by score, ties by `(domain, entity_id, doc_id)`.
    pub ranked: Vec<RankedCandidate>,
    pub chosen: KnowledgeSnippet,
}

/// Top-5 output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutput {
    pub knowledge: Vec<KnowledgeKey>,
    pub scores: Vec<f64>,
}

impl SelectionResult {
    pub fn from_scores(mut ranked: Vec<RankedCandidate>) -> Result<Self> {
        if ranked.is_empty() {
            return Err(Error::EmptyLevel {
                level: "document",
                parent: "selection".into(),
            });
        }
        ranked.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.snippet.key().cmp(&b.snippet.key()))
        });
        let chosen = ranked[0].snippet.clone();
        Ok(Self { ranked, chosen })
    }

    /// 1-based rank of `key`, if present.
    pub fn rank_of(&self, key: &KnowledgeKey) -> Option<usize> {
        self.ranked.iter().position(|c| &c.snippet.key() == key).map(|i| i + 1)
    }

    pub fn output(&self) -> SelectionOutput {
        let top = &self.ranked[..self.ranked.len().min(5)];
        SelectionOutput {
            knowledge: top.iter().map(|c| c.snippet.key()).collect(),
            scores: top.iter().map(|c| c.score).collect(),
        }
    }
}

fn dialogue_builder(dialogue: &DialogueLog) -> SequenceBuilder {
    let mut b = SequenceBuilder::new();
    b.push(Span::Context, ["<bos>"]);
    for t in &dialogue.turns {
        b.push_utterance(None, tokenize(&t.text).tokens);
    }
    b
}

/// `<bos> S <sep> dom <sep> ent <sep> question answer <eos>`
pub fn format_ranking_input(dialogue: &DialogueLog, snippet: &KnowledgeSnippet) -> SequenceBuilder {
    let mut b = dialogue_builder(dialogue);
    let mut tail = vec!["<sep>".to_string()];
    tail.extend(tokenize(&snippet.domain).tokens);
    tail.push("<sep>".into());
    tail.extend(tokenize(snippet.display_entity()).tokens);
    tail.push("<sep>".into());
    tail.extend(tokenize(&snippet.question).tokens);
    tail.extend(tokenize(&snippet.answer).tokens);
    tail.push("<eos>".into());
    b.push(Span::Context, tail);
    b
}

/// `<bos> S <sep> dom <eos>`
pub fn format_domain_input(dialogue: &DialogueLog, dom: &str) -> SequenceBuilder {
    let mut b = dialogue_builder(dialogue);
    let mut tail = vec!["<sep>".to_string()];
    tail.extend(tokenize(dom).tokens);
    tail.push("<eos>".into());
    b.push(Span::Context, tail);
    b
}

/// `<bos> S <sep> dom <sep> ent <eos>`
pub fn format_entity_input(dialogue: &DialogueLog, dom: &str, ent: &str) -> SequenceBuilder {
    let mut b = dialogue_builder(dialogue);
    let mut tail = vec!["<sep>".to_string()];
    tail.extend(tokenize(dom).tokens);
    tail.push("<sep>".into());
    tail.extend(tokenize(ent).tokens);
    tail.push("<eos>".into());
    b.push(Span::Context, tail);
    b
}

pub fn encode_input(model: &MiniModel, input: &SequenceBuilder) -> Result<Encoded> {
    input.build(&model.vocab, MaskKind::Bidirectional, model.config.max_seq)
}

/// Head logit on the pooled `<bos>` state.
pub fn pooled_logit<'m>(model: &'m MiniModel, g: &mut Graph<'m>, enc: &Encoded, level: Level) -> Result<Var> {
    let f = model.forward(g, &enc.ids, &enc.mask, None)?;
    let pooled = g.slice_rows(f.hidden, 0, 1);
    let head = level.head(model);
    Ok(g.linear(pooled, head.w, head.b))
}

/// Sigmoid score of `input` under the head for `level`.
pub fn score_candidate(model: &MiniModel, level: Level, input: &SequenceBuilder) -> Result<f64> {
    model.require_trained(level.head_name())?;
    let enc = encode_input(model, input)?;
    let mut g = model.graph();
    let logit = pooled_logit(model, &mut g, &enc, level)?;
    Ok(crate::neural::sigmoid(g.scalar(logit)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelErrors {
    pub domain: usize,
    pub entity: usize,
    pub document: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEval {
    pub metrics: MetricReport,
    pub errors: LevelErrors,
}

/// MRR@5, Recall@1/5 and top-1 errors, each attributed to the shallowest
/// mismatching level.
pub fn evaluate_selection(predictions: &[SelectionResult], golds: &[KnowledgeKey]) -> Result<SelectionEval> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: golds.len(),
        });
    }
    let ranks: Vec<Option<usize>> = predictions.iter().zip(golds).map(|(p, g)| p.rank_of(g)).collect();
    let mut errors = LevelErrors::default();
    for (p, g) in predictions.iter().zip(golds) {
        let c = p.chosen.key();
        if c.domain != g.domain {
            errors.domain += 1;
        } else if c.entity_id != g.entity_id {
            errors.entity += 1;
        } else if c.doc_id != g.doc_id {
            errors.document += 1;
        }
    }
    Ok(SelectionEval {
        metrics: MetricReport::default().with_ranking(&ranks),
        errors,
    })
}
