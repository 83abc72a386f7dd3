use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{DialogueLabel, DialogueLog, Entity, EntityKey, KnowledgeBase, KnowledgeSnippet, Turn};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDialogue {
    pub dialogue: DialogueLog,
    /// Entities in order of appearance; two when a topic shift was prepended.
    pub entities: Vec<EntityKey>,
}

fn ask(snippet: &KnowledgeSnippet, name: &str, first: bool) -> Turn {
    if first {
        Turn::user(format!("Regarding {name}, {}", lowercase_first(&snippet.question)))
    } else {
        Turn::user(snippet.question.clone())
    }
}

fn lowercase_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

/// `len` distinct QA pairs of `entity` as alternating user/system turns.
/// With `open_ended`, the last pair contributes only its question.
fn segment<'kb, R: Rng + ?Sized>(
    kb: &'kb KnowledgeBase,
    entity: &Entity,
    open_ended: bool,
    rng: &mut R,
) -> (Vec<Turn>, &'kb KnowledgeSnippet) {
    let docs = kb.entity_snippets(&entity.key);
    let len = rng.gen_range(1..=docs.len());
    let picked: Vec<&KnowledgeSnippet> = docs.choose_multiple(rng, len).collect();
    let mut turns = Vec::with_capacity(2 * len);
    for (i, s) in picked.iter().enumerate() {
        turns.push(ask(s, entity.display_name(), i == 0));
        if !(open_ended && i + 1 == len) {
            turns.push(Turn::system(s.answer.clone()));
        }
    }
    (turns, picked[len - 1])
}

/// `per_entity` dialogues for every entity, built from its own QA pairs.
/// With probability `shift_prob` a completed segment about a different
/// entity is prepended. The gold label is the final question's snippet.
pub fn augment_with_sources<R: Rng + ?Sized>(
    kb: &KnowledgeBase,
    per_entity: usize,
    shift_prob: f64,
    rng: &mut R,
) -> Result<Vec<AugmentedDialogue>> {
    if kb.is_empty() {
        return Err(crate::Error::EmptyKnowledgeBase);
    }
    let entities = kb.entities();
    let mut out = Vec::with_capacity(per_entity * entities.len());
    for entity in entities {
        for _ in 0..per_entity {
            let mut turns = Vec::new();
            let mut sources = Vec::with_capacity(2);
            if entities.len() > 1 && rng.gen_bool(shift_prob.clamp(0.0, 1.0)) {
                let other = loop {
                    let e = entities.choose(rng).expect("non-empty");
                    if e.key != entity.key {
                        break e;
                    }
                };
                turns.extend(segment(kb, other, false, rng).0);
                sources.push(other.key.clone());
            }
            let (seg, gold) = segment(kb, entity, true, rng);
            turns.extend(seg);
            sources.push(entity.key.clone());
            let answer = gold.answer.clone();
            out.push(AugmentedDialogue {
                dialogue: DialogueLog::new(turns, Some(DialogueLabel::positive(gold.key(), answer)))?,
                entities: sources,
            });
        }
    }
    Ok(out)
}

pub fn augment_dialogues<R: Rng + ?Sized>(
    kb: &KnowledgeBase,
    per_entity: usize,
    shift_prob: f64,
    rng: &mut R,
) -> Result<Vec<DialogueLog>> {
    Ok(augment_with_sources(kb, per_entity, shift_prob, rng)?
        .into_iter()
        .map(|a| a.dialogue)
        .collect())
}
