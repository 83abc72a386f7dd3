//! Dialogues, the hierarchical knowledge base, file ingestion, and the
//! synthetic corpus generator.

mod io;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    canonical_knowledge_json, canonical_labels_json, canonical_logs_json, load_knowledge_base,
    load_logs, parse_knowledge_base, parse_logs, write_corpus,
};
pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};

/// Entity id used for domain-wide knowledge (taxi, train).
pub const DOMAIN_WIDE_ENTITY: &str = "*";

/// Domains whose knowledge is not tied to a named entity.
pub const DOMAIN_WIDE_DOMAINS: [&str; 2] = ["taxi", "train"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    U,
    S,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::U,
            text: text.into(),
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::S,
            text: text.into(),
        }
    }
}

/// `(domain, entity_id)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityKey {
    pub domain: String,
    pub entity_id: String,
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.domain, self.entity_id)
    }
}

/// `(domain, entity_id, doc_id)`, the identity of a snippet.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KnowledgeKey {
    pub domain: String,
    pub entity_id: String,
    pub doc_id: String,
}

impl KnowledgeKey {
    pub fn new(domain: &str, entity_id: &str, doc_id: &str) -> Self {
        Self {
            domain: domain.to_string(),
            entity_id: entity_id.to_string(),
            doc_id: doc_id.to_string(),
        }
    }

    pub fn entity(&self) -> EntityKey {
        EntityKey {
            domain: self.domain.clone(),
            entity_id: self.entity_id.clone(),
        }
    }
}

impl fmt::Display for KnowledgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.domain, self.entity_id, self.doc_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSnippet {
    pub domain: String,
    pub entity_id: String,
    pub entity_name: Option<String>,
    pub doc_id: String,
    pub question: String,
    pub answer: String,
}

impl KnowledgeSnippet {
    pub fn key(&self) -> KnowledgeKey {
        KnowledgeKey::new(&self.domain, &self.entity_id, &self.doc_id)
    }

    pub fn entity(&self) -> EntityKey {
        EntityKey {
            domain: self.domain.clone(),
            entity_id: self.entity_id.clone(),
        }
    }

    /// Entity name, or the domain word for domain-wide snippets.
    pub fn display_entity(&self) -> &str {
        self.entity_name.as_deref().unwrap_or(&self.domain)
    }

    fn validate(&self) -> Result<()> {
        if self.domain.trim().is_empty() {
            return Err(Error::Integrity(format!("snippet {} has an empty domain", self.key())));
        }
        if self.question.trim().is_empty() || self.answer.trim().is_empty() {
            return Err(Error::Integrity(format!(
                "snippet {} has an empty question or answer",
                self.key()
            )));
        }
        Ok(())
    }
}

/// A named or domain-wide entity and the index range of its snippets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub key: EntityKey,
    pub name: Option<String>,
    range: std::ops::Range<usize>,
}

impl Entity {
    pub fn is_domain_wide(&self) -> bool {
        self.name.is_none()
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.key.domain)
    }
}

/// Immutable snippet collection, sorted by `(domain, entity_id, doc_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    snippets: Vec<KnowledgeSnippet>,
    by_key: BTreeMap<KnowledgeKey, usize>,
    entities: Vec<Entity>,
    by_entity: BTreeMap<EntityKey, usize>,
    by_name: BTreeMap<String, EntityKey>,
}

impl KnowledgeBase {
    pub fn new(mut snippets: Vec<KnowledgeSnippet>) -> Result<Self> {
        for s in &snippets {
            s.validate()?;
        }
        snippets.sort_by(|a, b| a.key().cmp(&b.key()));

        let mut by_key = BTreeMap::new();
        for (i, s) in snippets.iter().enumerate() {
            if by_key.insert(s.key(), i).is_some() {
                return Err(Error::DuplicateSnippet(s.key()));
            }
        }

        let mut entities: Vec<Entity> = Vec::new();
        for (i, s) in snippets.iter().enumerate() {
            match entities.last_mut() {
                Some(e) if e.key == s.entity() => {
                    if e.name != s.entity_name {
                        return Err(Error::Integrity(format!(
                            "entity {} has inconsistent names",
                            e.key
                        )));
                    }
                    e.range.end = i + 1;
                }
                _ => entities.push(Entity {
                    key: s.entity(),
                    name: s.entity_name.clone(),
                    range: i..i + 1,
                }),
            }
        }
        let by_entity = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.key.clone(), i))
            .collect();
        let by_name = entities
            .iter()
            .filter_map(|e| e.name.clone().map(|n| (n, e.key.clone())))
            .collect();

        Ok(Self {
            snippets,
            by_key,
            entities,
            by_entity,
            by_name,
        })
    }

    pub fn total(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn snippets(&self) -> &[KnowledgeSnippet] {
        &self.snippets
    }

    pub fn get(&self, key: &KnowledgeKey) -> Option<&KnowledgeSnippet> {
        self.by_key.get(key).map(|&i| &self.snippets[i])
    }

    pub fn contains(&self, key: &KnowledgeKey) -> bool {
        self.by_key.contains_key(key)
    }

    pub fn count_in_domain(&self, domain: &str) -> usize {
        self.snippets.iter().filter(|s| s.domain == domain).count()
    }

    /// Distinct domains in sorted order.
    pub fn domains(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.entities.iter().map(|e| e.key.domain.as_str()).collect();
        out.dedup();
        out
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entities_in(&self, domain: &str) -> impl Iterator<Item = &Entity> + '_ {
        let domain = domain.to_string();
        self.entities.iter().filter(move |e| e.key.domain == domain)
    }

    pub fn entity(&self, key: &EntityKey) -> Option<&Entity> {
        self.by_entity.get(key).map(|&i| &self.entities[i])
    }

    pub fn entity_snippets(&self, key: &EntityKey) -> &[KnowledgeSnippet] {
        self.entity(key)
            .map_or(&[][..], |e| &self.snippets[e.range.clone()])
    }

    pub fn entity_by_name(&self, name: &str) -> Option<&EntityKey> {
        self.by_name.get(name)
    }
}

/// Gold annotation for the final turn of a dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueLabel {
    pub target: bool,
    pub knowledge: Option<KnowledgeKey>,
    pub response: Option<String>,
}

impl DialogueLabel {
    pub fn negative() -> Self {
        Self {
            target: false,
            knowledge: None,
            response: None,
        }
    }

    pub fn positive(knowledge: KnowledgeKey, response: impl Into<String>) -> Self {
        Self {
            target: true,
            knowledge: Some(knowledge),
            response: Some(response.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueLog {
    pub turns: Vec<Turn>,
    pub label: Option<DialogueLabel>,
}

impl DialogueLog {
    pub fn new(turns: Vec<Turn>, label: Option<DialogueLabel>) -> Result<Self> {
        let log = Self { turns, label };
        log.validate()?;
        Ok(log)
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::Integrity("dialogue has no turns".into()));
        }
        if let Some(label) = &self.label {
            if label.target && self.turns.last().map(|t| t.speaker) != Some(Speaker::U) {
                return Err(Error::Integrity(
                    "knowledge-seeking dialogue must end with a user turn".into(),
                ));
            }
        }
        Ok(())
    }

    /// Checks that a labelled knowledge triple exists in `kb`.
    pub fn validate_against(&self, kb: &KnowledgeBase) -> Result<()> {
        match self.label.as_ref().and_then(|l| l.knowledge.as_ref()) {
            Some(key) if !kb.contains(key) => Err(Error::Integrity(format!(
                "labelled knowledge {key} is not in the knowledge base"
            ))),
            _ => Ok(()),
        }
    }

    pub fn last(&self) -> &Turn {
        self.turns.last().expect("dialogue has at least one turn")
    }

    /// The last `n` turns.
    pub fn window(&self, n: usize) -> &[Turn] {
        &self.turns[self.turns.len().saturating_sub(n)..]
    }

    pub fn target(&self) -> Option<bool> {
        self.label.as_ref().map(|l| l.target)
    }

    pub fn gold_knowledge(&self) -> Option<&KnowledgeKey> {
        self.label.as_ref().and_then(|l| l.knowledge.as_ref())
    }

    pub fn gold_response(&self) -> Option<&str> {
        self.label.as_ref().and_then(|l| l.response.as_deref())
    }

    pub fn push(&mut self, turn: Turn) {
        self.turns.push(turn);
    }
}
