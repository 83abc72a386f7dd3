use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rank::rank_candidates;
use super::{
    encode_input, format_domain_input, format_entity_input, format_ranking_input, pooled_logit, score_candidate,
    Level, RankedCandidate, SelectionResult,
};
use crate::corpus::{DialogueLog, EntityKey, KnowledgeBase, KnowledgeKey};
use crate::detection::bce_with_logit;
use crate::neural::{train, Encoded, Graph, MiniModel, Objective, TrainConfig, TrainReport, Var};
use crate::retrieval::RetrievalConfig;
use crate::{Error, Result};

/// Per-level probabilities for one dialogue.
pub trait LevelScorer {
    fn domain_probs(&self) -> Result<Vec<(String, f64)>>;
    fn entity_probs(&self, domain: &str) -> Result<Vec<(EntityKey, f64)>>;
    fn document_probs(&self, entity: &EntityKey) -> Result<Vec<(KnowledgeKey, f64)>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeResult {
    pub domain: (String, f64),
    pub entity: (EntityKey, f64),
    /// Documents of the chosen entity only.
    pub selection: SelectionResult,
}

fn argmax<K: Ord + Clone>(xs: &[(K, f64)]) -> Option<(K, f64)> {
    xs.iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .cloned()
}

/// Domain, then entity within that domain, then document within that entity.
pub fn cascade_select(scorer: &dyn LevelScorer, kb: &KnowledgeBase) -> Result<CascadeResult> {
    if kb.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    let domain = argmax(&scorer.domain_probs()?).ok_or_else(|| Error::EmptyLevel {
        level: "domain",
        parent: "knowledge base".into(),
    })?;
    let entity = argmax(&scorer.entity_probs(&domain.0)?).ok_or_else(|| Error::EmptyLevel {
        level: "entity",
        parent: format!("domain {}", domain.0),
    })?;
    let docs = scorer.document_probs(&entity.0)?;
    if docs.is_empty() {
        return Err(Error::EmptyLevel {
            level: "document",
            parent: format!("entity {}/{}", entity.0.domain, entity.0.entity_id),
        });
    }
    let ranked = docs
        .into_iter()
        .map(|(k, score)| {
            let snippet = kb
                .get(&k)
                .ok_or_else(|| Error::Integrity(format!("scored document {k} is not in the knowledge base")))?
                .clone();
            Ok(RankedCandidate { snippet, score })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CascadeResult {
        domain,
        entity,
        selection: SelectionResult::from_scores(ranked)?,
    })
}

fn check_scale<K>(xs: &[(K, f64)]) -> Result<()> {
    match xs.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
        Some((_, p)) => Err(Error::ProbabilityScale(*p)),
        None => Ok(()),
    }
}

fn elementwise_max<K: Ord + Clone>(a: Vec<(K, f64)>, b: Vec<(K, f64)>) -> Result<Vec<(K, f64)>> {
    check_scale(&a)?;
    check_scale(&b)?;
    let mut out: BTreeMap<K, f64> = BTreeMap::new();
    for (k, p) in a.into_iter().chain(b) {
        let e = out.entry(k).or_insert(p);
        *e = e.max(p);
    }
    Ok(out.into_iter().collect())
}

struct MaxOf<'a>(&'a dyn LevelScorer, &'a dyn LevelScorer);

impl LevelScorer for MaxOf<'_> {
    fn domain_probs(&self) -> Result<Vec<(String, f64)>> {
        elementwise_max(self.0.domain_probs()?, self.1.domain_probs()?)
    }

    fn entity_probs(&self, domain: &str) -> Result<Vec<(EntityKey, f64)>> {
        elementwise_max(self.0.entity_probs(domain)?, self.1.entity_probs(domain)?)
    }

    fn document_probs(&self, entity: &EntityKey) -> Result<Vec<(KnowledgeKey, f64)>> {
        elementwise_max(self.0.document_probs(entity)?, self.1.document_probs(entity)?)
    }
}

/// At each level the more confident model wins; both models are asked about
/// the next level under the winning choice.
pub fn ensemble_select(a: &dyn LevelScorer, b: &dyn LevelScorer, kb: &KnowledgeBase) -> Result<CascadeResult> {
    cascade_select(&MaxOf(a, b), kb)
}

/// Fixed probabilities, mainly for tests and offline ensembling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StaticLevels {
    pub domains: Vec<(String, f64)>,
    pub entities: BTreeMap<String, Vec<(EntityKey, f64)>>,
    pub documents: BTreeMap<EntityKey, Vec<(KnowledgeKey, f64)>>,
}

impl LevelScorer for StaticLevels {
    fn domain_probs(&self) -> Result<Vec<(String, f64)>> {
        Ok(self.domains.clone())
    }

    fn entity_probs(&self, domain: &str) -> Result<Vec<(EntityKey, f64)>> {
        Ok(self.entities.get(domain).cloned().unwrap_or_default())
    }

    fn document_probs(&self, entity: &EntityKey) -> Result<Vec<(KnowledgeKey, f64)>> {
        Ok(self.documents.get(entity).cloned().unwrap_or_default())
    }
}

/// The three-step model's heads applied to one dialogue.
pub struct ThreeStepScorer<'a> {
    pub model: &'a MiniModel,
    pub dialogue: &'a DialogueLog,
    pub kb: &'a KnowledgeBase,
}

impl LevelScorer for ThreeStepScorer<'_> {
    fn domain_probs(&self) -> Result<Vec<(String, f64)>> {
        self.kb
            .domains()
            .into_iter()
            .map(|d| {
                let p = score_candidate(self.model, Level::Domain, &format_domain_input(self.dialogue, d))?;
                Ok((d.to_string(), p))
            })
            .collect()
    }

    fn entity_probs(&self, domain: &str) -> Result<Vec<(EntityKey, f64)>> {
        self.kb
            .entities_in(domain)
            .map(|e| {
                let input = format_entity_input(self.dialogue, domain, e.display_name());
                Ok((e.key.clone(), score_candidate(self.model, Level::Entity, &input)?))
            })
            .collect()
    }

    fn document_probs(&self, entity: &EntityKey) -> Result<Vec<(KnowledgeKey, f64)>> {
        self.kb
            .entity_snippets(entity)
            .iter()
            .map(|s| {
                let input = format_ranking_input(self.dialogue, s);
                Ok((s.key(), score_candidate(self.model, Level::Document, &input)?))
            })
            .collect()
    }
}

pub fn three_step_select(model: &MiniModel, dialogue: &DialogueLog, kb: &KnowledgeBase) -> Result<SelectionResult> {
    Ok(cascade_select(&ThreeStepScorer { model, dialogue, kb }, kb)?.selection)
}

/// The retrieve & rank model viewed level by level: a domain or entity
/// scores the best of its candidate snippets. Levels outside the retrieved
/// candidates (reachable through an ensemble) fall back to scoring every
/// snippet under the requested parent.
pub struct RankScorer<'a> {
    model: &'a MiniModel,
    dialogue: &'a DialogueLog,
    kb: &'a KnowledgeBase,
    candidates: Vec<KnowledgeKey>,
    cache: RefCell<HashMap<KnowledgeKey, f64>>,
}

impl<'a> RankScorer<'a> {
    pub fn new(model: &'a MiniModel, dialogue: &'a DialogueLog, kb: &'a KnowledgeBase, cfg: &RetrievalConfig) -> Self {
        Self {
            model,
            dialogue,
            kb,
            candidates: rank_candidates(dialogue, kb, cfg).iter().map(|s| s.key()).collect(),
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn score(&self, key: &KnowledgeKey) -> Result<f64> {
        if let Some(&p) = self.cache.borrow().get(key) {
            return Ok(p);
        }
        let snippet = self
            .kb
            .get(key)
            .ok_or_else(|| Error::Integrity(format!("candidate {key} is not in the knowledge base")))?;
        let p = score_candidate(self.model, Level::Rank, &format_ranking_input(self.dialogue, snippet))?;
        self.cache.borrow_mut().insert(key.clone(), p);
        Ok(p)
    }

    /// Plain retrieve & rank output.
    pub fn selection(&self) -> Result<SelectionResult> {
        let ranked = self
            .candidates
            .iter()
            .map(|k| {
                Ok(RankedCandidate {
                    score: self.score(k)?,
                    snippet: self.kb.get(k).expect("candidate from kb").clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SelectionResult::from_scores(ranked)
    }

    fn max_by<K: Ord + Clone>(&self, keys: &[KnowledgeKey], group: impl Fn(&KnowledgeKey) -> K) -> Result<Vec<(K, f64)>> {
        let mut out: BTreeMap<K, f64> = BTreeMap::new();
        for k in keys {
            let p = self.score(k)?;
            let e = out.entry(group(k)).or_insert(p);
            *e = e.max(p);
        }
        Ok(out.into_iter().collect())
    }
}

impl LevelScorer for RankScorer<'_> {
    fn domain_probs(&self) -> Result<Vec<(String, f64)>> {
        self.max_by(&self.candidates, |k| k.domain.clone())
    }

    fn entity_probs(&self, domain: &str) -> Result<Vec<(EntityKey, f64)>> {
        let mut keys: Vec<KnowledgeKey> = self.candidates.iter().filter(|k| k.domain == domain).cloned().collect();
        if keys.is_empty() {
            keys = self
                .kb
                .snippets()
                .iter()
                .filter(|s| s.domain == domain)
                .map(|s| s.key())
                .collect();
        }
        self.max_by(&keys, KnowledgeKey::entity)
    }

    fn document_probs(&self, entity: &EntityKey) -> Result<Vec<(KnowledgeKey, f64)>> {
        let keys: Vec<KnowledgeKey> = self.kb.entity_snippets(entity).iter().map(|s| s.key()).collect();
        self.max_by(&keys, Clone::clone)
    }
}

#[derive(Debug, Clone)]
pub struct LevelExample {
    pub level: Level,
    pub encoded: Encoded,
    pub target: bool,
}

/// Binary cross-entropy on the domain, entity and document heads.
pub struct LevelObjective;

impl Objective for LevelObjective {
    type Example = LevelExample;

    fn heads(&self) -> &[&'static str] {
        &["domain", "entity", "document"]
    }

    fn loss<'m>(&self, model: &'m MiniModel, g: &mut Graph<'m>, ex: &LevelExample) -> Result<Var> {
        let logit = pooled_logit(model, g, &ex.encoded, ex.level)?;
        Ok(bce_with_logit(g, logit, ex.target))
    }
}

/// Per knowledge-seeking dialogue: the gold domain against every other
/// domain, the gold entity against up to `k` others in its domain, and the
/// gold document against up to `k` others of its entity.
pub fn three_step_examples(
    model: &MiniModel,
    dialogues: &[DialogueLog],
    kb: &KnowledgeBase,
    k: usize,
    seed: u64,
) -> Result<Vec<LevelExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |level, input, target| -> Result<()> {
        out.push(LevelExample {
            level,
            encoded: encode_input(model, &input)?,
            target,
        });
        Ok(())
    };
    for d in dialogues {
        let Some(gold) = d.gold_knowledge().filter(|_| d.target() == Some(true)) else {
            continue;
        };
        let gold_snippet = kb
            .get(gold)
            .ok_or_else(|| Error::Integrity(format!("gold {gold} not in knowledge base")))?;
        for dom in kb.domains() {
            push(Level::Domain, format_domain_input(d, dom), dom == gold.domain)?;
        }
        let gold_entity = gold.entity();
        let gold_name = kb.entity(&gold_entity).map(|e| e.display_name().to_string()).unwrap_or_default();
        push(Level::Entity, format_entity_input(d, &gold.domain, &gold_name), true)?;
        let others: Vec<_> = kb.entities_in(&gold.domain).filter(|e| e.key != gold_entity).collect();
        for e in others.choose_multiple(&mut rng, k) {
            push(Level::Entity, format_entity_input(d, &gold.domain, e.display_name()), false)?;
        }
        push(Level::Document, format_ranking_input(d, gold_snippet), true)?;
        let docs: Vec<_> = kb.entity_snippets(&gold_entity).iter().filter(|s| s.key() != *gold).collect();
        for s in docs.choose_multiple(&mut rng, k) {
            push(Level::Document, format_ranking_input(d, s), false)?;
        }
    }
    Ok(out)
}

pub fn train_three_step(
    model: &mut MiniModel,
    dialogues: &[DialogueLog],
    kb: &KnowledgeBase,
    tcfg: &TrainConfig,
    negatives: usize,
) -> Result<TrainReport> {
    let examples = three_step_examples(model, dialogues, kb, negatives, tcfg.seed)?;
    train(model, &examples, &LevelObjective, tcfg)
}
