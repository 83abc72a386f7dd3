use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{encode_input, format_ranking_input, pooled_logit, score_candidate, Level, RankedCandidate, SelectionResult};
use crate::corpus::{DialogueLog, KnowledgeBase, KnowledgeKey, KnowledgeSnippet};
use crate::detection::bce_with_logit;
use crate::neural::{train, Encoded, Graph, MiniModel, Objective, TrainConfig, TrainReport, Var};
use crate::retrieval::{retrieve_snippets, RetrievalConfig};
use crate::{Error, Result};

/// Up to `k` distinct non-gold candidates, drawn uniformly without
/// replacement.
pub fn sample_negatives<'a, R: Rng + ?Sized>(
    gold: &KnowledgeKey,
    candidates: &[&'a KnowledgeSnippet],
    k: usize,
    rng: &mut R,
) -> Vec<&'a KnowledgeSnippet> {
    let mut seen = HashSet::new();
    let pool: Vec<&KnowledgeSnippet> = candidates
        .iter()
        .copied()
        .filter(|s| &s.key() != gold && seen.insert(s.key()))
        .collect();
    pool.choose_multiple(rng, k).copied().collect()
}

/// Candidates for ranking: retrieval output, or the whole knowledge base
/// when retrieval finds nothing.
pub(crate) fn rank_candidates<'kb>(
    dialogue: &DialogueLog,
    kb: &'kb KnowledgeBase,
    cfg: &RetrievalConfig,
) -> Vec<&'kb KnowledgeSnippet> {
    let retrieved = retrieve_snippets(dialogue, kb, cfg);
    if retrieved.is_empty() {
        kb.snippets().iter().collect()
    } else {
        retrieved
    }
}

pub fn retrieve_and_rank(
    model: &MiniModel,
    dialogue: &DialogueLog,
    kb: &KnowledgeBase,
    cfg: &RetrievalConfig,
) -> Result<SelectionResult> {
    if kb.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    model.require_trained(Level::Rank.head_name())?;
    let ranked = rank_candidates(dialogue, kb, cfg)
        .into_iter()
        .map(|s| {
            Ok(RankedCandidate {
                score: score_candidate(model, Level::Rank, &format_ranking_input(dialogue, s))?,
                snippet: s.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SelectionResult::from_scores(ranked)
}

#[derive(Debug, Clone)]
pub struct RankExample {
    pub encoded: Encoded,
    pub target: bool,
}

pub struct RankObjective;

impl Objective for RankObjective {
    type Example = RankExample;

    fn heads(&self) -> &[&'static str] {
        &["rank"]
    }

    fn loss<'m>(&self, model: &'m MiniModel, g: &mut Graph<'m>, ex: &RankExample) -> Result<Var> {
        let logit = pooled_logit(model, g, &ex.encoded, Level::Rank)?;
        Ok(bce_with_logit(g, logit, ex.target))
    }
}

/// Gold snippet plus `k` negatives per knowledge-seeking dialogue. Negatives
/// come from the retrieved candidates first and are topped up from the
/// rest of the knowledge base when retrieval offers fewer than `k`.
pub fn rank_examples(
    model: &MiniModel,
    dialogues: &[DialogueLog],
    kb: &KnowledgeBase,
    cfg: &RetrievalConfig,
    k: usize,
    seed: u64,
) -> Result<Vec<RankExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<&KnowledgeSnippet> = kb.snippets().iter().collect();
    let mut out = Vec::new();
    for d in dialogues {
        let Some(gold_key) = d.gold_knowledge().filter(|_| d.target() == Some(true)) else {
            continue;
        };
        let gold = kb
            .get(gold_key)
            .ok_or_else(|| Error::Integrity(format!("gold {gold_key} not in knowledge base")))?;
        let mut negs = sample_negatives(gold_key, &rank_candidates(d, kb, cfg), k, &mut rng);
        if negs.len() < k {
            let taken: HashSet<KnowledgeKey> = negs.iter().map(|s| s.key()).collect();
            let rest: Vec<&KnowledgeSnippet> = all.iter().copied().filter(|s| !taken.contains(&s.key())).collect();
            negs.extend(sample_negatives(gold_key, &rest, k - negs.len(), &mut rng));
        }
        out.push(RankExample {
            encoded: encode_input(model, &format_ranking_input(d, gold))?,
            target: true,
        });
        for n in negs {
            out.push(RankExample {
                encoded: encode_input(model, &format_ranking_input(d, n))?,
                target: false,
            });
        }
    }
    Ok(out)
}

pub fn train_rank(
    model: &mut MiniModel,
    dialogues: &[DialogueLog],
    kb: &KnowledgeBase,
    rcfg: &RetrievalConfig,
    tcfg: &TrainConfig,
    negatives: usize,
) -> Result<TrainReport> {
    let examples = rank_examples(model, dialogues, kb, rcfg, negatives, tcfg.seed)?;
    train(model, &examples, &RankObjective, tcfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snippets(n: usize) -> Vec<KnowledgeSnippet> {
        (0..n)
            .map(|i| KnowledgeSnippet {
                domain: "hotel".into(),
                entity_id: "1".into(),
                entity_name: Some("Avalon".into()),
                doc_id: i.to_string(),
                question: "q?".into(),
                answer: "a.".into(),
            })
            .collect()
    }

    #[test]
    fn negatives_exclude_gold_and_respect_k() {
        let s = snippets(11);
        let refs: Vec<&KnowledgeSnippet> = s.iter().collect();
        let gold = s[0].key();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = sample_negatives(&gold, &refs, 5, &mut rng);
        assert_eq!(n.len(), 5);
        assert!(n.iter().all(|x| x.key() != gold));
        let keys: HashSet<_> = n.iter().map(|x| x.key()).collect();
        assert_eq!(keys.len(), 5);

        let few = sample_negatives(&gold, &refs[..4], 5, &mut rng);
        assert_eq!(few.len(), 3);

        let mut again = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_negatives(&gold, &refs, 5, &mut again), n);
    }
}
