//! Entity-level candidate retrieval: alias generation, exact matching over
//! the whole dialogue, fuzzy matching over the most recent utterances, and
//! expansion of matched entities to their snippets.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueLog, EntityKey, KnowledgeBase, KnowledgeSnippet, Turn};
use crate::error::{Error, Result};
use crate::textsim::{levenshtein_ratio, tokenize, TokenSeq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Fuzzy threshold.
    pub tau: f64,
    /// Number of trailing utterances scanned by the fuzzy matcher.
    pub fuzzy_window: usize,
    /// Maximum number of fuzzy-only entities returned.
    pub fuzzy_top_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            fuzzy_window: 5,
            fuzzy_top_k: 2,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if self.fuzzy_window == 0 {
            return Err(Error::InvalidConfig("fuzzy_window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchKind {
    Exact,
    Fuzzy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMatch {
    pub entity: EntityKey,
    pub matched_alias: String,
    pub kind: MatchKind,
    /// 1.0 for exact matches.
    pub fuzzy_score: f64,
}

/// Words dropped from the end of a name to form a short alias.
const DOMAIN_SUFFIXES: [&str; 2] = ["hotel", "restaurant"];

/// Keywords that make domain-wide knowledge relevant.
pub fn domain_keywords(domain: &str) -> &'static [&'static str] {
    match domain {
        "taxi" => &["taxi", "taxis", "cab"],
        "train" => &["train", "trains"],
        _ => &[],
    }
}

/// Lowercased, deduplicated aliases for an entity name: the name itself,
/// `&`/`and` substitutions, and each of those with a trailing domain word
/// removed.
pub fn generate_aliases(entity_name: &str) -> Vec<String> {
    let base = tokenize(entity_name).tokens;
    if base.is_empty() {
        return Vec::new();
    }

    let swap = |from: &str, to: &str| -> Vec<String> {
        base.iter()
            .map(|t| if t == from { to.to_string() } else { t.clone() })
            .collect()
    };
    let mut variants = vec![base.clone(), swap("&", "and"), swap("and", "&")];

    let stripped: Vec<Vec<String>> = variants
        .iter()
        .filter(|v| v.len() > 1 && DOMAIN_SUFFIXES.contains(&v[v.len() - 1].as_str()))
        .map(|v| v[..v.len() - 1].to_vec())
        .collect();
    variants.extend(stripped);

    let mut seen = HashSet::new();
    variants
        .into_iter()
        .map(|v| v.join(" "))
        .filter(|a| seen.insert(a.clone()))
        .collect()
}

fn contains_subsequence(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && haystack.len() >= needle.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

/// True iff the alias tokens occur contiguously in the utterance tokens.
pub fn exact_match(alias: &str, utterance: &str) -> bool {
    contains_subsequence(&tokenize(utterance).tokens, &tokenize(alias).tokens)
}

fn fuzzy_tokens(alias: &TokenSeq, utterance: &TokenSeq, tau: f64) -> f64 {
    if alias.is_empty() {
        return 0.0;
    }
    let counted = alias
        .iter()
        .filter(|a| utterance.iter().any(|u| levenshtein_ratio(a, u) >= tau))
        .count();
    counted as f64 / alias.len() as f64
}

/// Fraction of alias tokens whose best Levenshtein ratio against any
/// utterance token reaches `tau`.
pub fn fuzzy_match_score(alias: &str, utterance: &str, tau: f64) -> f64 {
    fuzzy_tokens(&tokenize(alias), &tokenize(utterance), tau)
}

/// Exact matches anywhere in the dialogue, plus the best `fuzzy_top_k`
/// fuzzy-only entities from the trailing window whose score exceeds `tau`.
///
/// Exact matches come first, most recently mentioned first; fuzzy matches
/// follow by descending score. Ties fall back to entity key order.
pub fn retrieve_entities(
    dialogue: &DialogueLog,
    kb: &KnowledgeBase,
    cfg: &RetrievalConfig,
) -> Vec<EntityMatch> {
    let all: Vec<TokenSeq> = dialogue.turns.iter().map(|t| tokenize(&t.text)).collect();
    let window_start = all.len().saturating_sub(cfg.fuzzy_window);
    let window = &all[window_start..];

    let mut exact: Vec<(usize, EntityMatch)> = Vec::new();
    let mut fuzzy: Vec<EntityMatch> = Vec::new();

    for entity in kb.entities() {
        let Some(name) = &entity.name else { continue };
        let aliases: Vec<(String, TokenSeq)> = generate_aliases(name)
            .into_iter()
            .map(|a| {
                let t = tokenize(&a);
                (a, t)
            })
            .collect();

        let last_exact = aliases
            .iter()
            .flat_map(|(a, t)| {
                all.iter()
                    .enumerate()
                    .filter(|(_, u)| contains_subsequence(&u.tokens, &t.tokens))
                    .map(move |(i, _)| (i, a))
            })
            .max_by(|x, y| x.0.cmp(&y.0));
        if let Some((turn, alias)) = last_exact {
            exact.push((
                turn,
                EntityMatch {
                    entity: entity.key.clone(),
                    matched_alias: alias.clone(),
                    kind: MatchKind::Exact,
                    fuzzy_score: 1.0,
                },
            ));
            continue;
        }

        let mut best: Option<(f64, &String)> = None;
        for (alias, toks) in &aliases {
            for utt in window {
                let score = fuzzy_tokens(toks, utt, cfg.tau);
                if best.map_or(true, |(b, _)| score > b) {
                    best = Some((score, alias));
                }
            }
        }
        if let Some((score, alias)) = best {
            if score > cfg.tau {
                fuzzy.push(EntityMatch {
                    entity: entity.key.clone(),
                    matched_alias: alias.clone(),
                    kind: MatchKind::Fuzzy,
                    fuzzy_score: score,
                });
            }
        }
    }

    exact.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.entity.cmp(&b.1.entity)));
    fuzzy.sort_by(|a, b| {
        b.fuzzy_score
            .total_cmp(&a.fuzzy_score)
            .then_with(|| a.entity.cmp(&b.entity))
    });
    fuzzy.truncate(cfg.fuzzy_top_k);

    exact.into_iter().map(|(_, m)| m).chain(fuzzy).collect()
}

/// Domains with domain-wide knowledge whose keyword occurs in `turns`.
pub fn mentioned_domain_wide(kb: &KnowledgeBase, turns: &[Turn]) -> Vec<EntityKey> {
    let tokens: HashSet<String> = turns
        .iter()
        .flat_map(|t| tokenize(&t.text).tokens)
        .collect();
    kb.entities()
        .iter()
        .filter(|e| e.is_domain_wide())
        .filter(|e| domain_keywords(&e.key.domain).iter().any(|k| tokens.contains(*k)))
        .map(|e| e.key.clone())
        .collect()
}

/// All snippets of the matched entities, followed by domain-wide snippets
/// whose domain keyword appears in the trailing window. Entities appear
/// whole or not at all.
pub fn expand_to_snippets<'kb>(
    matches: &[EntityMatch],
    kb: &'kb KnowledgeBase,
    dialogue: &DialogueLog,
    cfg: &RetrievalConfig,
) -> Vec<&'kb KnowledgeSnippet> {
    let mut order: BTreeMap<EntityKey, usize> = BTreeMap::new();
    let keys = matches
        .iter()
        .map(|m| m.entity.clone())
        .chain(mentioned_domain_wide(kb, dialogue.window(cfg.fuzzy_window)));
    for key in keys {
        let next = order.len();
        order.entry(key).or_insert(next);
    }
    let mut ranked: Vec<(usize, EntityKey)> = order.into_iter().map(|(k, i)| (i, k)).collect();
    ranked.sort();
    ranked
        .iter()
        .flat_map(|(_, key)| kb.entity_snippets(key))
        .collect()
}

/// `retrieve_entities` followed by `expand_to_snippets`.
pub fn retrieve_snippets<'kb>(
    dialogue: &DialogueLog,
    kb: &'kb KnowledgeBase,
    cfg: &RetrievalConfig,
) -> Vec<&'kb KnowledgeSnippet> {
    let matches = retrieve_entities(dialogue, kb, cfg);
    expand_to_snippets(&matches, kb, dialogue, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DialogueLog, KnowledgeSnippet, Turn};
    use proptest::prelude::*;

    fn snippet(domain: &str, ent: &str, name: Option<&str>, doc: &str) -> KnowledgeSnippet {
        KnowledgeSnippet {
            domain: domain.into(),
            entity_id: ent.into(),
            entity_name: name.map(String::from),
            doc_id: doc.into(),
            question: "q?".into(),
            answer: "a.".into(),
        }
    }

    fn kb() -> KnowledgeBase {
        let mut s = Vec::new();
        for d in 0..4 {
            s.push(snippet("hotel", "1", Some("Allenbell"), &d.to_string()));
        }
        s.push(snippet("hotel", "2", Some("Gonville Hotel"), "0"));
        s.push(snippet("restaurant", "3", Some("A & B"), "0"));
        s.push(snippet("hotel", "4", Some("Avalon Hotel"), "0"));
        s.push(snippet("taxi", "*", None, "0"));
        s.push(snippet("taxi", "*", None, "1"));
        KnowledgeBase::new(s).unwrap()
    }

    fn dialogue(texts: &[&str]) -> DialogueLog {
        let turns = texts
            .iter()
            .enumerate()
            .map(|(i, t)| if i % 2 == 0 { Turn::user(*t) } else { Turn::system(*t) })
            .collect();
        DialogueLog::new(turns, None).unwrap()
    }

    #[test]
    fn aliases() {
        assert!(generate_aliases("A & B").contains(&"a and b".to_string()));
        let avalon = generate_aliases("Avalon Hotel");
        assert!(avalon.contains(&"avalon".to_string()));
        assert!(avalon.contains(&"avalon hotel".to_string()));
        assert_eq!(generate_aliases("Plainname"), vec!["plainname"]);
        assert_eq!(generate_aliases("Hotel"), vec!["hotel"]);
    }

    #[test]
    fn exact_matching() {
        assert!(exact_match("allenbell", "I stayed at the Allenbell before"));
        assert!(!exact_match("avalon hotel", "the avalon is nice"));
        assert!(exact_match("a and b", "visit a and b cafe"));
        assert!(!exact_match("inn", "dinner at eight"));
    }

    #[test]
    fn fuzzy_scores() {
        assert_eq!(fuzzy_match_score("gonville hotel", "is the gonville hotel open", 0.8), 1.0);
        assert_eq!(fuzzy_match_score("gonville hotel", "I liked gonvile", 0.8), 0.5);
        assert_eq!(fuzzy_match_score("xyz inn", "something unrelated", 0.8), 0.0);
        assert_eq!(fuzzy_match_score("", "anything", 0.8), 0.0);
    }

    #[test]
    fn exact_match_over_whole_dialogue() {
        let d = dialogue(&["I stayed at the Allenbell", "ok", "a", "b", "c", "d", "e", "is parking free?"]);
        let m = retrieve_entities(&d, &kb(), &RetrievalConfig::default());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].entity.entity_id, "1");
        assert_eq!(m[0].kind, MatchKind::Exact);
    }

    #[test]
    fn fuzzy_outside_window_ignored() {
        let d = dialogue(&["the gonvile place", "x", "y", "z", "w", "v", "u"]);
        assert!(retrieve_entities(&d, &kb(), &RetrievalConfig::default()).is_empty());
        let d = dialogue(&["x", "the gonvile hotle place"]);
        let m = retrieve_entities(&d, &kb(), &RetrievalConfig::default());
        assert_eq!(m[0].kind, MatchKind::Fuzzy);
        assert_eq!(m[0].entity.entity_id, "2");
    }

    #[test]
    fn fuzzy_top_two_cap() {
        let mut s = Vec::new();
        for (id, name) in [("1", "Brakenlo"), ("2", "Cormistal"), ("3", "Delwenzar")] {
            s.push(snippet("hotel", id, Some(name), "0"));
        }
        let kb = KnowledgeBase::new(s).unwrap();
        let d = dialogue(&["brakenlx cormistax delwenzax"]);
        let m = retrieve_entities(&d, &kb, &RetrievalConfig::default());
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|x| x.kind == MatchKind::Fuzzy));
        let exact = dialogue(&["brakenlo cormistal delwenzar"]);
        assert_eq!(retrieve_entities(&exact, &kb, &RetrievalConfig::default()).len(), 3);
    }

    #[test]
    fn expansion() {
        let kb = kb();
        let cfg = RetrievalConfig::default();
        let d = dialogue(&["tell me about allenbell"]);
        let m = retrieve_entities(&d, &kb, &cfg);
        assert_eq!(expand_to_snippets(&m, &kb, &d, &cfg).len(), 4);

        let d = dialogue(&["I need a taxi please"]);
        let out = expand_to_snippets(&[], &kb, &d, &cfg);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|s| s.domain == "taxi"));

        let d = dialogue(&["nothing relevant"]);
        assert!(expand_to_snippets(&[], &kb, &d, &cfg).is_empty());
    }

    proptest! {
        #[test]
        fn raising_tau_never_adds_fuzzy(typo in "[a-z]{1}", pos in 0usize..7, lo in 0.55f64..0.9, delta in 0.0f64..0.1) {
            let mut word: Vec<char> = "gonville".chars().collect();
            word[pos] = typo.chars().next().unwrap();
            let text: String = word.into_iter().collect();
            let d = dialogue(&[&format!("the {text} hotle is near a & b")]);
            let kb = kb();
            let low = RetrievalConfig { tau: lo, ..Default::default() };
            let high = RetrievalConfig { tau: (lo + delta).min(1.0), ..Default::default() };
            let fuzzy = |cfg: &RetrievalConfig| -> Vec<EntityKey> {
                retrieve_entities(&d, &kb, cfg).into_iter().filter(|m| m.kind == MatchKind::Fuzzy).map(|m| m.entity).collect()
            };
            let (a, b) = (fuzzy(&low), fuzzy(&high));
            prop_assert!(b.iter().all(|k| a.contains(k)));
            let first = retrieve_snippets(&d, &kb, &low);
            prop_assert_eq!(first, retrieve_snippets(&d, &kb, &low));
        }
    }
}
