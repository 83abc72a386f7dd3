use std::collections::BTreeMap;
use std::time::Instant;

use kgdial::corpus::{generate_synthetic_corpus, DialogueLog, SyntheticSpec, Turn};
use kgdial::retrieval::{retrieve_entities, MatchKind, RetrievalConfig};
use kgdial::selection::augment_with_sources;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const FILLER: &[&str] = &[
    "I need somewhere to stay next week.",
    "Sure, what area would you like?",
    "Somewhere central would be good.",
    "There are several places available.",
    "Thanks, that helps a lot.",
    "Do you have any other questions?",
];

/// One edit (substitution, insertion, deletion) at a random position.
fn typo(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let at = rng.gen_range(0..chars.len());
    let letter = |rng: &mut ChaCha8Rng, not: char| loop {
        let c = rng.gen_range(b'a'..=b'z') as char;
        if c != not {
            break c;
        }
    };
    match rng.gen_range(0..3) {
        0 => chars[at] = letter(rng, chars[at].to_ascii_lowercase()),
        1 => chars.insert(at, letter(rng, ' ')),
        _ => {
            chars.remove(at);
        }
    }
    chars.into_iter().collect()
}

/// Dialogue of `len` turns with `mention` planted in one of the last five.
fn planted(mention: &str, len: usize, rng: &mut ChaCha8Rng) -> DialogueLog {
    let slot = len - 1 - rng.gen_range(0..5.min(len));
    let turns = (0..len)
        .map(|i| {
            let text = if i == slot {
                format!("Can you tell me more about {mention} please?")
            } else {
                FILLER.choose(rng).unwrap().to_string()
            };
            if i % 2 == 0 {
                Turn::user(text)
            } else {
                Turn::system(text)
            }
        })
        .collect();
    DialogueLog::new(turns, None).unwrap()
}

pub fn retrieval_fidelity() -> Outcome {
    let spec = SyntheticSpec {
        entities_per_domain: 10,
        ..SyntheticSpec::default()
    };
    let (kb, _) = generate_synthetic_corpus(&spec).unwrap();
    let named: Vec<_> = kb.entities().iter().filter(|e| e.name.is_some()).collect();
    let cfg = RetrievalConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);

    let start = Instant::now();
    let (mut exact_hits, mut fuzzy_hits, mut cap_violations) = (0, 0, 0);
    let n = 200;
    for _ in 0..n {
        let e = named.choose(&mut rng).unwrap();
        let name = e.name.as_deref().unwrap();
        let len = rng.gen_range(2..=9);

        let d = planted(name, len, &mut rng);
        let found = retrieve_entities(&d, &kb, &cfg);
        exact_hits += usize::from(found.iter().any(|m| m.entity == e.key && m.kind == MatchKind::Exact));

        let mut words: Vec<String> = name.split_whitespace().map(String::from).collect();
        words[0] = typo(&words[0], &mut rng);
        let d = planted(&words.join(" "), len, &mut rng);
        let found = retrieve_entities(&d, &kb, &cfg);
        fuzzy_hits += usize::from(found.iter().any(|m| m.entity == e.key));
        let fuzzy = found.iter().filter(|m| m.kind == MatchKind::Fuzzy).count();
        cap_violations += usize::from(fuzzy > cfg.fuzzy_top_k);
    }
    let secs = start.elapsed().as_secs_f64();
    let fuzzy_rate = fuzzy_hits as f64 / n as f64;
    Outcome::new(
        exact_hits == n && fuzzy_rate >= 0.95 && cap_violations == 0 && secs < 5.0,
        format!(
            "exact {exact_hits}/{n}, typo recovered {fuzzy_hits}/{n}, top-2 cap violations {cap_violations}, {secs:.2}s over {} entities",
            named.len()
        ),
    )
}

pub fn augmentation_stats() -> Outcome {
    let (kb, _) = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
    let entities = kb.entities().len();
    let per_entity = 1000 / entities;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let out = augment_with_sources(&kb, per_entity, 0.8, &mut rng).unwrap();

    let shifted = out.iter().filter(|a| a.entities.len() == 2).count();
    let frac = shifted as f64 / out.len() as f64;
    let mut per: BTreeMap<_, usize> = BTreeMap::new();
    let mut label_mismatch = 0;
    for a in &out {
        let target = a.entities.last().unwrap();
        *per.entry(target.clone()).or_default() += 1;
        let gold = a.dialogue.gold_knowledge().unwrap().entity();
        label_mismatch += usize::from(&gold != target);
        if a.entities.len() == 2 && a.entities[0] == a.entities[1] {
            label_mismatch += 1;
        }
    }
    let exact = per.len() == entities && per.values().all(|&c| c == per_entity);

    let small = augment_with_sources(&kb, 100, 0.8, &mut rng).unwrap();
    let mut small_per: BTreeMap<_, usize> = BTreeMap::new();
    for a in &small {
        *small_per.entry(a.entities.last().unwrap().clone()).or_default() += 1;
    }
    let exact_100 = small_per.len() == entities && small_per.values().all(|&c| c == 100);

    Outcome::new(
        (0.75..=0.85).contains(&frac) && exact && exact_100 && label_mismatch == 0,
        format!(
            "{} dialogues over {entities} entities, two-entity fraction {frac:.3}, per-entity counts exact: {exact_100}, label mismatches {label_mismatch}",
            out.len()
        ),
    )
}
