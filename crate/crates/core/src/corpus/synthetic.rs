use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    DialogueLabel, DialogueLog, KnowledgeBase, KnowledgeSnippet, Turn, DOMAIN_WIDE_ENTITY,
};
use crate::error::{Error, Result};

/// Shape of a generated corpus. Equal specs produce byte-identical output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Named entities per named domain (hotel, restaurant).
    pub entities_per_domain: usize,
    /// Documents per entity, including the domain-wide taxi and train entities.
    pub docs_per_entity: usize,
    pub n_dialogues: usize,
    /// Preferred stems for entity names; generated stems fill the remainder.
    pub seed_words: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            entities_per_domain: 4,
            docs_per_entity: 4,
            n_dialogues: 64,
            seed_words: ["avalon", "gonville", "allenbell", "bridgemoor", "carlisle", "dunstan"]
                .map(String::from)
                .to_vec(),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.entities_per_domain == 0 || self.docs_per_entity == 0 || self.n_dialogues == 0 {
            return Err(Error::InvalidConfig("synthetic corpus counts must be >= 1".into()));
        }
        Ok(())
    }
}

// (question, answer with `{f}` standing for the fact token)
const HOTEL_DOCS: &[(&str, &str)] = &[
    ("Is parking available?", "Guests can park in lot {f} free of charge."),
    ("Is there wifi?", "Free wifi is available and the password is {f}."),
    ("Are pets allowed?", "Pets are only allowed in room block {f}."),
    ("When is breakfast served?", "Breakfast is served in hall {f} every morning."),
    ("How does check-in work?", "Check-in is at desk {f} after noon."),
    ("Is there a gym?", "The gym is on floor {f} and open all day."),
    ("Can I store my luggage?", "Luggage can be stored in locker {f}."),
    ("Do they offer laundry service?", "Laundry is handled with ticket {f} at reception."),
];

const RESTAURANT_DOCS: &[(&str, &str)] = &[
    ("Do they take reservations?", "Reservations are made with booking code {f}."),
    ("Are there vegan options?", "Vegan dishes are marked {f} on the menu."),
    ("Is there outdoor seating?", "Outdoor seating is on terrace {f}."),
    ("Do they offer takeaway?", "Takeaway orders are collected at counter {f}."),
    ("Is it wheelchair accessible?", "The step-free entrance is gate {f}."),
    ("Can I pay by card?", "Card payments go through terminal {f}."),
    ("Is there a dress code?", "The dress code is listed as style {f}."),
    ("Do they have a kids menu?", "The kids menu is printed as card {f}."),
];

const TAXI_DOCS: &[(&str, &str)] = &[
    ("How can I pay for the taxi?", "Taxi fares can be paid with account {f}."),
    ("Will I get a booking confirmation?", "Confirmations are sent by text with reference {f}."),
    ("Can the taxi take luggage?", "Large luggage needs the van option {f}."),
    ("Are child seats available?", "Child seats can be requested with code {f}."),
    ("How do I cancel a taxi?", "Cancellations use the number {f} before pickup."),
    ("Can I bring a pet in the taxi?", "Pets ride in taxis with carrier tag {f}."),
];

const TRAIN_DOCS: &[(&str, &str)] = &[
    ("What hours is the station open?", "The station opens at gate {f} from early morning."),
    ("Can I bring a bike on the train?", "Bikes go in carriage {f} only."),
    ("How do refunds work?", "Refunds are claimed with form {f} online."),
    ("Is there wifi on the train?", "Onboard wifi uses the network {f}."),
    ("Where can I leave luggage at the station?", "Left luggage is at office {f}."),
    ("Is there food on the train?", "The food trolley stops at coach {f}."),
];

const HOTEL_SUFFIXES: &[&str] = &["Hotel", "Guesthouse", "Lodge"];
const RESTAURANT_SUFFIXES: &[&str] = &["Restaurant", "Bistro"];
const SYLLABLES: &[&str] = &[
    "bra", "ken", "lo", "mi", "ton", "vel", "dar", "sen", "cor", "lin", "mar", "quo", "ruf", "sta",
    "wen", "zel", "pho", "gri", "nal", "ber",
];
const AREAS: &[&str] = &["north", "south", "east", "west", "centre"];
const DAYS: &[&str] = &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
const GREETINGS: &[&str] = &[
    "Anything else I can do for you?",
    "Is there anything else I can help you with?",
    "Can I help you with anything else?",
];

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

struct NameSource<'a> {
    seeds: std::slice::Iter<'a, String>,
    used: HashSet<String>,
}

impl NameSource<'_> {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> String {
        for seed in self.seeds.by_ref() {
            let w = seed.trim().to_lowercase();
            if w.chars().count() >= 5 && self.used.insert(w.clone()) {
                return title_case(&w);
            }
        }
        loop {
            let w: String = (0..3).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
            if self.used.insert(w.clone()) {
                return title_case(&w);
            }
        }
    }
}

fn fact_token(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let letters: String = (0..2).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        let tok = format!("{letters}{}", rng.gen_range(10..100));
        if used.insert(tok.clone()) {
            return tok;
        }
    }
}

fn build_knowledge(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<KnowledgeBase> {
    let mut names = NameSource {
        seeds: spec.seed_words.iter(),
        used: HashSet::new(),
    };
    let mut facts = HashSet::new();
    let mut snippets = Vec::new();

    let mut add_docs = |domain: &str,
                        entity_id: String,
                        name: Option<String>,
                        docs: &[(&str, &str)],
                        rng: &mut ChaCha8Rng| {
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(rng);
        for doc in 0..spec.docs_per_entity {
            let (q, a) = docs[order[doc % docs.len()]];
            let round = doc / docs.len();
            let question = if round == 0 {
                q.to_string()
            } else {
                format!("{} (part {})", q.trim_end_matches('?'), round + 1) + "?"
            };
            snippets.push(KnowledgeSnippet {
                domain: domain.to_string(),
                entity_id: entity_id.clone(),
                entity_name: name.clone(),
                doc_id: doc.to_string(),
                question,
                answer: a.replace("{f}", &fact_token(rng, &mut facts)),
            });
        }
    };

    for (domain, suffixes, docs) in [
        ("hotel", HOTEL_SUFFIXES, HOTEL_DOCS),
        ("restaurant", RESTAURANT_SUFFIXES, RESTAURANT_DOCS),
    ] {
        for e in 0..spec.entities_per_domain {
            let stem = names.next(rng);
            let name = if domain == "restaurant" && e % 3 == 2 {
                format!("{stem} & {}", names.next(rng))
            } else {
                format!("{stem} {}", suffixes[e % suffixes.len()])
            };
            add_docs(domain, e.to_string(), Some(name), docs, rng);
        }
    }
    add_docs("taxi", DOMAIN_WIDE_ENTITY.into(), None, TAXI_DOCS, rng);
    add_docs("train", DOMAIN_WIDE_ENTITY.into(), None, TRAIN_DOCS, rng);

    KnowledgeBase::new(snippets)
}

fn opener(snippet: &KnowledgeSnippet, rng: &mut ChaCha8Rng) -> Vec<Turn> {
    let area = AREAS.choose(rng).unwrap();
    match snippet.entity_name.as_deref() {
        Some(name) => vec![
            Turn::user(format!("I am looking for a {} in the {area}.", snippet.domain)),
            Turn::system(format!("{name} is a nice option in the {area}.")),
        ],
        None if snippet.domain == "taxi" => vec![
            Turn::user(format!("I need a taxi to the {area} side of town.")),
            Turn::system("Your taxi is booked, a grey car will collect you."),
        ],
        None => vec![
            Turn::user(format!("I need a train leaving on {}.", DAYS.choose(rng).unwrap())),
            Turn::system("There is a train at the usual time, shall I book it?"),
        ],
    }
}

fn distractor(name: &str) -> Vec<Turn> {
    vec![
        Turn::user(format!("What about {name}?")),
        Turn::system(format!("Sorry, {name} is fully booked.")),
    ]
}

fn closing_request(snippet: &KnowledgeSnippet, rng: &mut ChaCha8Rng) -> Turn {
    let people = rng.gen_range(1..9);
    let day = DAYS.choose(rng).unwrap();
    match rng.gen_range(0..3) {
        0 => Turn::user(format!("Please book it for {people} people on {day}.")),
        1 => Turn::user(format!("Great, I will take the {} then.", snippet.domain)),
        _ => Turn::user("Thank you, that is all I need."),
    }
}

fn final_question(snippet: &KnowledgeSnippet, rng: &mut ChaCha8Rng) -> Turn {
    let q = snippet.question.trim_end_matches('?');
    let text = match (snippet.entity_name.as_deref(), rng.gen_bool(0.5)) {
        (Some(name), true) => format!("{q} at {name}?"),
        _ => format!("{q}?"),
    };
    Turn::user(text)
}

fn response(snippet: &KnowledgeSnippet, rng: &mut ChaCha8Rng) -> String {
    format!("{} {}", snippet.answer, GREETINGS.choose(rng).unwrap())
}

/// Builds a knowledge base plus roughly half knowledge-seeking dialogues.
/// Every knowledge-seeking dialogue mentions its gold entity (or the
/// domain word, for taxi/train) and answers with the gold fact token.
pub fn generate_synthetic_corpus(
    spec: &SyntheticSpec,
) -> Result<(KnowledgeBase, Vec<DialogueLog>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let kb = build_knowledge(spec, &mut rng)?;

    let mut dialogues = Vec::with_capacity(spec.n_dialogues);
    for _ in 0..spec.n_dialogues {
        let snippet = kb.snippets().choose(&mut rng).unwrap();
        let mut turns = Vec::new();

        if snippet.entity_name.is_some() && rng.gen_bool(0.25) {
            let other = kb
                .entities_in(&snippet.domain)
                .filter(|e| e.key != snippet.entity())
                .collect::<Vec<_>>()
                .choose(&mut rng)
                .map(|e| e.display_name().to_string());
            if let Some(other) = other {
                turns.extend(distractor(&other));
            }
        }
        turns.extend(opener(snippet, &mut rng));
        if rng.gen_bool(0.4) {
            turns.push(Turn::user("That sounds good."));
            turns.push(Turn::system("Would you like me to book it?"));
        }

        let label = if rng.gen_bool(0.5) {
            turns.push(final_question(snippet, &mut rng));
            DialogueLabel::positive(snippet.key(), response(snippet, &mut rng))
        } else {
            turns.push(closing_request(snippet, &mut rng));
            DialogueLabel::negative()
        };
        dialogues.push(DialogueLog::new(turns, Some(label))?);
    }
    Ok((kb, dialogues))
}
