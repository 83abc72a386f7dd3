use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::textsim::tokenize;

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const SEP: usize = 2;
pub const SP1: usize = 3;
pub const SP2: usize = 4;
pub const PAD: usize = 5;
pub const UNK: usize = 6;

/// Special tokens in id order. The tokenizer splits `<` and `>` into their
/// own tokens, so none of these can be produced from text.
pub const SPECIALS: [&str; 7] = ["<bos>", "<eos>", "<sep>", "<sp1>", "<sp2>", "<pad>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Specials followed by `words` (duplicates and specials are skipped).
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for w in words {
            let w = w.into();
            if !index.contains_key(&w) {
                index.insert(w.clone(), tokens.len());
                tokens.push(w);
            }
        }
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let words: Vec<String> = tokens.into_iter().filter(|t| !SPECIALS.contains(&t.as_str())).collect();
        Self::from_words(words)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Tokens occurring at least `min_freq` times, in lexicographic order after
/// the specials.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], min_freq: usize) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for tok in tokenize(text.as_ref()).tokens {
            *counts.entry(tok).or_default() += 1;
        }
    }
    Vocab::from_words(
        counts
            .into_iter()
            .filter(|&(_, c)| c >= min_freq.max(1))
            .map(|(t, _)| t),
    )
}
