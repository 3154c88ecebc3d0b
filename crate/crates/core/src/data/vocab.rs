use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const RESERVED: [&str; 3] = ["[PAD]", "[CLS]", "[UNK]"];

/// Word → id map built from a training corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        RESERVED.iter().map(|s| s.to_string()).collect::<Vec<_>>().into()
    }
}

impl Vocabulary {
    /// Keeps words seen at least `min_freq` times, most frequent first
    /// (ties alphabetical), after the reserved tokens.
    pub fn build<'a, I, S>(documents: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in documents {
            for w in doc {
                *counts.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq && !RESERVED.contains(w))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(kept.into_iter().map(|(w, _)| w.to_string()));
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn lookup(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_reserved(id: u32) -> bool {
        (id as usize) < RESERVED.len()
    }

    /// `[CLS]` followed by the ids of `words`.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        std::iter::once(CLS_ID).chain(words.iter().map(|w| self.id(w.as_ref()))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_frequency_and_order() {
        let docs: Vec<Vec<&str>> = vec![vec!["b", "a", "a", "c"], vec!["b", "a", "d"]];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 2);
        assert_eq!(v.token(3), Some("a"));
        assert_eq!(v.token(4), Some("b"));
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("c"), UNK_ID);
        assert_eq!(v.encode(&["a", "zzz"]), vec![CLS_ID, 3, UNK_ID]);
    }

    #[test]
    fn serde_round_trip_keeps_index() {
        let docs = [vec!["x", "x", "y", "y"]];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 2);
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back.id("y"), v.id("y"));
    }
}
