use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Dense token ids. Ids 0..4 are always `<pad>`, `<unk>`, `<s>`, `</s>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const BOS_ID: usize = 2;
    pub const EOS_ID: usize = 3;

    /// Only the special tokens.
    pub fn new() -> Self {
        let mut v = Self {
            ids: HashMap::new(),
            tokens: Vec::new(),
        };
        for t in [PAD, UNK, BOS, EOS] {
            v.push(t);
        }
        v
    }

    fn push(&mut self, t: &str) -> usize {
        if let Some(&id) = self.ids.get(t) {
            return id;
        }
        let id = self.tokens.len();
        self.ids.insert(t.to_string(), id);
        self.tokens.push(t.to_string());
        id
    }

    /// Counts tokens and keeps the `cap` most frequent (all when `None`).
    /// Ties in count are broken lexicographically, and ids are assigned in
    /// that same order, so the result does not depend on input order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, cap: Option<usize>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| ![PAD, UNK, BOS, EOS].contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if let Some(cap) = cap {
            ranked.truncate(cap);
        }
        let mut v = Self::new();
        for (t, _) in ranked {
            v.push(t);
        }
        v
    }

    /// Vocabulary with exactly the given tokens after the specials, in order.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::new();
        for t in tokens {
            v.push(t);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// The id of `token`, or `<unk>`.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocabulary(format!("id {id} outside vocabulary of {}", self.len())))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<&str>> {
        ids.iter().map(|&i| self.token(i)).collect()
    }
}
