use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::retrieval::{CTX_TOKEN, EQ_TOKEN};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const CTX_ID: usize = 4;
pub const EQ_ID: usize = 5;

pub const RESERVED: [&str; 6] = [PAD, BOS, EOS, UNK, CTX_TOKEN, EQ_TOKEN];

/// Shared source/target vocabulary. Reserved tokens occupy ids `0..6`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, ids }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Reserved tokens followed by every distinct token of `tokens` in first-seen order.
    pub fn build<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::from(RESERVED.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        self.tokens.push(token.to_owned());
        self.ids.insert(token.to_owned(), self.tokens.len() - 1);
        self.tokens.len() - 1
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

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Maps tokens to ids, sending unknowns to `<unk>`. Returns the ids and
    /// the number of unknowns.
    pub fn encode(&self, tokens: &[String]) -> (Vec<usize>, usize) {
        let mut unknown = 0;
        let ids = tokens
            .iter()
            .map(|t| {
                self.id(t).unwrap_or_else(|| {
                    unknown += 1;
                    UNK_ID
                })
            })
            .collect();
        (ids, unknown)
    }

    pub fn is_special(id: usize) -> bool {
        id < RESERVED.len()
    }

    /// Non-special tokens for `ids`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !Self::is_special(i))
            .map(|&i| self.tokens[i].clone())
            .collect()
    }

    pub fn has_reserved_prefix(&self) -> bool {
        self.tokens.len() >= RESERVED.len() && RESERVED.iter().zip(&self.tokens).all(|(a, b)| a == b)
    }
}
