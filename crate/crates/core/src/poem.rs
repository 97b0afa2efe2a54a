//! Token ids, reserved markers and the flat quatrain layout shared by every
//! model and environment.
//!
//! A quatrain is stored as one token sequence with a verse marker after each
//! of the first three verses and a quatrain marker after the last:
//! `w w <eov> w w <eov> w w <eov> w w <eoq>`. Word positions (the detector's
//! action space) index only the non-marker tokens.

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOV: TokenId = 3;
pub const EOQ: TokenId = 4;
pub const NUM_RESERVED: usize = 5;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<pad>", "<unk>", "<bos>", "<eov>", "<eoq>"];

pub const VERSES_PER_QUATRAIN: usize = 4;

/// Corpus truncation length, markers included.
pub const MAX_QUATRAIN_TOKENS: usize = 50;

pub fn is_marker(t: TokenId) -> bool {
    t == EOV || t == EOQ
}

pub fn is_special(t: TokenId) -> bool {
    t < NUM_RESERVED
}

/// Author and rhyme-scheme conditioning ids. Id 0 is the unknown row of
/// both tables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Conditioning {
    pub author: usize,
    pub scheme: usize,
}

impl Conditioning {
    pub fn new(author: usize, scheme: usize) -> Self {
        Conditioning { author, scheme }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Quatrain {
    tokens: Vec<TokenId>,
}

impl Quatrain {
    /// Builds the flat layout from verses of word tokens.
    pub fn from_verses(verses: &[Vec<TokenId>]) -> Result<Self> {
        if verses.len() != VERSES_PER_QUATRAIN || verses.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!(
                "quatrain needs {VERSES_PER_QUATRAIN} non-empty verses, got {:?}",
                verses.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        let mut tokens = Vec::new();
        for (i, v) in verses.iter().enumerate() {
            if v.iter().any(|&t| is_special(t) && t != UNK) {
                return Err(Error::InvalidArgument("reserved token inside a verse".into()));
            }
            tokens.extend_from_slice(v);
            tokens.push(if i + 1 == VERSES_PER_QUATRAIN { EOQ } else { EOV });
        }
        Ok(Quatrain { tokens })
    }

    /// Accepts a flat sequence if it is well formed.
    pub fn from_tokens(tokens: Vec<TokenId>) -> Result<Self> {
        let q = Quatrain { tokens };
        if !q.is_well_formed() {
            return Err(Error::InvalidArgument("malformed quatrain token sequence".into()));
        }
        Ok(q)
    }

    /// Exactly three verse markers then one quatrain marker, each closing a
    /// non-empty verse, and no other reserved tokens except UNK.
    pub fn is_well_formed_tokens(tokens: &[TokenId]) -> bool {
        let mut verses = 0;
        let mut len = 0;
        for (i, &t) in tokens.iter().enumerate() {
            match t {
                EOV | EOQ => {
                    if len == 0 {
                        return false;
                    }
                    verses += 1;
                    len = 0;
                    let last = i + 1 == tokens.len();
                    if (t == EOQ) != (verses == VERSES_PER_QUATRAIN) || (t == EOQ && !last) {
                        return false;
                    }
                }
                PAD | BOS => return false,
                _ => len += 1,
            }
        }
        verses == VERSES_PER_QUATRAIN && tokens.last() == Some(&EOQ)
    }

    pub fn is_well_formed(&self) -> bool {
        Self::is_well_formed_tokens(&self.tokens)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn verses(&self) -> Vec<&[TokenId]> {
        self.tokens
            .split(|&t| is_marker(t))
            .filter(|v| !v.is_empty())
            .collect()
    }

    /// Flat indices of the word (non-marker) tokens.
    pub fn word_positions(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| !is_marker(t))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_words(&self) -> usize {
        self.tokens.iter().filter(|&&t| !is_marker(t)).count()
    }

    /// Word at word-position `j` (0-based).
    pub fn word(&self, j: usize) -> Option<TokenId> {
        self.tokens.iter().copied().filter(|&t| !is_marker(t)).nth(j)
    }

    pub fn words(&self) -> Vec<TokenId> {
        self.tokens.iter().copied().filter(|&t| !is_marker(t)).collect()
    }

    /// Replaces the word at word-position `j`; returns the previous token.
    pub fn replace_word(&mut self, j: usize, token: TokenId) -> Result<TokenId> {
        if is_special(token) {
            return Err(Error::InvalidArgument("cannot insert a reserved token".into()));
        }
        let flat = self
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| !is_marker(t))
            .nth(j)
            .map(|(i, _)| i)
            .ok_or(Error::Index {
                op: "replace_word",
                index: j,
                limit: self.num_words(),
            })?;
        Ok(std::mem::replace(&mut self.tokens[flat], token))
    }
}

/// Shortens the longest verses from their ends until the flat layout fits
/// in `max_tokens` (markers included). Every verse keeps at least one word.
pub fn truncate_verses<T>(verses: &mut [Vec<T>], max_tokens: usize) {
    let budget = max_tokens.saturating_sub(verses.len()).max(verses.len());
    while verses.iter().map(Vec::len).sum::<usize>() > budget {
        let longest = verses
            .iter_mut()
            .max_by_key(|v| v.len())
            .expect("non-empty verse list");
        if longest.len() <= 1 {
            break;
        }
        longest.pop();
    }
}
