//! Dictionary-backed rhyme detection and rhyme-scheme labels.
//!
//! The phonetic dictionary uses the public pronouncing-dictionary layout:
//!
//! ```text
//! ;;; comment
//! DECAY  D IH0 K EY1
//! READ  R EH1 D
//! READ(2)  R IY1 D
//! ```
//!
//! Vowel phonemes carry a stress digit (0 none, 1 primary, 2 secondary). Two
//! words rhyme when some pair of their pronunciations shares the phoneme
//! suffix starting at the last primary-stressed vowel. Words missing from the
//! dictionary fall back to a spelling heuristic.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

pub type Pronunciation = Vec<String>;

#[derive(Clone, Debug, Default)]
pub struct PhoneticDict {
    entries: HashMap<String, Vec<Pronunciation>>,
    words: Vec<String>,
}

impl PhoneticDict {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::from_reader(BufReader::new(file), &path.display().to_string())
    }

    pub fn from_reader<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let mut dict = PhoneticDict::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with(";;;") {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            // Some distributions append `# comment` to an entry.
            let phones: Pronunciation = parts
                .take_while(|p| !p.starts_with('#'))
                .map(str::to_string)
                .collect();
            if phones.is_empty() {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: n + 1,
                    msg: format!("entry `{head}` has no phonemes"),
                });
            }
            let word = strip_variant(head).to_lowercase();
            dict.insert(word, phones);
        }
        Ok(dict)
    }

    pub fn from_str_entries(text: &str) -> Result<Self> {
        Self::from_reader(text.as_bytes(), "<memory>")
    }

    pub fn insert(&mut self, word: String, phones: Pronunciation) {
        match self.entries.get_mut(&word) {
            Some(prons) => prons.push(phones),
            None => {
                self.words.push(word.clone());
                self.entries.insert(word, vec![phones]);
            }
        }
    }

    /// Pronunciations in file order; lookup ignores case.
    pub fn get(&self, word: &str) -> Option<&[Pronunciation]> {
        match self.entries.get(word) {
            Some(p) => Some(p),
            None => self.entries.get(&word.to_lowercase()).map(Vec::as_slice),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.get(word).is_some()
    }

    /// Distinct words in first-appearance order.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// `WORD(2)` → `WORD`.
fn strip_variant(head: &str) -> &str {
    match head.rfind('(') {
        Some(i) if head.ends_with(')') && head[i + 1..head.len() - 1].chars().all(|c| c.is_ascii_digit()) => {
            &head[..i]
        }
        _ => head,
    }
}

fn stress(phone: &str) -> Option<u8> {
    phone
        .chars()
        .last()
        .filter(char::is_ascii_digit)
        .map(|c| c as u8 - b'0')
}

/// Suffix of one pronunciation from its last primary-stressed vowel,
/// falling back to the last stressed vowel, then to the last vowel.
pub fn pronunciation_rhyme_part(phones: &[String]) -> Vec<String> {
    let find = |pred: &dyn Fn(u8) -> bool| {
        phones
            .iter()
            .rposition(|p| stress(p).is_some_and(pred))
    };
    let start = find(&|s| s == 1)
        .or_else(|| find(&|s| s > 0))
        .or_else(|| find(&|_| true))
        .unwrap_or(0);
    phones[start..].to_vec()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RhymeOptions {
    /// Identical words count as rhyming.
    pub allow_identical: bool,
    /// Verses with different scheme letters must not rhyme.
    pub strict: bool,
}

impl Default for RhymeOptions {
    fn default() -> Self {
        RhymeOptions {
            allow_identical: true,
            strict: false,
        }
    }
}

/// Rhyme predicate over a phonetic dictionary.
#[derive(Clone, Debug)]
pub struct Rhymer {
    dict: PhoneticDict,
    pub options: RhymeOptions,
}

const VOWEL_LETTERS: &[char] = &['a', 'e', 'i', 'o', 'u', 'y'];

/// Two uncovered words rhyme when their common suffix has at least three
/// characters including a vowel letter, or at least four characters.
pub fn suffix_heuristic(w1: &str, w2: &str) -> bool {
    let common: Vec<char> = w1
        .chars()
        .rev()
        .zip(w2.chars().rev())
        .take_while(|(a, b)| a == b)
        .map(|(a, _)| a)
        .collect();
    let n = common.len();
    (n >= 3 && common.iter().any(|c| VOWEL_LETTERS.contains(c))) || n >= 4
}

impl Rhymer {
    pub fn new(dict: PhoneticDict) -> Self {
        Rhymer {
            dict,
            options: RhymeOptions::default(),
        }
    }

    pub fn with_options(dict: PhoneticDict, options: RhymeOptions) -> Self {
        Rhymer { dict, options }
    }

    pub fn dict(&self) -> &PhoneticDict {
        &self.dict
    }

    /// Rhyme part of each pronunciation, or `None` for uncovered words.
    pub fn rhyme_part(&self, word: &str) -> Option<Vec<Vec<String>>> {
        self.dict
            .get(word)
            .map(|prons| prons.iter().map(|p| pronunciation_rhyme_part(p)).collect())
    }

    pub fn rhymes(&self, w1: &str, w2: &str) -> bool {
        if w1.eq_ignore_ascii_case(w2) {
            return self.options.allow_identical;
        }
        match (self.rhyme_part(w1), self.rhyme_part(w2)) {
            (Some(a), Some(b)) => a.iter().any(|p| b.contains(p)),
            (None, None) => suffix_heuristic(&w1.to_lowercase(), &w2.to_lowercase()),
            _ => false,
        }
    }

    /// Earliest-match grouping: word `i` takes the letter of the first
    /// earlier word it rhymes with, else the next unused letter.
    pub fn label_scheme<S: AsRef<str>>(&self, end_words: &[S]) -> Result<SchemeLabel> {
        if end_words.len() < 2 {
            return Err(Error::InvalidArgument(
                "label_scheme needs at least two end words".into(),
            ));
        }
        if end_words.len() > 26 {
            return Err(Error::InvalidArgument("more than 26 verses".into()));
        }
        let mut letters: Vec<u8> = Vec::with_capacity(end_words.len());
        let mut next = b'A';
        for (i, w) in end_words.iter().enumerate() {
            let earlier = (0..i).find(|&j| self.rhymes(end_words[j].as_ref(), w.as_ref()));
            match earlier {
                Some(j) => letters.push(letters[j]),
                None => {
                    letters.push(next);
                    next += 1;
                }
            }
        }
        Ok(SchemeLabel(String::from_utf8(letters).expect("ascii")))
    }

    /// Every pair of verses sharing a letter must rhyme; in strict mode,
    /// pairs with different letters must not.
    pub fn matches_scheme<S: AsRef<str>>(&self, end_words: &[S], target: &SchemeLabel) -> Result<bool> {
        let letters = target.as_bytes();
        if letters.len() != end_words.len() {
            return Err(Error::InvalidArgument(format!(
                "scheme {} has {} verses, poem has {}",
                target,
                letters.len(),
                end_words.len()
            )));
        }
        for i in 0..letters.len() {
            for j in i + 1..letters.len() {
                let r = self.rhymes(end_words[i].as_ref(), end_words[j].as_ref());
                if letters[i] == letters[j] && !r {
                    return Ok(false);
                }
                if self.options.strict && letters[i] != letters[j] && r {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Last token of a verse containing a letter.
pub fn end_word<S: AsRef<str>>(verse: &[S]) -> Result<&str> {
    verse
        .iter()
        .rev()
        .map(AsRef::as_ref)
        .find(|t| t.chars().any(char::is_alphabetic))
        .ok_or_else(|| Error::InvalidArgument("verse has no alphabetic token".into()))
}

/// Canonical rhyme-scheme string such as `AABB`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SchemeLabel(String);

impl SchemeLabel {
    /// Accepts only canonical labels: starts at `A`, and each new letter is
    /// the successor of the largest one used so far.
    pub fn parse(s: &str) -> Result<Self> {
        let mut max = b'A' - 1;
        if s.is_empty() {
            return Err(Error::InvalidArgument("empty scheme label".into()));
        }
        for &c in s.as_bytes() {
            if !c.is_ascii_uppercase() || c > max + 1 {
                return Err(Error::InvalidArgument(format!("non-canonical scheme `{s}`")));
            }
            max = max.max(c);
        }
        Ok(SchemeLabel(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when no two verses share a letter.
    pub fn is_unrhymed(&self) -> bool {
        let b = self.as_bytes();
        (0..b.len()).all(|i| (i + 1..b.len()).all(|j| b[i] != b[j]))
    }
}

impl fmt::Display for SchemeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
