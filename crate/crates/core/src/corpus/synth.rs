//! Seeded synthetic corpus for desk-scale experiments.
//!
//! Each author has a handful of favourite rhyme schemes, rhyme groups,
//! adjectives, nouns and verse templates, so author and scheme conditioning
//! both carry signal. Every rhyme word comes from the bundled phonetic
//! dictionary; groups rhyme internally and never across groups.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{parse_corpus_str, CorpusRecord};
use crate::error::Result;
use crate::rhyme::{PhoneticDict, Rhymer};

/// Pronouncing-dictionary subset covering every synthetic word.
pub const DESK_DICT: &str = include_str!("../../data/desk.dict");

pub fn desk_dict() -> PhoneticDict {
    PhoneticDict::from_str_entries(DESK_DICT).expect("bundled dictionary parses")
}

pub fn desk_rhymer() -> Rhymer {
    Rhymer::new(desk_dict())
}

pub const DESK_SCHEMES: [&str; 6] = ["AABB", "ABAB", "ABBA", "ABCB", "AAAA", "ABBB"];

const AUTHOR_NAMES: &[&str] = &[
    "ashford", "bellamy", "corwin", "delacroix", "ellery", "fenwick", "garland", "hollis",
];

const RHYME_GROUPS: &[&[&str]] = &[
    &["day", "way", "play", "away", "decay", "today", "gray", "stay", "say", "may", "pray", "lay", "sway", "delay"],
    &["chill", "ill", "hill", "still", "will", "fill", "mill", "till", "thrill", "skill"],
    &["snow", "go", "know", "slow", "glow", "flow", "grow", "below", "show", "low"],
    &["sea", "free", "tree", "be", "me", "see", "key", "flee", "plea"],
    &["night", "light", "bright", "sight", "flight", "might", "white", "delight", "tight"],
    &["mine", "shine", "line", "divine", "fine", "pine", "wine", "sign", "design"],
    &["more", "shore", "door", "before", "floor", "core", "roar", "store", "pour"],
    &["red", "dead", "said", "head", "bed", "bread", "fled", "spread", "thread"],
    &["sun", "run", "done", "one", "won", "fun", "begun", "none"],
    &["dream", "stream", "gleam", "seem", "beam", "team", "theme", "scream"],
    &["land", "hand", "sand", "stand", "band", "grand", "planned", "command"],
    &["bell", "tell", "well", "fell", "dwell", "shell", "spell", "swell", "farewell"],
    &["sing", "ring", "spring", "wing", "king", "thing", "bring", "sting", "cling"],
    &["turn", "burn", "learn", "yearn", "return", "fern", "stern"],
    &["ground", "sound", "found", "round", "bound", "crowned", "drowned", "mound"],
    &["side", "wide", "tide", "pride", "hide", "guide", "ride", "bride", "abide"],
    &["rain", "pain", "plain", "vain", "chain", "remain", "lane", "main"],
    &["deep", "sleep", "keep", "weep", "steep", "sheep", "creep", "sweep"],
    &["all", "fall", "call", "wall", "small", "hall", "tall", "ball"],
    &["rest", "west", "best", "breast", "nest", "quest", "chest", "test"],
    &["star", "far", "are", "car", "bar", "scar", "jar", "guitar"],
    &["moon", "soon", "tune", "noon", "june", "spoon", "dune", "swoon"],
    &["fire", "desire", "wire", "tire", "entire", "attire", "higher", "choir"],
    &["heart", "part", "art", "start", "apart", "depart", "chart", "smart"],
    &["eyes", "skies", "rise", "lies", "wise", "cries", "sighs", "prize"],
    &["stone", "alone", "bone", "known", "grown", "own", "tone", "throne", "moan"],
    &["blue", "true", "through", "you", "dew", "flew", "grew"],
    &["fate", "late", "gate", "great", "wait", "state", "weight", "straight"],
    &["thought", "caught", "taught", "brought", "sought", "fought", "naught"],
    &["in", "begin", "within", "sin", "skin", "win", "thin", "kin"],
];

const ADJECTIVES: &[&str] = &[
    "cold", "dark", "silent", "golden", "ancient", "gentle", "quiet", "lonely", "bitter", "sweet",
    "pale", "wild", "tender", "hollow", "distant", "weary", "secret", "broken", "fading", "crimson",
    "silver", "empty", "restless", "solemn", "heavy",
];

const NOUNS: &[&str] = &[
    "heart", "soul", "wind", "river", "mountain", "shadow", "morning", "evening", "garden", "flower",
    "ocean", "forest", "voice", "memory", "winter", "summer", "autumn", "candle", "meadow", "valley",
    "spirit", "lover", "child", "stranger", "echo", "whisper",
];

const VERBS: &[&str] = &[
    "whispers", "wanders", "lingers", "shivers", "gathers", "follows", "carries", "falls", "rises", "sleeps",
    "waits", "listens", "burns", "calls", "remembers",
];

const PAST_VERBS: &[&str] = &[
    "watched", "followed", "carried", "gathered", "wandered", "heard", "found", "loved", "lost", "kept",
];

const PREPOSITIONS: &[&str] = &[
    "upon", "beneath", "beyond", "across", "toward", "within", "above",
];

const PRONOUNS: &[&str] = &[
    "i", "we", "you", "they", "she", "he",
];

#[derive(Clone, Debug)]
pub struct DeskCorpusConfig {
    pub records: usize,
    pub authors: usize,
    pub quatrains_per_record: usize,
    /// Share of quatrains written without any rhyme (ingestion drops them).
    pub unrhymed_rate: f64,
    pub seed: u64,
}

impl Default for DeskCorpusConfig {
    fn default() -> Self {
        DeskCorpusConfig {
            records: 400,
            authors: 6,
            quatrains_per_record: 2,
            unrhymed_rate: 0.05,
            seed: 11,
        }
    }
}

struct Style {
    name: String,
    schemes: Vec<(usize, f64)>,
    groups: Vec<usize>,
    adjectives: Vec<&'static str>,
    nouns: Vec<&'static str>,
    templates: Vec<usize>,
}

const TEMPLATES: usize = 5;

fn subset<R: Rng>(rng: &mut R, items: &[&'static str], n: usize) -> Vec<&'static str> {
    items.choose_multiple(rng, n).copied().collect()
}

impl Style {
    fn new<R: Rng>(k: usize, rng: &mut R) -> Self {
        let name = match AUTHOR_NAMES.get(k) {
            Some(n) => n.to_string(),
            None => format!("author{k}"),
        };
        let mut order: Vec<usize> = (0..DESK_SCHEMES.len()).collect();
        order.shuffle(rng);
        let schemes = order
            .iter()
            .enumerate()
            .map(|(rank, &s)| (s, [0.5, 0.3, 0.05, 0.05, 0.05, 0.05][rank]))
            .collect();
        let mut groups: Vec<usize> = (0..RHYME_GROUPS.len()).collect();
        groups.shuffle(rng);
        groups.truncate(12);
        let mut templates: Vec<usize> = (0..TEMPLATES).collect();
        templates.shuffle(rng);
        templates.truncate(3);
        Style {
            name,
            schemes,
            groups,
            adjectives: subset(rng, ADJECTIVES, 8),
            nouns: subset(rng, NOUNS, 10),
            templates,
        }
    }

    fn scheme<R: Rng>(&self, rng: &mut R) -> &'static str {
        let s = self
            .schemes
            .choose_weighted(rng, |x| x.1)
            .expect("positive weights");
        DESK_SCHEMES[s.0]
    }

    fn verse<R: Rng>(&self, end: &str, rng: &mut R) -> String {
        let adj = *self.adjectives.choose(rng).unwrap();
        let noun = *self.nouns.choose(rng).unwrap();
        let verb = *VERBS.choose(rng).unwrap();
        let past = *PAST_VERBS.choose(rng).unwrap();
        let prep = *PREPOSITIONS.choose(rng).unwrap();
        let pron = *PRONOUNS.choose(rng).unwrap();
        match *self.templates.choose(rng).unwrap() {
            0 => format!("the {adj} {noun} {verb} {prep} the {end}"),
            1 => format!("{pron} {past} the {adj} {end}"),
            2 => format!("and every {noun} of {adj} {end}"),
            3 => format!("where the {noun} {verb} {end}"),
            _ => format!("{prep} the {adj} {noun} {pron} {past} {end}"),
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// One quatrain's verses for `scheme`; letters map to distinct groups and
/// same-letter verses use distinct words. `keep_a` pins letter A's group.
fn quatrain<R: Rng>(style: &Style, scheme: &str, keep_a: Option<usize>, rng: &mut R) -> (Vec<String>, usize) {
    let letters: Vec<usize> = scheme.bytes().map(|b| (b - b'A') as usize).collect();
    let n_letters = letters.iter().max().unwrap() + 1;
    let mut groups: Vec<usize> = style.groups.choose_multiple(rng, n_letters).copied().collect();
    if let Some(a) = keep_a {
        match groups.iter().position(|&g| g == a) {
            Some(pos) => groups.swap(0, pos),
            None => groups[0] = a,
        }
    }
    let mut pools: Vec<Vec<&str>> = groups
        .iter()
        .map(|&g| {
            let mut p = RHYME_GROUPS[g].to_vec();
            p.shuffle(rng);
            p
        })
        .collect();
    let verses = letters
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let end = pools[l].pop().expect("groups have enough words");
            let mut v = capitalize(&style.verse(end, rng));
            v.push_str(if i == 3 {
                "."
            } else if rng.random_bool(0.5) {
                ","
            } else {
                ""
            });
            v
        })
        .collect();
    (verses, groups[0])
}

/// Corpus text plus the scheme each quatrain was written in (`ABCD` for the
/// unrhymed ones).
pub fn desk_corpus_text_with_schemes(cfg: &DeskCorpusConfig) -> (String, Vec<String>) {
    let mut rng = crate::rng_from_seed(cfg.seed);
    let styles: Vec<Style> = (0..cfg.authors.max(1)).map(|k| Style::new(k, &mut rng)).collect();
    let mut text = String::new();
    let mut schemes = Vec::new();
    for r in 0..cfg.records {
        let style = &styles[rng.random_range(0..styles.len())];
        if r > 0 {
            text.push('\n');
        }
        text.push_str(&format!("#author: {}\n", style.name));
        let mut prev_a = None;
        for _ in 0..cfg.quatrains_per_record {
            let scheme = if rng.random_bool(cfg.unrhymed_rate) {
                "ABCD"
            } else {
                style.scheme(&mut rng)
            };
            let keep = prev_a.filter(|_| rng.random_bool(0.5));
            let (verses, a) = quatrain(style, scheme, keep, &mut rng);
            prev_a = Some(a);
            for v in verses {
                text.push_str(&v);
                text.push('\n');
            }
            schemes.push(scheme.to_string());
        }
    }
    (text, schemes)
}

pub fn desk_corpus_text(cfg: &DeskCorpusConfig) -> String {
    desk_corpus_text_with_schemes(cfg).0
}

pub fn desk_corpus(cfg: &DeskCorpusConfig) -> Result<Vec<CorpusRecord>> {
    parse_corpus_str(&desk_corpus_text(cfg), "<desk>")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest, IngestConfig};
    use crate::rhyme::end_word;

    #[test]
    fn groups_rhyme_internally_only() {
        let r = desk_rhymer();
        for (i, g) in RHYME_GROUPS.iter().enumerate() {
            for a in g.iter() {
                assert!(r.dict().contains(a), "{a}");
                for b in g.iter() {
                    assert!(r.rhymes(a, b), "{a} {b}");
                }
                for h in RHYME_GROUPS.iter().skip(i + 1) {
                    for b in h.iter() {
                        assert!(!r.rhymes(a, b), "{a} {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn quatrains_carry_their_scheme() {
        let cfg = DeskCorpusConfig {
            records: 60,
            ..Default::default()
        };
        let (text, schemes) = desk_corpus_text_with_schemes(&cfg);
        let recs = parse_corpus_str(&text, "t").unwrap();
        let r = desk_rhymer();
        let mut k = 0;
        for rec in &recs {
            for q in rec.verses.chunks(4) {
                let ends: Vec<&str> = q.iter().map(|v| end_word(v).unwrap()).collect();
                assert_eq!(r.label_scheme(&ends).unwrap().as_str(), schemes[k]);
                k += 1;
            }
        }
        assert_eq!(k, schemes.len());
    }

    #[test]
    fn deterministic_and_ingestible() {
        let cfg = DeskCorpusConfig::default();
        assert_eq!(desk_corpus_text(&cfg), desk_corpus_text(&cfg));
        let recs = desk_corpus(&cfg).unwrap();
        let ing = ingest(&recs, &desk_rhymer(), &IngestConfig::default()).unwrap();
        assert!(ing.stats.kept >= 200);
        assert!(ing.vocab.len() <= 2000);
        assert!(ing.stats.discarded_unrhymed > 0);
    }
}
