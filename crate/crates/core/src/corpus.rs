//! Corpus ingestion: parsing, tokenization, quatrain splitting, scheme
//! assignment, vocabulary, author buckets and dataset splits.
//!
//! Corpus files are UTF-8 text. Records are separated by one or more blank
//! lines. A record may start with header lines `#author: NAME` and
//! `#scheme: LETTERS`; every other line is a verse.

pub mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::config::ConfigValue;
use crate::error::{Error, Result};
use crate::poem::{
    truncate_verses, Conditioning, Quatrain, TokenId, EOQ, EOV, MAX_QUATRAIN_TOKENS, NUM_RESERVED,
    RESERVED_TOKENS, UNK, VERSES_PER_QUATRAIN,
};
use crate::rhyme::{end_word, Rhymer, SchemeLabel};

/// Lowercases, splits on whitespace and detaches leading and trailing
/// punctuation characters as separate tokens. Apostrophes and hyphens inside
/// a word stay attached.
pub fn tokenize(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in line.split_whitespace() {
        let chunk = chunk.to_lowercase();
        let chars: Vec<char> = chunk.chars().collect();
        let start = chars.iter().position(|c| c.is_alphanumeric());
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|c| c.is_alphanumeric()).unwrap() + 1;
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusRecord {
    pub author: Option<String>,
    /// Scheme given by a `#scheme:` header; letters A-Z, any length.
    pub scheme: Option<String>,
    pub verses: Vec<Vec<String>>,
}

pub fn parse_corpus_str(text: &str, source: &str) -> Result<Vec<CorpusRecord>> {
    let mut records = Vec::new();
    let mut cur: Option<CorpusRecord> = None;
    let bad = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            if let Some(r) = cur.take() {
                if !r.verses.is_empty() {
                    records.push(r);
                }
            }
            continue;
        }
        let rec = cur.get_or_insert_with(|| CorpusRecord {
            author: None,
            scheme: None,
            verses: Vec::new(),
        });
        if let Some(header) = line.strip_prefix('#') {
            if !rec.verses.is_empty() {
                return Err(bad(n + 1, "header after verse lines".into()));
            }
            let (key, value) = header
                .split_once(':')
                .ok_or_else(|| bad(n + 1, format!("malformed header `{line}`")))?;
            let value = value.trim();
            if value.is_empty() {
                return Err(bad(n + 1, format!("empty header value `{line}`")));
            }
            match key.trim() {
                "author" => rec.author = Some(value.to_string()),
                "scheme" => {
                    if !value.bytes().all(|b| b.is_ascii_uppercase()) {
                        return Err(bad(n + 1, format!("scheme must be letters A-Z, got `{value}`")));
                    }
                    rec.scheme = Some(value.to_string());
                }
                other => return Err(bad(n + 1, format!("unknown header `{other}`"))),
            }
            continue;
        }
        let tokens = tokenize(line);
        rec.verses.push(tokens);
    }
    if let Some(r) = cur {
        if !r.verses.is_empty() {
            records.push(r);
        }
    }
    Ok(records)
}

pub fn parse_corpus<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let text = fs::read_to_string(p).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
        })?;
        out.extend(parse_corpus_str(&text, &p.display().to_string())?);
    }
    Ok(out)
}

/// Writes records back in corpus format; verses are space-joined tokens.
pub fn serialize_corpus(records: &[CorpusRecord]) -> String {
    let mut s = String::new();
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        if let Some(a) = &r.author {
            s.push_str(&format!("#author: {a}\n"));
        }
        if let Some(sc) = &r.scheme {
            s.push_str(&format!("#scheme: {sc}\n"));
        }
        for v in &r.verses {
            s.push_str(&v.join(" "));
            s.push('\n');
        }
    }
    s
}

/// Consecutive groups of four verses; a trailing remainder is dropped.
pub fn split_quatrains<T: Clone>(verses: &[T]) -> Vec<Vec<T>> {
    verses
        .chunks_exact(VERSES_PER_QUATRAIN)
        .map(<[T]>::to_vec)
        .collect()
}

/// Canonical relabeling of an arbitrary letter string (`CDCD` → `ABAB`).
pub fn canonicalize(letters: &str) -> String {
    let mut map = HashMap::new();
    letters
        .chars()
        .map(|c| {
            let next = (b'A' + map.len() as u8) as char;
            *map.entry(c).or_insert(next)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DiscardReason {
    Unrhymed,
    NoEndWord(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SchemeAssignment {
    Kept(SchemeLabel),
    Discarded(DiscardReason),
}

/// Labels a quatrain from its end words unless `given` supplies a label.
pub fn assign_scheme(
    rhymer: &Rhymer,
    verses: &[Vec<String>],
    given: Option<&str>,
    discard_unrhymed: bool,
) -> Result<SchemeAssignment> {
    let label = match given {
        Some(g) => SchemeLabel::parse(&canonicalize(g))?,
        None => {
            let mut ends = Vec::with_capacity(verses.len());
            for (i, v) in verses.iter().enumerate() {
                match end_word(v) {
                    Ok(w) => ends.push(w),
                    Err(_) => return Ok(SchemeAssignment::Discarded(DiscardReason::NoEndWord(i))),
                }
            }
            rhymer.label_scheme(&ends)?
        }
    };
    if discard_unrhymed && label.is_unrhymed() {
        return Ok(SchemeAssignment::Discarded(DiscardReason::Unrhymed));
    }
    Ok(SchemeAssignment::Kept(label))
}

/// Token table with reserved ids 0-4 and unigram counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    freq: Vec<u64>,
}

impl Vocab {
    fn with_reserved() -> Self {
        let tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Vocab {
            tokens,
            index,
            freq: vec![0; NUM_RESERVED],
        }
    }

    /// Keeps the `cap` most frequent tokens, ties broken lexicographically.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(tokens: I, cap: usize) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED_TOKENS.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(cap);
        let mut v = Vocab::with_reserved();
        for (t, c) in ranked {
            v.push(t.to_string(), c);
        }
        v
    }

    fn push(&mut self, token: String, count: u64) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.freq.push(count);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == NUM_RESERVED
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id).map_or(RESERVED_TOKENS[UNK], String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Corpus counts by id; reserved ids have count 0.
    pub fn freq(&self) -> &[u64] {
        &self.freq
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<TokenId> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// One `token<TAB>count` line per id, reserved tokens first.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for (t, c) in self.tokens.iter().zip(&self.freq) {
            writeln!(f, "{t}\t{c}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut v = Vocab::with_reserved();
        for (n, line) in text.lines().enumerate() {
            let bad = |msg: &str| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                msg: msg.to_string(),
            };
            let (t, c) = line.split_once('\t').ok_or_else(|| bad("expected token<TAB>count"))?;
            let c: u64 = c.parse().map_err(|_| bad("bad count"))?;
            if n < NUM_RESERVED {
                if t != RESERVED_TOKENS[n] {
                    return Err(bad("reserved tokens out of order"));
                }
                continue;
            }
            if v.index.contains_key(t) {
                return Err(bad("duplicate token"));
            }
            v.push(t.to_string(), c);
        }
        Ok(v)
    }
}

/// Ranked name table where id 0 is the unknown bucket.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdTable {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNKNOWN_NAME: &str = "<unknown>";

impl IdTable {
    /// Top `top_n` names by count (ties lexicographic) get ids 1..=top_n.
    pub fn ranked<'a, I: IntoIterator<Item = &'a str>>(names: I, top_n: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for n in names {
            *counts.entry(n).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(top_n);
        Self::from_names(ranked.into_iter().map(|(n, _)| n.to_string()))
    }

    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> Self {
        let mut t = IdTable {
            names: vec![UNKNOWN_NAME.to_string()],
            index: HashMap::new(),
        };
        for n in names {
            t.index.insert(n.clone(), t.names.len());
            t.names.push(n);
        }
        t
    }

    pub fn id(&self, name: Option<&str>) -> usize {
        name.and_then(|n| self.index.get(n).copied()).unwrap_or(0)
    }

    pub fn name(&self, id: usize) -> &str {
        self.names.get(id).map_or(UNKNOWN_NAME, String::as_str)
    }

    /// Table size including the unknown row.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.len() == 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for (i, n) in self.names.iter().enumerate().skip(1) {
            writeln!(f, "{i}\t{n}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut names = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (id, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                msg: "expected id<TAB>name".into(),
            })?;
            if id.parse::<usize>().ok() != Some(n + 1) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: n + 1,
                    msg: format!("expected id {}", n + 1),
                });
            }
            names.push(name.to_string());
        }
        Ok(Self::from_names(names))
    }
}

/// Authors by record count; records without an author map to id 0.
pub fn bucket_authors(records: &[CorpusRecord], top_n: usize) -> IdTable {
    IdTable::ranked(records.iter().filter_map(|r| r.author.as_deref()), top_n)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSpec {
    Ratios([f64; 3]),
    Counts([usize; 3]),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Ratios([0.903, 0.047, 0.050])
    }
}

/// `ratios:a,b,c` or `counts:a,b,c`.
impl ConfigValue for SplitSpec {
    fn parse_value(s: &str) -> Option<Self> {
        let (kind, rest) = s.split_once(':')?;
        let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return None;
        }
        match kind {
            "ratios" => {
                let v: Vec<f64> = parts.iter().map(|p| p.parse().ok()).collect::<Option<_>>()?;
                Some(SplitSpec::Ratios([v[0], v[1], v[2]]))
            }
            "counts" => {
                let v: Vec<usize> = parts.iter().map(|p| p.parse().ok()).collect::<Option<_>>()?;
                Some(SplitSpec::Counts([v[0], v[1], v[2]]))
            }
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            SplitSpec::Ratios([a, b, c]) => format!("ratios:{a},{b},{c}"),
            SplitSpec::Counts([a, b, c]) => format!("counts:{a},{b},{c}"),
        }
    }
}

/// Seeded shuffle, then train/val/test by rounded ratios (test takes the
/// rest) or exact counts.
pub fn split_dataset<T: Clone>(items: &[T], spec: SplitSpec, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = items.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 records to split, got {n}")));
    }
    let (a, b) = match spec {
        SplitSpec::Ratios(r) => {
            if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("split ratios {r:?} must sum to 1")));
            }
            let a = ((r[0] * n as f64).round() as usize).min(n);
            let b = ((r[1] * n as f64).round() as usize).min(n - a);
            (a, b)
        }
        SplitSpec::Counts(c) => {
            if c.iter().sum::<usize>() != n {
                return Err(Error::InvalidArgument(format!("split counts {c:?} must sum to {n}")));
            }
            (c[0], c[1])
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng_from_seed(seed));
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..a]), pick(&order[a..a + b]), pick(&order[a + b..])))
}

/// A quatrain after ingestion: word tokens per verse plus its scheme.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledQuatrain {
    pub verses: Vec<Vec<String>>,
    pub scheme: SchemeLabel,
}

/// Consecutive kept quatrains of one record; each one's predecessor in the
/// run is its generation context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuatrainRun {
    pub author: Option<String>,
    pub quatrains: Vec<LabeledQuatrain>,
}

#[derive(Clone, Debug)]
pub struct IngestConfig {
    pub vocab_cap: usize,
    pub author_top_n: usize,
    pub scheme_top_n: usize,
    pub split: SplitSpec,
    pub seed: u64,
    pub discard_unrhymed: bool,
    pub max_tokens: usize,
}

crate::kv_config!(IngestConfig {
    vocab_cap,
    author_top_n,
    scheme_top_n,
    split,
    seed,
    discard_unrhymed,
    max_tokens
});

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            vocab_cap: 50_000,
            author_top_n: 768,
            scheme_top_n: 50,
            split: SplitSpec::default(),
            seed: 0,
            discard_unrhymed: true,
            max_tokens: MAX_QUATRAIN_TOKENS,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub records: usize,
    pub verses: usize,
    pub remainder_verses: usize,
    pub quatrains: usize,
    pub kept: usize,
    pub discarded_unrhymed: usize,
    pub discarded_no_end_word: usize,
    pub truncated: usize,
    pub scheme_histogram: BTreeMap<String, usize>,
    pub vocab_size: usize,
    pub authors: usize,
    pub split_sizes: [usize; 3],
}

impl fmt::Display for IngestStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records\t{}", self.records)?;
        writeln!(f, "verses\t{}", self.verses)?;
        writeln!(f, "remainder_verses_discarded\t{}", self.remainder_verses)?;
        writeln!(f, "quatrains\t{}", self.quatrains)?;
        writeln!(f, "kept\t{}", self.kept)?;
        writeln!(f, "discarded_unrhymed\t{}", self.discarded_unrhymed)?;
        writeln!(f, "discarded_no_end_word\t{}", self.discarded_no_end_word)?;
        writeln!(f, "truncated\t{}", self.truncated)?;
        writeln!(f, "vocab_size\t{}", self.vocab_size)?;
        writeln!(f, "authors\t{}", self.authors)?;
        let [a, b, c] = self.split_sizes;
        writeln!(f, "split_quatrains\t{a}\t{b}\t{c}")?;
        for (s, n) in &self.scheme_histogram {
            writeln!(f, "scheme\t{s}\t{n}")?;
        }
        Ok(())
    }
}

/// Output of the ingestion pipeline before encoding.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub train: Vec<QuatrainRun>,
    pub val: Vec<QuatrainRun>,
    pub test: Vec<QuatrainRun>,
    pub vocab: Vocab,
    pub authors: IdTable,
    pub schemes: IdTable,
    pub stats: IngestStats,
}

/// Splits records into quatrains, labels and filters them, truncates to
/// the token limit, splits by record and builds the lookup tables.
pub fn ingest(records: &[CorpusRecord], rhymer: &Rhymer, cfg: &IngestConfig) -> Result<Ingested> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("corpus has no records".into()));
    }
    let mut stats = IngestStats {
        records: records.len(),
        ..Default::default()
    };
    let mut per_record: Vec<Vec<QuatrainRun>> = Vec::with_capacity(records.len());
    for rec in records {
        stats.verses += rec.verses.len();
        stats.remainder_verses += rec.verses.len() % VERSES_PER_QUATRAIN;
        let mut runs = Vec::new();
        let mut run: Vec<LabeledQuatrain> = Vec::new();
        for (qi, mut q) in split_quatrains(&rec.verses).into_iter().enumerate() {
            stats.quatrains += 1;
            let given = rec.scheme.as_deref().and_then(|s| {
                let lo = qi * VERSES_PER_QUATRAIN;
                (s.len() % VERSES_PER_QUATRAIN == 0 && s.len() >= lo + VERSES_PER_QUATRAIN)
                    .then(|| &s[lo..lo + VERSES_PER_QUATRAIN])
            });
            match assign_scheme(rhymer, &q, given, cfg.discard_unrhymed)? {
                SchemeAssignment::Kept(scheme) => {
                    let before: usize = q.iter().map(Vec::len).sum();
                    truncate_verses(&mut q, cfg.max_tokens);
                    if q.iter().map(Vec::len).sum::<usize>() < before {
                        stats.truncated += 1;
                    }
                    stats.kept += 1;
                    *stats.scheme_histogram.entry(scheme.to_string()).or_default() += 1;
                    run.push(LabeledQuatrain { verses: q, scheme });
                }
                SchemeAssignment::Discarded(reason) => {
                    match reason {
                        DiscardReason::Unrhymed => stats.discarded_unrhymed += 1,
                        DiscardReason::NoEndWord(_) => stats.discarded_no_end_word += 1,
                    }
                    if !run.is_empty() {
                        runs.push(std::mem::take(&mut run));
                    }
                }
            }
        }
        if !run.is_empty() {
            runs.push(run);
        }
        per_record.push(
            runs.into_iter()
                .map(|quatrains| QuatrainRun {
                    author: rec.author.clone(),
                    quatrains,
                })
                .collect(),
        );
    }
    let (train, val, test) = split_dataset(&per_record, cfg.split, cfg.seed)?;
    let flatten = |v: Vec<Vec<QuatrainRun>>| v.into_iter().flatten().collect::<Vec<_>>();
    let (train, val, test) = (flatten(train), flatten(val), flatten(test));

    let all_tokens = per_record
        .iter()
        .flatten()
        .flat_map(|r| &r.quatrains)
        .flat_map(|q| q.verses.iter().flatten())
        .map(String::as_str);
    let vocab = Vocab::build(all_tokens, cfg.vocab_cap);
    let authors = bucket_authors(records, cfg.author_top_n);
    let schemes = IdTable::ranked(
        train
            .iter()
            .flat_map(|r| &r.quatrains)
            .map(|q| q.scheme.as_str()),
        cfg.scheme_top_n,
    );
    let count = |runs: &[QuatrainRun]| runs.iter().map(|r| r.quatrains.len()).sum::<usize>();
    stats.vocab_size = vocab.len();
    stats.authors = authors.len() - 1;
    stats.split_sizes = [count(&train), count(&val), count(&test)];
    Ok(Ingested {
        train,
        val,
        test,
        vocab,
        authors,
        schemes,
        stats,
    })
}

/// One encoded quatrain. `context` is the index of the preceding quatrain
/// of the same run, if any.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub cond: Conditioning,
    pub scheme: SchemeLabel,
    pub quatrain: Quatrain,
    pub context: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Generation context tokens for example `i`: the flat tokens of the
    /// previous quatrain, or empty.
    pub fn context_tokens(&self, i: usize) -> &[TokenId] {
        match self.examples[i].context {
            Some(c) => self.examples[c].quatrain.tokens(),
            None => &[],
        }
    }

    pub fn from_runs(runs: &[QuatrainRun], vocab: &Vocab, authors: &IdTable, schemes: &IdTable) -> Result<Self> {
        let mut examples = Vec::new();
        for run in runs {
            let author = authors.id(run.author.as_deref());
            for (k, q) in run.quatrains.iter().enumerate() {
                let ids: Vec<Vec<TokenId>> = q.verses.iter().map(|v| vocab.encode(v)).collect();
                examples.push(Example {
                    cond: Conditioning::new(author, schemes.id(Some(q.scheme.as_str()))),
                    scheme: q.scheme.clone(),
                    quatrain: Quatrain::from_verses(&ids)?,
                    context: (k > 0).then(|| examples.len() - 1),
                });
            }
        }
        Ok(Dataset { examples })
    }

    /// Line format: `author_id<TAB>scheme<TAB>tokens`, tokens space-joined
    /// with `<eov>`/`<eoq>` markers. A blank line ends a run.
    pub fn write(&self, path: impl AsRef<Path>, vocab: &Vocab) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for (i, ex) in self.examples.iter().enumerate() {
            if i > 0 && ex.context.is_none() {
                writeln!(f)?;
            }
            writeln!(
                f,
                "{}\t{}\t{}",
                ex.cond.author,
                ex.scheme,
                vocab.decode(ex.quatrain.tokens()).join(" ")
            )?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, vocab: &Vocab, schemes: &IdTable) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut examples: Vec<Example> = Vec::new();
        let mut run_start = true;
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                run_start = true;
                continue;
            }
            let bad = |msg: String| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                msg,
            };
            let mut fields = line.split('\t');
            let (Some(a), Some(s), Some(toks), None) = (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected three tab-separated fields".into()));
            };
            let author: usize = a.parse().map_err(|_| bad(format!("bad author id `{a}`")))?;
            let scheme = SchemeLabel::parse(s).map_err(|e| bad(e.to_string()))?;
            let ids: Vec<TokenId> = toks
                .split(' ')
                .map(|t| match t {
                    "<eov>" => EOV,
                    "<eoq>" => EOQ,
                    _ => vocab.id(t),
                })
                .collect();
            let quatrain = Quatrain::from_tokens(ids).map_err(|e| bad(e.to_string()))?;
            examples.push(Example {
                cond: Conditioning::new(author, schemes.id(Some(scheme.as_str()))),
                scheme,
                quatrain,
                context: (!run_start).then(|| examples.len() - 1),
            });
            run_start = false;
        }
        Ok(Dataset { examples })
    }
}

pub const TRAIN_FILE: &str = "train.tsv";
pub const VAL_FILE: &str = "val.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const AUTHORS_FILE: &str = "authors.tsv";
pub const SCHEMES_FILE: &str = "schemes.tsv";
pub const STATS_FILE: &str = "stats.tsv";

/// An encoded dataset directory: three splits plus lookup tables.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub vocab: Vocab,
    pub authors: IdTable,
    pub schemes: IdTable,
}

impl DatasetBundle {
    pub fn from_ingested(ing: &Ingested) -> Result<Self> {
        let enc = |runs: &[QuatrainRun]| Dataset::from_runs(runs, &ing.vocab, &ing.authors, &ing.schemes);
        Ok(DatasetBundle {
            train: enc(&ing.train)?,
            val: enc(&ing.val)?,
            test: enc(&ing.test)?,
            vocab: ing.vocab.clone(),
            authors: ing.authors.clone(),
            schemes: ing.schemes.clone(),
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.train.write(dir.join(TRAIN_FILE), &self.vocab)?;
        self.val.write(dir.join(VAL_FILE), &self.vocab)?;
        self.test.write(dir.join(TEST_FILE), &self.vocab)?;
        self.vocab.save(dir.join(VOCAB_FILE))?;
        self.authors.save(dir.join(AUTHORS_FILE))?;
        self.schemes.save(dir.join(SCHEMES_FILE))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let vocab = Vocab::load(dir.join(VOCAB_FILE))?;
        let authors = IdTable::load(dir.join(AUTHORS_FILE))?;
        let schemes = IdTable::load(dir.join(SCHEMES_FILE))?;
        Ok(DatasetBundle {
            train: Dataset::read(dir.join(TRAIN_FILE), &vocab, &schemes)?,
            val: Dataset::read(dir.join(VAL_FILE), &vocab, &schemes)?,
            test: Dataset::read(dir.join(TEST_FILE), &vocab, &schemes)?,
            vocab,
            authors,
            schemes,
        })
    }

    /// Every character of every vocabulary word, for the char encoder.
    pub fn char_vocab(&self) -> crate::seq::CharVocab {
        crate::seq::CharVocab::from_words(self.vocab.tokens().iter().skip(NUM_RESERVED).map(String::as_str))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rhyme::PhoneticDict;

    fn rhymer() -> Rhymer {
        let d = PhoneticDict::from_str_entries(
            "CHILL  CH IH1 L\nILL  IH1 L\nPLAY  P L EY1\nWAY  W EY1\nSNOW  S N OW1\nAWAY  AH0 W EY1\n\
             DECAY  D IH0 K EY1\nTODAY  T AH0 D EY1\nCAT  K AE1 T\nDOG  D AO1 G\nSUN  S AH1 N\nTREE  T R IY1\n",
        )
        .unwrap();
        Rhymer::new(d)
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Don't stop."), vec!["don't", "stop", "."]);
        assert_eq!(tokenize("\"Well-met,\" she said"), vec!["\"", "well-met", ",", "\"", "she", "said"]);
        assert_eq!(tokenize("— !"), vec!["—", "!"]);
        assert_eq!(tokenize("  "), Vec::<String>::new());
        assert_eq!(tokenize("'Tis"), vec!["'", "tis"]);
    }

    #[test]
    fn parses_blocks_and_headers() {
        let text = "#author: blake\nTyger Tyger, burning bright,\nIn the forests of the night;\nWhat immortal hand or eye,\nCould frame thy fearful symmetry?\n\n\nsecond block\n";
        let r = parse_corpus_str(text, "t").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].author.as_deref(), Some("blake"));
        assert_eq!(r[0].verses.len(), 4);
        assert_eq!(r[0].verses[0], vec!["tyger", "tyger", ",", "burning", "bright", ","]);
        assert_eq!(r[1].author, None);
    }

    #[test]
    fn malformed_headers_report_line() {
        for (text, line) in [("a\n\n#title: x\nb\n", 3), ("#author:\nb\n", 1), ("a\n#author: x\n", 2), ("#scheme: ab\nx\n", 1)] {
            match parse_corpus_str(text, "f") {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn serialize_round_trip() {
        let text = "#author: a b\n#scheme: AABB\nHello, world!\nit's fine\n\nx y\n";
        let r = parse_corpus_str(text, "t").unwrap();
        let s = serialize_corpus(&r);
        assert_eq!(parse_corpus_str(&s, "t").unwrap(), r);
    }

    #[test]
    fn quatrain_split_remainder() {
        assert_eq!(split_quatrains(&[0; 8]).len(), 2);
        assert_eq!(split_quatrains(&[0; 4]).len(), 1);
        assert_eq!(split_quatrains(&[0; 7]).len(), 1);
        assert_eq!(split_quatrains(&[0; 3]).len(), 0);
    }

    fn verses(ends: &[&str]) -> Vec<Vec<String>> {
        ends.iter().map(|e| vec!["the".to_string(), e.to_string(), ",".to_string()]).collect()
    }

    #[test]
    fn scheme_assignment() {
        let r = rhymer();
        assert_eq!(
            assign_scheme(&r, &verses(&["chill", "ill", "play", "way"]), None, true).unwrap(),
            SchemeAssignment::Kept(SchemeLabel::parse("AABB").unwrap())
        );
        assert_eq!(
            assign_scheme(&r, &verses(&["snow", "away", "decay", "today"]), None, true).unwrap(),
            SchemeAssignment::Kept(SchemeLabel::parse("ABBB").unwrap())
        );
        assert_eq!(
            assign_scheme(&r, &verses(&["cat", "dog", "sun", "tree"]), None, true).unwrap(),
            SchemeAssignment::Discarded(DiscardReason::Unrhymed)
        );
        assert!(matches!(
            assign_scheme(&r, &verses(&["cat", "dog", "sun", "tree"]), None, false).unwrap(),
            SchemeAssignment::Kept(_)
        ));
        let mut v = verses(&["chill", "ill", "play", "way"]);
        v[2] = vec!["!".into()];
        assert_eq!(
            assign_scheme(&r, &v, None, true).unwrap(),
            SchemeAssignment::Discarded(DiscardReason::NoEndWord(2))
        );
        assert_eq!(
            assign_scheme(&r, &verses(&["cat", "dog", "sun", "tree"]), Some("CDCD"), true).unwrap(),
            SchemeAssignment::Kept(SchemeLabel::parse("ABAB").unwrap())
        );
    }

    #[test]
    fn vocab_cap_and_ties() {
        let v = Vocab::build(["a"; 5], 100);
        assert_eq!(v.len(), NUM_RESERVED + 1);
        assert_eq!(v.freq()[v.id("a")], 5);
        let v = Vocab::build(["x", "x", "x", "y", "y", "z"], 2);
        assert_eq!(v.id("z"), UNK);
        assert_eq!(v.id("x"), NUM_RESERVED);
        let toks = ["q", "p", "r", "r"];
        let v1 = Vocab::build(toks, 2);
        let v2 = Vocab::build(toks.iter().rev().copied(), 2);
        assert_eq!(v1, v2);
        assert_eq!(v1.id("p"), NUM_RESERVED + 1);
        assert_eq!(v1.id("q"), UNK);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocab::build(["b", "a", "a", "<eov>"], 10);
        v.save(dir.path().join("v")).unwrap();
        assert_eq!(Vocab::load(dir.path().join("v")).unwrap(), v);
    }

    #[test]
    fn author_buckets() {
        let rec = |a: Option<&str>| CorpusRecord {
            author: a.map(String::from),
            scheme: None,
            verses: vec![],
        };
        let recs = vec![rec(Some("b")), rec(Some("a")), rec(Some("b")), rec(None), rec(Some("c"))];
        let t = bucket_authors(&recs, 768);
        assert_eq!(t.id(Some("b")), 1);
        assert_eq!(t.id(Some("a")), 2);
        assert_eq!(t.id(Some("c")), 3);
        assert_eq!(t.id(None), 0);
        let t = bucket_authors(&recs, 1);
        assert_eq!(t.id(Some("a")), 0);
    }

    #[test]
    fn splits() {
        let items: Vec<usize> = (0..10).collect();
        let (a, b, c) = split_dataset(&items, SplitSpec::Ratios([0.8, 0.1, 0.1]), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(split_dataset(&items, SplitSpec::Ratios([0.8, 0.1, 0.1]), 3).unwrap().0, a);
        assert!(split_dataset(&items, SplitSpec::Ratios([0.8, 0.1, 0.2]), 3).is_err());
        assert!(split_dataset(&items[..2], SplitSpec::default(), 3).is_err());
    }

    #[test]
    fn full_scale_split_sizes() {
        let n = 757_891usize;
        let items = vec![(); n];
        let (a, b, c) = split_dataset(&items, SplitSpec::Counts([684_100, 36_006, 37_785]), 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (684_100, 36_006, 37_785));
        let r = [684_100.0 / n as f64, 36_006.0 / n as f64, 37_785.0 / n as f64];
        let (a, b, c) = split_dataset(&items, SplitSpec::Ratios(r), 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (684_100, 36_006, 37_785));
    }

    #[test]
    fn canonical_relabel() {
        assert_eq!(canonicalize("CDCD"), "ABAB");
        assert_eq!(canonicalize("ABBA"), "ABBA");
        assert_eq!(canonicalize("ZZYX"), "AABC");
    }

    #[test]
    fn ingest_and_dataset_round_trip() {
        let text = "#author: x\nthe chill\nan ill\nto play\nthe way\nthe snow\naway\nwe decay\ntoday\nleft\n\n\
                    #author: y\nthe cat\nthe dog\nthe sun\nthe tree\nthe chill\nan ill\nto play\nthe way\n\n\
                    the chill\nan ill\nto play\nthe way\n";
        let recs = parse_corpus_str(text, "t").unwrap();
        let cfg = IngestConfig {
            split: SplitSpec::Counts([1, 1, 1]),
            ..Default::default()
        };
        let ing = ingest(&recs, &rhymer(), &cfg).unwrap();
        let s = &ing.stats;
        assert_eq!((s.quatrains, s.kept, s.discarded_unrhymed, s.remainder_verses), (5, 4, 1, 1));
        assert_eq!(s.scheme_histogram.values().sum::<usize>(), s.kept);
        assert_eq!(s.split_sizes.iter().sum::<usize>(), s.kept);
        let bundle = DatasetBundle::from_ingested(&ing).unwrap();
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        let back = DatasetBundle::load(dir.path()).unwrap();
        assert_eq!(back.train, bundle.train);
        assert_eq!(back.val, bundle.val);
        assert_eq!(back.test, bundle.test);
        assert_eq!(back.schemes, bundle.schemes);
        let all: Vec<&Example> = bundle.train.examples.iter().chain(&bundle.val.examples).chain(&bundle.test.examples).collect();
        assert_eq!(all.iter().filter(|e| e.context.is_some()).count(), 1);
    }

    #[test]
    fn truncation_keeps_markers() {
        let long: Vec<String> = (0..30).map(|_| "w".to_string()).collect();
        let rec = CorpusRecord {
            author: None,
            scheme: Some("AABB".into()),
            verses: vec![long.clone(), long.clone(), long.clone(), long],
        };
        let recs3 = vec![rec.clone(), rec.clone(), rec];
        let cfg3 = IngestConfig {
            split: SplitSpec::Counts([3, 0, 0]),
            ..Default::default()
        };
        let ing = ingest(&recs3, &rhymer(), &cfg3).unwrap();
        let b = DatasetBundle::from_ingested(&ing).unwrap();
        for ex in &b.train.examples {
            assert!(ex.quatrain.len() <= MAX_QUATRAIN_TOKENS);
            assert!(ex.quatrain.is_well_formed());
        }
        assert_eq!(ing.stats.truncated, 3);
    }
}
