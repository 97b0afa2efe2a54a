//! Revision environments: poem reconstruction with an oracle prompter, and
//! rhyme matching with a learned prompter.
//!
//! A state is the current quatrain plus its conditioning. Every step costs
//! -1 unless it reaches the goal, which pays +1 and ends the episode.
//! Episodes also end at the step cap.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng as _;

use crate::corpus::{IdTable, Vocab};
use crate::error::{Error, Result};
use crate::generator::{generate_draft, DraftOptions, Generator};
use crate::nn::Tensor;
use crate::poem::{Conditioning, Quatrain, TokenId, EOQ, EOV, NUM_RESERVED, UNK};
use crate::prompter::ReplacementSource;
use crate::rhyme::{end_word, Rhymer, SchemeLabel};
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    /// Revise word `j` (0-based, verse markers excluded).
    Replace(usize),
    Nothing,
}

impl Action {
    /// Detector action id: `< max_positions` edits that word, anything else
    /// is do-nothing.
    pub fn from_index(id: usize, max_positions: usize) -> Self {
        if id < max_positions {
            Action::Replace(id)
        } else {
            Action::Nothing
        }
    }

    pub fn index(self, max_positions: usize) -> usize {
        match self {
            Action::Replace(j) => j,
            Action::Nothing => max_positions,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub poem: Quatrain,
    pub cond: Conditioning,
    pub t: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edit {
    pub position: usize,
    pub old: TokenId,
    pub new: TokenId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub goal: bool,
    pub edit: Option<Edit>,
}

pub trait Environment {
    fn reset(&mut self, rng: &mut Rng) -> Result<&EnvState>;
    fn step(&mut self, action: Action, rng: &mut Rng) -> Result<StepOutcome>;
    fn state(&self) -> &EnvState;
    fn max_episode_len(&self) -> usize;
}

fn outcome(goal: bool, t: usize, max_len: usize, edit: Option<Edit>) -> StepOutcome {
    StepOutcome {
        reward: if goal { 1.0 } else { -1.0 },
        done: goal || t >= max_len,
        goal,
        edit,
    }
}

fn check_action(poem: &Quatrain, action: Action) -> Result<()> {
    match action {
        Action::Replace(j) if j >= poem.num_words() => Err(Error::Environment(format!(
            "position {j} outside a poem of {} words",
            poem.num_words()
        ))),
        _ => Ok(()),
    }
}

/// Unigram sampler over non-reserved vocabulary ids.
#[derive(Clone, Debug)]
pub struct UnigramTable {
    ids: Vec<TokenId>,
    dist: WeightedIndex<f64>,
}

impl UnigramTable {
    pub fn new(weights: &[(TokenId, f64)]) -> Result<Self> {
        let kept: Vec<(TokenId, f64)> = weights.iter().copied().filter(|&(_, w)| w > 0.0).collect();
        if kept.len() < 2 {
            return Err(Error::InvalidArgument("unigram table needs two tokens with positive weight".into()));
        }
        let dist = WeightedIndex::new(kept.iter().map(|&(_, w)| w))
            .map_err(|e| Error::InvalidArgument(format!("unigram table: {e}")))?;
        Ok(UnigramTable {
            ids: kept.iter().map(|&(t, _)| t).collect(),
            dist,
        })
    }

    pub fn from_vocab(vocab: &Vocab) -> Result<Self> {
        let w: Vec<(TokenId, f64)> = vocab
            .freq()
            .iter()
            .enumerate()
            .skip(NUM_RESERVED)
            .map(|(i, &f)| (i, f as f64))
            .collect();
        UnigramTable::new(&w)
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> TokenId {
        self.ids[self.dist.sample(rng)]
    }

    /// A draw different from `not`.
    pub fn sample_other<R: rand::Rng>(&self, not: TokenId, rng: &mut R) -> TokenId {
        loop {
            let t = self.sample(rng);
            if t != not {
                return t;
            }
        }
    }
}

/// Replaces `k` distinct words with frequency-weighted draws that differ from
/// the originals. Returns the corrupted poem and the sorted positions.
pub fn corrupt_poem<R: rand::Rng>(poem: &Quatrain, k: usize, table: &UnigramTable, rng: &mut R) -> Result<(Quatrain, Vec<usize>)> {
    let n = poem.num_words();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot corrupt {k} of {n} words")));
    }
    let mut positions = index::sample(rng, n, k).into_vec();
    positions.sort_unstable();
    let mut out = poem.clone();
    for &j in &positions {
        let old = poem.word(j).expect("position in range");
        out.replace_word(j, table.sample_other(old, rng))?;
    }
    Ok((out, positions))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionConfig {
    pub corruptions: usize,
    pub max_episode_len: usize,
}

crate::kv_config!(ReconstructionConfig {
    corruptions,
    max_episode_len
});

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            corruptions: 1,
            max_episode_len: 10,
        }
    }
}

/// Restore a corrupted poem. The oracle prompter writes back the original
/// word at whatever position is chosen.
#[derive(Clone, Debug)]
pub struct ReconstructionEnv {
    pub cfg: ReconstructionConfig,
    pool: Vec<(Quatrain, Conditioning)>,
    table: UnigramTable,
    original: usize,
    state: EnvState,
}

impl ReconstructionEnv {
    pub fn new(pool: Vec<(Quatrain, Conditioning)>, table: UnigramTable, cfg: ReconstructionConfig) -> Result<Self> {
        let (first, cond) = pool
            .first()
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("reconstruction pool is empty".into()))?;
        if cfg.corruptions == 0 || cfg.max_episode_len == 0 {
            return Err(Error::Config("corruptions and episode length must be positive".into()));
        }
        if let Some((q, _)) = pool.iter().find(|(q, _)| q.num_words() < cfg.corruptions) {
            return Err(Error::Config(format!(
                "poem with {} words cannot take {} corruptions",
                q.num_words(),
                cfg.corruptions
            )));
        }
        Ok(ReconstructionEnv {
            cfg,
            pool,
            table,
            original: 0,
            state: EnvState { poem: first, cond, t: 0 },
        })
    }

    pub fn original(&self) -> &Quatrain {
        &self.pool[self.original].0
    }

    pub fn pool(&self) -> &[(Quatrain, Conditioning)] {
        &self.pool
    }
}

impl Environment for ReconstructionEnv {
    fn reset(&mut self, rng: &mut Rng) -> Result<&EnvState> {
        self.original = rng.random_range(0..self.pool.len());
        let (q, cond) = &self.pool[self.original];
        let (poem, _) = corrupt_poem(q, self.cfg.corruptions, &self.table, rng)?;
        self.state = EnvState { poem, cond: *cond, t: 0 };
        Ok(&self.state)
    }

    fn step(&mut self, action: Action, _rng: &mut Rng) -> Result<StepOutcome> {
        check_action(&self.state.poem, action)?;
        let mut edit = None;
        if let Action::Replace(j) = action {
            let new = self.pool[self.original].0.word(j).expect("same layout");
            let old = self.state.poem.replace_word(j, new)?;
            edit = Some(Edit { position: j, old, new });
        }
        self.state.t += 1;
        let goal = self.state.poem == self.pool[self.original].0;
        Ok(outcome(goal, self.state.t, self.cfg.max_episode_len, edit))
    }

    fn state(&self) -> &EnvState {
        &self.state
    }

    fn max_episode_len(&self) -> usize {
        self.cfg.max_episode_len
    }
}

/// Produces starting drafts for the rhyme environment.
pub trait DraftSource {
    fn draft(&mut self, cond: Conditioning, rng: &mut Rng) -> Result<Quatrain>;
}

/// Unconditioned-context drafts from a trained generator.
pub struct GeneratorDrafts {
    pub generator: Generator,
    pub opts: DraftOptions,
    char_table: Option<Tensor<f32>>,
}

impl GeneratorDrafts {
    pub fn new(generator: Generator, opts: DraftOptions) -> Result<Self> {
        let char_table = Some(generator.char_table()?);
        Ok(GeneratorDrafts {
            generator,
            opts,
            char_table,
        })
    }
}

impl DraftSource for GeneratorDrafts {
    fn draft(&mut self, cond: Conditioning, rng: &mut Rng) -> Result<Quatrain> {
        let g = &self.generator;
        generate_draft(&g.net, &g.store, &[], cond, &self.opts, self.char_table.as_ref(), rng)
    }
}

/// Target scheme with its id in the scheme table.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeTarget {
    pub id: usize,
    pub label: SchemeLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RhymeConfig {
    pub max_episode_len: usize,
    /// Redraws allowed when a starting draft already matches its target.
    pub start_resamples: usize,
}

crate::kv_config!(RhymeConfig {
    max_episode_len,
    start_resamples
});

impl Default for RhymeConfig {
    fn default() -> Self {
        RhymeConfig {
            max_episode_len: 30,
            start_resamples: 20,
        }
    }
}

pub enum DraftMode {
    /// Fixed drafts with the conditioning they were generated under; the
    /// scheme id names the target.
    Pool(Vec<(Quatrain, Conditioning)>),
    /// A fresh draft per reset under a random author and target.
    Dynamic {
        source: Box<dyn DraftSource>,
        authors: Vec<usize>,
    },
}

impl fmt::Debug for DraftMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DraftMode::Pool(p) => write!(f, "Pool({})", p.len()),
            DraftMode::Dynamic { authors, .. } => write!(f, "Dynamic({} authors)", authors.len()),
        }
    }
}

/// Revise a generated draft until its end words match a target scheme.
pub struct RhymeEnv {
    pub cfg: RhymeConfig,
    mode: DraftMode,
    targets: Vec<SchemeTarget>,
    prompter: Box<dyn ReplacementSource>,
    rhymer: Rhymer,
    vocab: Vocab,
    target: SchemeLabel,
    start_is_goal: bool,
    state: EnvState,
}

impl fmt::Debug for RhymeEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RhymeEnv")
            .field("cfg", &self.cfg)
            .field("mode", &self.mode)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

/// End words of the four verses, decoded through `vocab`.
pub fn end_words(poem: &Quatrain, vocab: &Vocab) -> Result<Vec<String>> {
    poem.verses()
        .iter()
        .map(|v| end_word(&vocab.decode(v)).map(str::to_string))
        .collect()
}

/// Whether `poem` satisfies `target`; a verse without a word never does.
pub fn poem_matches(rhymer: &Rhymer, vocab: &Vocab, poem: &Quatrain, target: &SchemeLabel) -> bool {
    match end_words(poem, vocab) {
        Ok(w) => rhymer.matches_scheme(&w, target).unwrap_or(false),
        Err(_) => false,
    }
}

impl RhymeEnv {
    pub fn new(
        mode: DraftMode,
        targets: Vec<SchemeTarget>,
        prompter: Box<dyn ReplacementSource>,
        rhymer: Rhymer,
        vocab: Vocab,
        cfg: RhymeConfig,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Config("rhyme environment needs target schemes".into()));
        }
        if targets.iter().any(|t| t.label.len() != 4) {
            return Err(Error::Config("rhyme targets must be four-verse schemes".into()));
        }
        match &mode {
            DraftMode::Pool(p) if p.is_empty() => return Err(Error::Config("draft pool is empty".into())),
            DraftMode::Pool(p) => {
                if let Some((_, c)) = p.iter().find(|(_, c)| !targets.iter().any(|t| t.id == c.scheme)) {
                    return Err(Error::Config(format!("pool draft targets unknown scheme id {}", c.scheme)));
                }
            }
            DraftMode::Dynamic { authors, .. } if authors.is_empty() => {
                return Err(Error::Config("dynamic mode needs author ids".into()))
            }
            DraftMode::Dynamic { .. } => {}
        }
        if cfg.max_episode_len == 0 {
            return Err(Error::Config("episode length must be positive".into()));
        }
        let target = targets[0].label.clone();
        let state = EnvState {
            poem: Quatrain::from_tokens(vec![UNK, EOV, UNK, EOV, UNK, EOV, UNK, EOQ])?,
            cond: Conditioning::default(),
            t: 0,
        };
        Ok(RhymeEnv {
            cfg,
            mode,
            targets,
            prompter,
            rhymer,
            vocab,
            target,
            start_is_goal: false,
            state,
        })
    }

    pub fn target(&self) -> &SchemeLabel {
        &self.target
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn rhymer(&self) -> &Rhymer {
        &self.rhymer
    }

    fn label_of(&self, scheme: usize) -> &SchemeLabel {
        &self.targets.iter().find(|t| t.id == scheme).expect("validated target").label
    }

    fn draw_start(&mut self, rng: &mut Rng) -> Result<(Quatrain, Conditioning)> {
        match &mut self.mode {
            DraftMode::Pool(p) => Ok(p[rng.random_range(0..p.len())].clone()),
            DraftMode::Dynamic { source, authors } => {
                let author = authors[rng.random_range(0..authors.len())];
                let scheme = self.targets[rng.random_range(0..self.targets.len())].id;
                let cond = Conditioning::new(author, scheme);
                Ok((source.draft(cond, rng)?, cond))
            }
        }
    }

    /// Sets an explicit start state, for revising a given draft.
    pub fn start_from(&mut self, poem: Quatrain, cond: Conditioning, target: SchemeLabel) {
        self.start_is_goal = poem_matches(&self.rhymer, &self.vocab, &poem, &target);
        self.target = target;
        self.state = EnvState { poem, cond, t: 0 };
    }

    pub fn start_is_goal(&self) -> bool {
        self.start_is_goal
    }
}

impl Environment for RhymeEnv {
    fn reset(&mut self, rng: &mut Rng) -> Result<&EnvState> {
        let mut attempt = 0;
        loop {
            let (poem, cond) = self.draw_start(rng)?;
            let target = self.label_of(cond.scheme).clone();
            let goal = poem_matches(&self.rhymer, &self.vocab, &poem, &target);
            if !goal || attempt >= self.cfg.start_resamples {
                self.start_from(poem, cond, target);
                return Ok(&self.state);
            }
            attempt += 1;
        }
    }

    fn step(&mut self, action: Action, rng: &mut Rng) -> Result<StepOutcome> {
        check_action(&self.state.poem, action)?;
        self.state.t += 1;
        if self.start_is_goal {
            // A draft that already matches after every redraw ends at once.
            self.start_is_goal = false;
            return Ok(outcome(true, self.state.t, self.cfg.max_episode_len, None));
        }
        let mut edit = None;
        if let Action::Replace(j) = action {
            let flat = self.state.poem.word_positions()[j];
            let new = self.prompter.propose(self.state.poem.tokens(), flat, self.state.cond, rng)?;
            let old = self.state.poem.replace_word(j, new)?;
            edit = Some(Edit { position: j, old, new });
        }
        let goal = poem_matches(&self.rhymer, &self.vocab, &self.state.poem, &self.target);
        Ok(outcome(goal, self.state.t, self.cfg.max_episode_len, edit))
    }

    fn state(&self) -> &EnvState {
        &self.state
    }

    fn max_episode_len(&self) -> usize {
        self.cfg.max_episode_len
    }
}

/// The four-verse schemes of a scheme table, as revision targets.
pub fn scheme_targets(schemes: &IdTable) -> Vec<SchemeTarget> {
    schemes
        .names()
        .iter()
        .enumerate()
        .filter(|(id, _)| *id > 0)
        .filter_map(|(id, name)| {
            SchemeLabel::parse(name)
                .ok()
                .filter(|l| l.len() == 4)
                .map(|label| SchemeTarget { id, label })
        })
        .collect()
}

/// `n` drafts, each under a random author id below `n_authors` and a random
/// target.
pub fn draft_pool(
    generator: &Generator,
    n_authors: usize,
    targets: &[SchemeTarget],
    n: usize,
    opts: &DraftOptions,
    rng: &mut Rng,
) -> Result<Vec<(Quatrain, Conditioning)>> {
    if targets.is_empty() {
        return Err(Error::Config("no four-verse target schemes".into()));
    }
    let table = generator.char_table()?;
    (0..n)
        .map(|_| {
            let author = rng.random_range(0..n_authors.max(1));
            let scheme = targets[rng.random_range(0..targets.len())].id;
            let cond = Conditioning::new(author, scheme);
            let q = generate_draft(&generator.net, &generator.store, &[], cond, opts, Some(&table), rng)?;
            Ok((q, cond))
        })
        .collect()
}

/// One line of an exported episode trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub action: Action,
    pub edit: Option<Edit>,
    pub reward: f64,
}

impl TraceStep {
    /// `step<TAB>action<TAB>position<TAB>old<TAB>new<TAB>reward`, with `-`
    /// for missing fields.
    pub fn to_line(&self, vocab: &Vocab) -> String {
        let action = match self.action {
            Action::Replace(j) => j.to_string(),
            Action::Nothing => "nothing".into(),
        };
        let (pos, old, new) = match self.edit {
            Some(e) => (e.position.to_string(), vocab.token(e.old).to_string(), vocab.token(e.new).to_string()),
            None => ("-".into(), "-".into(), "-".into()),
        };
        format!("{}\t{action}\t{pos}\t{old}\t{new}\t{}", self.step, self.reward)
    }
}

pub const TRACE_HEADER: &str = "step\taction\tposition\told\tnew\treward";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth;

    fn table() -> UnigramTable {
        UnigramTable::new(&(5..40).map(|t| (t, 1.0 + t as f64)).collect::<Vec<_>>()).unwrap()
    }

    fn poem(n_per_verse: usize) -> Quatrain {
        let mut t = Vec::new();
        for v in 0..4 {
            t.extend((0..n_per_verse).map(|i| 5 + v * n_per_verse + i));
            t.push(if v == 3 { EOQ } else { EOV });
        }
        Quatrain::from_tokens(t).unwrap()
    }

    #[test]
    fn corruption_changes_exactly_k_positions() {
        let mut rng = crate::rng_from_seed(1);
        let q = poem(5);
        for k in [1, 3] {
            for _ in 0..50 {
                let (c, pos) = corrupt_poem(&q, k, &table(), &mut rng).unwrap();
                let diff: Vec<usize> = (0..q.num_words()).filter(|&j| q.word(j) != c.word(j)).collect();
                assert_eq!(diff, pos);
                assert_eq!(c.len(), q.len());
            }
        }
        assert!(corrupt_poem(&q, 21, &table(), &mut rng).is_err());
    }

    #[test]
    fn corruption_follows_frequencies() {
        let t = UnigramTable::new(&[(5, 0.9), (6, 0.1)]).unwrap();
        let q = Quatrain::from_tokens(vec![7, EOV, 7, EOV, 7, EOV, 7, EOQ]).unwrap();
        let mut rng = crate::rng_from_seed(2);
        let n = 100_000;
        let mut a = 0;
        for _ in 0..n {
            let (c, pos) = corrupt_poem(&q, 1, &t, &mut rng).unwrap();
            if c.word(pos[0]) == Some(5) {
                a += 1;
            }
        }
        assert!((a as f64 / n as f64 - 0.9).abs() < 0.01);
    }

    fn recon(k: usize) -> ReconstructionEnv {
        ReconstructionEnv::new(
            vec![(poem(5), Conditioning::new(1, 1))],
            table(),
            ReconstructionConfig { corruptions: k, max_episode_len: 10 },
        )
        .unwrap()
    }

    #[test]
    fn fixing_the_corrupted_word_wins_at_once() {
        let mut env = recon(1);
        let mut rng = crate::rng_from_seed(3);
        env.reset(&mut rng).unwrap();
        let bad = (0..20).find(|&j| env.state().poem.word(j) != env.original().word(j)).unwrap();
        let out = env.step(Action::Replace(bad), &mut rng).unwrap();
        assert_eq!((out.reward, out.done, out.goal), (1.0, true, true));
        assert_eq!(env.state().poem, *env.original());
    }

    #[test]
    fn wrong_positions_fail_after_cap() {
        let mut env = recon(1);
        let mut rng = crate::rng_from_seed(4);
        env.reset(&mut rng).unwrap();
        let start = env.state().poem.clone();
        let good = (0..20).find(|&j| env.state().poem.word(j) == env.original().word(j)).unwrap();
        let mut total = 0.0;
        for t in 0..10 {
            let out = if t % 2 == 0 {
                env.step(Action::Replace(good), &mut rng).unwrap()
            } else {
                env.step(Action::Nothing, &mut rng).unwrap()
            };
            total += out.reward;
            assert_eq!(out.done, t == 9);
            assert_eq!(env.state().poem, start);
        }
        assert_eq!(total, -10.0);
        assert!(env.step(Action::Replace(20), &mut rng).is_err());
    }

    #[test]
    fn k_corruptions_fixed_in_k_steps() {
        let mut env = recon(3);
        let mut rng = crate::rng_from_seed(5);
        env.reset(&mut rng).unwrap();
        let bad: Vec<usize> = (0..20).filter(|&j| env.state().poem.word(j) != env.original().word(j)).collect();
        let total: f64 = bad.iter().map(|&j| env.step(Action::Replace(j), &mut rng).unwrap().reward).sum();
        assert_eq!(total, -1.0);
    }

    struct Fixed(TokenId);

    impl ReplacementSource for Fixed {
        fn propose(&mut self, _: &[TokenId], _: usize, _: Conditioning, _: &mut Rng) -> Result<TokenId> {
            Ok(self.0)
        }
    }

    fn desk_poem(vocab: &Vocab, lines: [&str; 4]) -> Quatrain {
        let verses: Vec<Vec<TokenId>> = lines
            .iter()
            .map(|l| vocab.encode(&l.split(' ').collect::<Vec<_>>()))
            .collect();
        Quatrain::from_verses(&verses).unwrap()
    }

    fn desk_vocab() -> Vocab {
        let words = "the cold and chill ill play way night light snow away decay today brood ache";
        Vocab::build(words.split(' '), 100)
    }

    #[test]
    fn rhyme_step_follows_the_table_example() {
        let vocab = desk_vocab();
        let draft = desk_poem(&vocab, ["the cold and ache", "the ill", "the play", "the night brood"]);
        let aabb = SchemeTarget { id: 1, label: SchemeLabel::parse("AABB").unwrap() };
        let mut env = RhymeEnv::new(
            DraftMode::Pool(vec![(draft.clone(), Conditioning::new(0, 1))]),
            vec![aabb],
            Box::new(Fixed(vocab.id("chill"))),
            synth::desk_rhymer(),
            vocab.clone(),
            RhymeConfig::default(),
        )
        .unwrap();
        let mut rng = crate::rng_from_seed(6);
        env.reset(&mut rng).unwrap();
        assert_eq!(env.state().t, 0);
        let out = env.step(Action::Replace(3), &mut rng).unwrap();
        assert_eq!(out.reward, -1.0);
        assert_eq!(out.edit.unwrap().old, vocab.id("ache"));
        env.prompter = Box::new(Fixed(vocab.id("way")));
        let out = env.step(Action::Replace(10), &mut rng).unwrap();
        assert!(out.goal && out.done && out.reward == 1.0);
        let words = end_words(&env.state().poem, &vocab).unwrap();
        assert_eq!(words, ["chill", "ill", "play", "way"]);
    }

    #[test]
    fn rhyme_episode_caps_at_thirty() {
        let vocab = desk_vocab();
        let draft = desk_poem(&vocab, ["the snow", "the away", "the decay", "the today"]);
        let mut env = RhymeEnv::new(
            DraftMode::Pool(vec![(draft, Conditioning::new(0, 2))]),
            vec![SchemeTarget { id: 2, label: SchemeLabel::parse("AABB").unwrap() }],
            Box::new(Fixed(vocab.id("the"))),
            synth::desk_rhymer(),
            vocab,
            RhymeConfig::default(),
        )
        .unwrap();
        let mut rng = crate::rng_from_seed(7);
        env.reset(&mut rng).unwrap();
        let mut total = 0.0;
        for t in 0..30 {
            let out = env.step(Action::Replace(0), &mut rng).unwrap();
            total += out.reward;
            assert_eq!(out.done, t == 29);
        }
        assert_eq!(total, -30.0);
    }

    #[test]
    fn matching_start_is_redrawn_then_accepted() {
        let vocab = desk_vocab();
        let good = desk_poem(&vocab, ["the chill", "the ill", "the play", "the way"]);
        let mut env = RhymeEnv::new(
            DraftMode::Pool(vec![(good, Conditioning::new(0, 1))]),
            vec![SchemeTarget { id: 1, label: SchemeLabel::parse("AABB").unwrap() }],
            Box::new(Fixed(vocab.id("the"))),
            synth::desk_rhymer(),
            vocab,
            RhymeConfig::default(),
        )
        .unwrap();
        let mut rng = crate::rng_from_seed(8);
        env.reset(&mut rng).unwrap();
        assert!(env.start_is_goal());
        let out = env.step(Action::Nothing, &mut rng).unwrap();
        assert!(out.goal && out.done);
    }
}
