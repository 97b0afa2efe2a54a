//! Conditional quatrain generator `p(y_i | y_<i, x, a, r)`.
//!
//! The context `x` (the previous quatrain) is encoded by a bi-LSTM over
//! `[w_j; u_j]`, word embedding plus character-aware vector. A decoder LSTM
//! reads `[w_{i-1}; u_{i-1}; a; r]` and produces `z_i`; additive attention
//! over the encoding gives `c_i`; a GRU over `[c_i; z_i]` gives `q_i`, which
//! is projected to the embedding size and scored against the transposed
//! embedding matrix.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::config::KvConfig;
use crate::corpus::{Dataset, Vocab};
use crate::error::{Error, Result};
use crate::lm::{self, TokenModel};
use crate::nn::{init_normal, Graph, Linear, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::poem::{is_marker, Conditioning, Quatrain, TokenId, BOS, EOQ, EOV, MAX_QUATRAIN_TOKENS, PAD, UNK, VERSES_PER_QUATRAIN};
use crate::sampling::{self, Strategy};
use crate::seq::{AdditiveAttention, BiLstm, CharEncoder, CharVocab, GruCell, LstmCell, LstmState};

/// Dimension presets: the published sizes, a quartered desk size and a
/// tiny size for unit tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelSize {
    Full,
    Desk,
    Tiny,
}

impl std::str::FromStr for ModelSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ModelSize::Full),
            "desk" => Ok(ModelSize::Desk),
            "tiny" => Ok(ModelSize::Tiny),
            _ => Err(Error::Config(format!("unknown model size `{s}`"))),
        }
    }
}

impl std::fmt::Display for ModelSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelSize::Full => "full",
            ModelSize::Desk => "desk",
            ModelSize::Tiny => "tiny",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    pub n_authors: usize,
    pub n_schemes: usize,
    pub n_chars: usize,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    /// Size of the character-aware word vector.
    pub char_out: usize,
    pub hidden: usize,
    pub author_dim: usize,
    pub scheme_dim: usize,
    pub max_len: usize,
    pub use_author: bool,
    pub use_scheme: bool,
    /// Feed `z_{i-1}` instead of `q_{i-1}` as the GRU state.
    pub gru_literal: bool,
}

crate::kv_config!(GeneratorConfig {
    vocab_size,
    n_authors,
    n_schemes,
    n_chars,
    word_dim,
    char_dim,
    char_hidden,
    char_out,
    hidden,
    author_dim,
    scheme_dim,
    max_len,
    use_author,
    use_scheme,
    gru_literal,
});

impl GeneratorConfig {
    pub fn new(size: ModelSize) -> Self {
        let (word_dim, char_dim, char_hidden, char_out, hidden, author_dim, scheme_dim) = match size {
            ModelSize::Full => (300, 32, 64, 100, 512, 128, 256),
            ModelSize::Desk => (75, 16, 32, 25, 128, 32, 64),
            ModelSize::Tiny => (16, 8, 8, 8, 24, 8, 8),
        };
        GeneratorConfig {
            vocab_size: 0,
            n_authors: 1,
            n_schemes: 1,
            n_chars: 2,
            word_dim,
            char_dim,
            char_hidden,
            char_out,
            hidden,
            author_dim,
            scheme_dim,
            max_len: MAX_QUATRAIN_TOKENS,
            use_author: true,
            use_scheme: true,
            gru_literal: false,
        }
    }

    /// Table sizes taken from a vocabulary, author and scheme counts.
    pub fn with_tables(mut self, vocab: &Vocab, n_authors: usize, n_schemes: usize) -> Self {
        self.vocab_size = vocab.len();
        self.n_authors = n_authors.max(1);
        self.n_schemes = n_schemes.max(1);
        self.n_chars = char_vocab(vocab).len();
        self
    }

    fn cond_dim(&self) -> usize {
        self.use_author as usize * self.author_dim + self.use_scheme as usize * self.scheme_dim
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.n_chars,
            self.word_dim,
            self.char_dim,
            self.char_hidden,
            self.char_out,
            self.hidden,
            self.author_dim,
            self.scheme_dim,
            self.max_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Character inventory over every vocabulary string, reserved ones included.
pub fn char_vocab(vocab: &Vocab) -> CharVocab {
    CharVocab::from_words(vocab.tokens().iter().map(String::as_str))
}

/// Parameter layout of the generator; the weights live in a separate store.
#[derive(Clone, Debug)]
pub struct GeneratorNet {
    pub cfg: GeneratorConfig,
    emb: ParamId,
    author: Option<ParamId>,
    scheme: Option<ParamId>,
    chars: CharEncoder,
    encx: BiLstm,
    sentinel: ParamId,
    dec: LstmCell,
    attn: AdditiveAttention,
    gru: GruCell,
    out: Linear,
    out_bias: ParamId,
    char_ids: Vec<Vec<usize>>,
}

/// Decoder recurrent state after step `i`: `z_i` (LSTM) and `q_i` (GRU).
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub z: LstmState,
    pub q: Var,
}

impl GeneratorNet {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: GeneratorConfig, vocab: &Vocab, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let cv = char_vocab(vocab);
        if cfg.vocab_size != vocab.len() || cfg.n_chars != cv.len() {
            return Err(Error::Config(format!(
                "generator expects vocab {} / chars {}, vocabulary has {} / {}",
                cfg.vocab_size,
                cfg.n_chars,
                vocab.len(),
                cv.len()
            )));
        }
        let char_ids = vocab.tokens().iter().map(|t| cv.encode(t)).collect();
        let d = cfg.word_dim;
        let h = cfg.hidden;
        let emb = store.add("gen.emb", init_normal(rng, &[cfg.vocab_size, d], 0.1));
        let author = cfg
            .use_author
            .then(|| store.add("gen.author", init_normal(rng, &[cfg.n_authors, cfg.author_dim], 0.1)));
        let scheme = cfg
            .use_scheme
            .then(|| store.add("gen.scheme", init_normal(rng, &[cfg.n_schemes, cfg.scheme_dim], 0.1)));
        let chars = CharEncoder::new(store, "gen.char", cfg.n_chars, cfg.char_dim, cfg.char_hidden, cfg.char_out, rng);
        let word_in = d + cfg.char_out;
        let encx = BiLstm::new(store, "gen.encx", word_in, h, rng);
        let sentinel = store.add("gen.sentinel", init_normal(rng, &[1, 2 * h], 0.1));
        let dec = LstmCell::new(store, "gen.dec", word_in + cfg.cond_dim(), h, rng);
        let attn = AdditiveAttention::new(store, "gen.attn", h, 2 * h, h, rng);
        let gru = GruCell::new(store, "gen.gru", 2 * h + h, h, rng);
        let out = Linear::new(store, "gen.out", h, d, true, rng);
        let out_bias = store.add("gen.out_bias", Tensor::zeros(&[1, cfg.vocab_size]));
        Ok(GeneratorNet {
            cfg,
            emb,
            author,
            scheme,
            chars,
            encx,
            sentinel,
            dec,
            attn,
            gru,
            out,
            out_bias,
            char_ids,
        })
    }

    fn clamp(&self, t: TokenId) -> TokenId {
        if t < self.cfg.vocab_size {
            t
        } else {
            UNK
        }
    }

    /// Character vectors of every vocabulary entry, `V × char_out`.
    pub fn char_table<T: Scalar>(&self, store: &ParamStore<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let words: Vec<&[usize]> = self.char_ids.iter().map(Vec::as_slice).collect();
        let v = self.chars.encode_batch(&mut g, &words)?;
        Ok(g.value(v).clone())
    }

    /// `[w; u]` rows for several token sequences, sharing one batched
    /// character encoding. With `table`, character vectors are looked up
    /// instead.
    pub fn word_features<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        seqs: &[&[TokenId]],
        table: Option<Var>,
    ) -> Result<Vec<Var>> {
        let emb = g.param(self.emb);
        let (char_src, local): (Var, HashMap<TokenId, usize>) = match table {
            Some(t) => (t, HashMap::new()),
            None => {
                let mut local = HashMap::new();
                let mut words: Vec<&[usize]> = Vec::new();
                for &t in seqs.iter().flat_map(|s| s.iter()) {
                    let t = self.clamp(t);
                    local.entry(t).or_insert_with(|| {
                        words.push(&self.char_ids[t]);
                        words.len() - 1
                    });
                }
                if words.is_empty() {
                    return Ok(Vec::new());
                }
                (self.chars.encode_batch(g, &words)?, local)
            }
        };
        seqs.iter()
            .map(|s| {
                let ids: Vec<TokenId> = s.iter().map(|&t| self.clamp(t)).collect();
                let rows: Vec<usize> = if table.is_some() { ids.clone() } else { ids.iter().map(|t| local[t]).collect() };
                let w = g.embedding(emb, &ids)?;
                let u = g.embedding(char_src, &rows)?;
                g.concat(&[w, u], 1)
            })
            .collect()
    }

    /// Encoder rows `H_x`; an empty context yields the learned sentinel.
    pub fn encode_from_features<T: Scalar>(&self, g: &mut Graph<'_, T>, feats: Option<Var>) -> Result<Var> {
        match feats {
            None => Ok(g.param(self.sentinel)),
            Some(f) => Ok(self.encx.encode(g, f)?.matrix),
        }
    }

    pub fn encode_context<T: Scalar>(&self, g: &mut Graph<'_, T>, x: &[TokenId], table: Option<Var>) -> Result<Var> {
        if x.is_empty() {
            return self.encode_from_features(g, None);
        }
        let f = self.word_features(g, &[x], table)?;
        self.encode_from_features(g, Some(f[0]))
    }

    /// `[a; r]` as one row, or `None` when both flags are off.
    pub fn conditioning<T: Scalar>(&self, g: &mut Graph<'_, T>, cond: Conditioning) -> Result<Option<Var>> {
        let mut parts = Vec::new();
        if let Some(a) = self.author {
            let t = g.param(a);
            let id = if cond.author < self.cfg.n_authors { cond.author } else { 0 };
            parts.push(g.embedding(t, &[id])?);
        }
        if let Some(s) = self.scheme {
            let t = g.param(s);
            let id = if cond.scheme < self.cfg.n_schemes { cond.scheme } else { 0 };
            parts.push(g.embedding(t, &[id])?);
        }
        match parts.len() {
            0 => Ok(None),
            1 => Ok(Some(parts[0])),
            _ => g.concat(&parts, 1).map(Some),
        }
    }

    /// Input projections of the decoder LSTM for each row of `feats`.
    fn decoder_inputs<T: Scalar>(&self, g: &mut Graph<'_, T>, feats: Var, cond: Option<Var>) -> Result<Var> {
        let x = match cond {
            Some(c) => {
                let n = g.value(feats).rows();
                let rep = g.embedding(c, &vec![0; n])?;
                g.concat(&[feats, rep], 1)?
            }
            None => feats,
        };
        self.dec.project_input(g, x)
    }

    pub fn initial_state<T: Scalar>(&self, g: &mut Graph<'_, T>) -> DecoderState {
        let z = self.dec.zero_state(g, 1);
        DecoderState { z, q: z.h }
    }

    /// One decoder step from a projected input row.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        xproj: Var,
        state: DecoderState,
        h: Var,
        keys: Var,
    ) -> Result<DecoderState> {
        let z = self.dec.step_projected(g, xproj, state.z)?;
        let (c, _) = self.attn.attend(g, z.h, h, keys)?;
        let gin = g.concat(&[c, z.h], 1)?;
        let prev = if self.cfg.gru_literal { state.z.h } else { state.q };
        let q = self.gru.step(g, gin, prev)?;
        Ok(DecoderState { z, q })
    }

    /// Vocabulary logits for each row of `qs`.
    pub fn logits<T: Scalar>(&self, g: &mut Graph<'_, T>, qs: Var) -> Result<Var> {
        let p = self.out.forward(g, qs)?;
        let e = g.param(self.emb);
        let l = g.matmul_t(p, e)?;
        let b = g.param(self.out_bias);
        g.add(l, b)
    }

    /// Teacher-forced summed NLL of `y` given `x`; returns the loss and the
    /// number of predicted tokens (`|y|`).
    pub fn nll<T: Scalar>(&self, g: &mut Graph<'_, T>, x: &[TokenId], y: &[TokenId], cond: Conditioning) -> Result<(Var, usize)> {
        if y.is_empty() {
            return Err(Error::InvalidArgument("empty target sequence".into()));
        }
        let mut inputs = Vec::with_capacity(y.len());
        inputs.push(BOS);
        inputs.extend_from_slice(&y[..y.len() - 1]);
        let feats = if x.is_empty() {
            self.word_features(g, &[&inputs], None)?
        } else {
            self.word_features(g, &[&inputs, x], None)?
        };
        let h = self.encode_from_features(g, feats.get(1).copied())?;
        let keys = self.attn.keys(g, h)?;
        let cond = self.conditioning(g, cond)?;
        let proj = self.decoder_inputs(g, feats[0], cond)?;
        let mut state = self.initial_state(g);
        let mut qs = Vec::with_capacity(y.len());
        for i in 0..y.len() {
            let xp = if y.len() == 1 { proj } else { g.slice(proj, 0, i, 1)? };
            state = self.step(g, xp, state, h, keys)?;
            qs.push(state.q);
        }
        let qm = g.concat(&qs, 0)?;
        let logits = self.logits(g, qm)?;
        let lp = g.log_softmax(logits);
        let coords: Vec<(usize, usize)> = y.iter().enumerate().map(|(i, &t)| (i, self.clamp(t))).collect();
        let picked = g.gather(lp, &coords)?;
        let s = g.sum(picked);
        Ok((g.scale(s, -1.0), y.len()))
    }
}

/// Step-by-step decoding against a fixed context.
pub struct DecodeSession<'a, 'p, T: Scalar> {
    net: &'a GeneratorNet,
    g: Graph<'p, T>,
    h: Var,
    keys: Var,
    cond: Option<Var>,
    table: Option<Var>,
    state: DecoderState,
}

impl<'a, 'p, T: Scalar> DecodeSession<'a, 'p, T> {
    pub fn new(
        net: &'a GeneratorNet,
        store: &'p ParamStore<T>,
        x: &[TokenId],
        cond: Conditioning,
        char_table: Option<&Tensor<T>>,
    ) -> Result<Self> {
        let mut g = Graph::new(store);
        let table = char_table.map(|t| g.constant(t.clone()));
        let h = net.encode_context(&mut g, x, table)?;
        let keys = net.attn.keys(&mut g, h)?;
        let cond = net.conditioning(&mut g, cond)?;
        let state = net.initial_state(&mut g);
        Ok(DecodeSession {
            net,
            g,
            h,
            keys,
            cond,
            table,
            state,
        })
    }

    /// Feeds `prev` and returns the next-token distribution.
    pub fn step(&mut self, prev: TokenId) -> Result<Vec<f64>> {
        let g = &mut self.g;
        let f = self.net.word_features(g, &[&[prev]], self.table)?;
        let xp = self.net.decoder_inputs(g, f[0], self.cond)?;
        self.state = self.net.step(g, xp, self.state, self.h, self.keys)?;
        let logits = self.net.logits(g, self.state.q)?;
        let p = g.softmax(logits);
        Ok(g.value(p).data().iter().map(|v| v.f64()).collect())
    }

    pub fn attention_rows(&self) -> usize {
        self.g.value(self.h).rows()
    }
}

/// Tracks verse structure while sampling so that markers only appear
/// after a non-empty verse and the quatrain marker only closes the fourth.
#[derive(Clone, Copy, Debug, Default)]
pub struct StructureMask {
    verses: usize,
    verse_len: usize,
}

impl StructureMask {
    pub fn apply(&self, probs: &mut [f64]) {
        for t in [PAD, UNK, BOS] {
            probs[t] = 0.0;
        }
        if self.verse_len == 0 {
            probs[EOV] = 0.0;
            probs[EOQ] = 0.0;
        } else if self.verses + 1 < VERSES_PER_QUATRAIN {
            probs[EOQ] = 0.0;
        } else {
            probs[EOV] = 0.0;
        }
    }

    pub fn push(&mut self, t: TokenId) {
        if is_marker(t) {
            self.verses += 1;
            self.verse_len = 0;
        } else {
            self.verse_len += 1;
        }
    }
}

#[derive(Clone, Debug)]
pub struct DraftOptions {
    pub strategy: Strategy,
    pub max_len: usize,
    pub retries: usize,
    /// Mask out verse markers that would break the four-verse layout.
    pub constrain_structure: bool,
}

crate::kv_config!(DraftOptions {
    strategy,
    max_len,
    retries,
    constrain_structure
});

impl Default for DraftOptions {
    fn default() -> Self {
        DraftOptions {
            strategy: Strategy::Nucleus(0.9),
            max_len: MAX_QUATRAIN_TOKENS,
            retries: 5,
            constrain_structure: true,
        }
    }
}

/// Samples one draft; a sequence that does not close four verses within
/// `max_len` tokens is reported as malformed.
pub fn sample_draft<T: Scalar, R: Rng>(
    net: &GeneratorNet,
    store: &ParamStore<T>,
    x: &[TokenId],
    cond: Conditioning,
    opts: &DraftOptions,
    char_table: Option<&Tensor<T>>,
    rng: &mut R,
) -> Result<Quatrain> {
    let mut session = DecodeSession::new(net, store, x, cond, char_table)?;
    let mut out = Vec::new();
    let mut mask = StructureMask::default();
    let mut prev = BOS;
    while out.len() < opts.max_len {
        let mut probs = session.step(prev)?;
        if opts.constrain_structure {
            mask.apply(&mut probs);
        } else {
            probs[BOS] = 0.0;
            probs[PAD] = 0.0;
        }
        let t = sampling::sample_token(&probs, opts.strategy, rng)?;
        out.push(t);
        mask.push(t);
        if t == EOQ {
            break;
        }
        prev = t;
    }
    let len = out.len();
    Quatrain::from_tokens(out).map_err(|_| Error::MalformedDraft(len))
}

/// [`sample_draft`] with up to `opts.retries` further attempts.
pub fn generate_draft<T: Scalar, R: Rng>(
    net: &GeneratorNet,
    store: &ParamStore<T>,
    x: &[TokenId],
    cond: Conditioning,
    opts: &DraftOptions,
    char_table: Option<&Tensor<T>>,
    rng: &mut R,
) -> Result<Quatrain> {
    let mut last = Error::MalformedDraft(0);
    for attempt in 0..=opts.retries {
        match sample_draft(net, store, x, cond, opts, char_table, rng) {
            Ok(q) => return Ok(q),
            Err(e @ Error::MalformedDraft(_)) => {
                log::debug!("malformed draft on attempt {attempt}");
                last = e;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Training pair: context quatrain tokens (possibly empty) and target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenExample {
    pub context: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub cond: Conditioning,
}

pub fn gen_examples(ds: &Dataset) -> Vec<GenExample> {
    (0..ds.len())
        .map(|i| GenExample {
            context: ds.context_tokens(i).to_vec(),
            target: ds.examples[i].quatrain.tokens().to_vec(),
            cond: ds.examples[i].cond,
        })
        .collect()
}

/// Generator weights with their layout.
#[derive(Clone, Debug)]
pub struct Generator {
    pub net: GeneratorNet,
    pub store: ParamStore<f32>,
    pub steps: u64,
}

pub const GENERATOR_STEM: &str = "gen";

impl Generator {
    pub fn new(cfg: GeneratorConfig, vocab: &Vocab, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = GeneratorNet::new(&mut store, cfg, vocab, &mut crate::rng_from_seed(seed))?;
        Ok(Generator { net, store, steps: 0 })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        lm::save_model(&self.store, &self.net.cfg, self.steps, dir, GENERATOR_STEM)
    }

    pub fn load(dir: &Path, vocab: &Vocab) -> Result<Self> {
        let mut cfg = GeneratorConfig::new(ModelSize::Tiny);
        let steps = lm::load_model_config(&mut cfg, dir, GENERATOR_STEM)?;
        let mut gen = Generator::new(cfg, vocab, 0)?;
        lm::load_weights(&mut gen.store, dir, GENERATOR_STEM)?;
        gen.steps = steps;
        Ok(gen)
    }

    pub fn char_table(&self) -> Result<Tensor<f32>> {
        self.net.char_table(&self.store)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.net.cfg
    }

    pub fn config_text(&self) -> String {
        self.net.cfg.to_text()
    }
}

impl TokenModel for Generator {
    type Item = GenExample;

    fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    fn nll(&self, g: &mut Graph<'_, f32>, item: &GenExample) -> Result<(Var, usize)> {
        self.net.nll(g, &item.context, &item.target, item.cond)
    }
}
